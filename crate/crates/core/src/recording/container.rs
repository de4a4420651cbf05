//! Recording container: `"EEGR" | u32 header_len | header text | f32-LE payload`.
//!
//! The header is UTF-8 text, one `key: value` per line:
//!
//! ```text
//! format_version: 1
//! sample_rate_hz: 1000
//! n_channels: 2
//! n_samples: 3
//! channels:
//!   0 Fz ScalpEeg
//!   1 M1 Mastoid
//! triggers: []
//! ```
//!
//! A non-empty trigger list is written as `triggers: <count>` followed by one
//! `  <code> <sample_index> <label|->` line per trigger. The payload holds
//! `n_samples` frames of `n_channels` little-endian `f32` values each.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ChannelInfo, ClassLabel, Recording, RecordingError, Result, TriggerCode, TriggerEvent};

pub const MAGIC: &[u8; 4] = b"EEGR";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    encode_recording(rec, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_recording(path: impl AsRef<Path>) -> Result<Recording> {
    let file = File::open(path)?;
    decode_recording(&mut BufReader::new(file))
}

pub fn encode_recording<W: Write>(rec: &Recording, out: &mut W) -> Result<()> {
    let header = render_header(rec);
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    let n = rec.n_samples();
    let mut frame = Vec::with_capacity(rec.n_channels() * 4);
    for t in 0..n {
        frame.clear();
        for c in 0..rec.n_channels() {
            frame.extend_from_slice(&rec.data()[c * n + t].to_le_bytes());
        }
        out.write_all(&frame)?;
    }
    Ok(())
}

pub fn decode_recording<R: Read>(input: &mut R) -> Result<Recording> {
    let mut magic = [0u8; 4];
    read_exact_or(input, &mut magic)?;
    if &magic != MAGIC {
        return Err(RecordingError::BadMagic);
    }
    let mut len = [0u8; 4];
    read_exact_or(input, &mut len)?;
    let header_len = u32::from_le_bytes(len) as usize;
    let mut header = Vec::new();
    input.take(header_len as u64).read_to_end(&mut header)?;
    if header.len() != header_len {
        return Err(RecordingError::Header(format!(
            "header declares {header_len} bytes, only {} present",
            header.len()
        )));
    }
    let header = String::from_utf8(header).map_err(|_| RecordingError::Header("header is not UTF-8".into()))?;
    let parsed = parse_header(&header)?;

    let n_ch = parsed.channels.len();
    let expected = n_ch * parsed.n_samples * 4;
    let mut payload = Vec::with_capacity(expected);
    input.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(RecordingError::Truncated { expected, found: payload.len() });
    }
    let mut data = vec![0f32; n_ch * parsed.n_samples];
    for (i, bytes) in payload.chunks_exact(4).enumerate() {
        let (t, c) = (i / n_ch, i % n_ch);
        data[c * parsed.n_samples + t] = f32::from_le_bytes(bytes.try_into().unwrap());
    }
    Recording::new(parsed.channels, parsed.sample_rate_hz, parsed.n_samples, data, parsed.triggers)
}

fn read_exact_or<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => RecordingError::Header("file ends inside the preamble".into()),
        _ => RecordingError::Io(e),
    })
}

fn render_header(rec: &Recording) -> String {
    let mut h = String::new();
    h.push_str(&format!("format_version: {FORMAT_VERSION}\n"));
    h.push_str(&format!("sample_rate_hz: {}\n", rec.sample_rate_hz()));
    h.push_str(&format!("n_channels: {}\n", rec.n_channels()));
    h.push_str(&format!("n_samples: {}\n", rec.n_samples()));
    h.push_str("channels:\n");
    for ch in rec.channels() {
        h.push_str(&format!("  {} {} {}\n", ch.index, ch.name, ch.role.as_str()));
    }
    if rec.triggers().is_empty() {
        h.push_str("triggers: []\n");
    } else {
        h.push_str(&format!("triggers: {}\n", rec.triggers().len()));
        for t in rec.triggers() {
            let label = t.label.map_or_else(|| "-".to_string(), |l| l.to_string());
            h.push_str(&format!("  {} {} {}\n", t.code, t.sample_index, label));
        }
    }
    h
}

struct Header {
    sample_rate_hz: f64,
    n_samples: usize,
    channels: Vec<ChannelInfo>,
    triggers: Vec<TriggerEvent>,
}

fn parse_header(text: &str) -> Result<Header> {
    let bad = |msg: String| RecordingError::Header(msg);
    let mut lines = text.lines().peekable();

    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
        let (k, v) = line.split_once(':').ok_or_else(|| bad(format!("expected `{key}:`, got {line:?}")))?;
        if k.trim() != key {
            return Err(bad(format!("expected `{key}:`, got {line:?}")));
        }
        Ok(v.trim().to_string())
    };

    let version: u32 = field("format_version")?.parse().map_err(|_| bad("unparsable format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(RecordingError::Version { found: version, supported: FORMAT_VERSION });
    }
    let sample_rate_hz: f64 = field("sample_rate_hz")?.parse().map_err(|_| bad("unparsable sample_rate_hz".into()))?;
    let n_channels: usize = field("n_channels")?.parse().map_err(|_| bad("unparsable n_channels".into()))?;
    let n_samples: usize = field("n_samples")?.parse().map_err(|_| bad("unparsable n_samples".into()))?;
    if !field("channels")?.is_empty() {
        return Err(bad("`channels:` must stand alone".into()));
    }

    let mut channels = Vec::with_capacity(n_channels);
    for _ in 0..n_channels {
        let line = lines.next().ok_or_else(|| bad("channel list shorter than n_channels".into()))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [index, name, role] = parts[..] else {
            return Err(bad(format!("malformed channel line {line:?}")));
        };
        channels.push(ChannelInfo {
            index: index.parse().map_err(|_| bad(format!("bad channel index in {line:?}")))?,
            name: name.to_string(),
            role: role.parse()?,
        });
    }

    let line = lines.next().ok_or_else(|| bad("missing triggers".into()))?;
    let count = match line.split_once(':') {
        Some(("triggers", v)) if v.trim() == "[]" => 0,
        Some(("triggers", v)) => v.trim().parse::<usize>().map_err(|_| bad(format!("bad trigger count {v:?}")))?,
        _ => return Err(bad(format!("expected `triggers:`, got {line:?}"))),
    };
    let mut triggers = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| bad("trigger list shorter than declared".into()))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [code, sample, label] = parts[..] else {
            return Err(bad(format!("malformed trigger line {line:?}")));
        };
        let label = match label {
            "-" => None,
            l => Some(l.parse::<ClassLabel>()?),
        };
        triggers.push(TriggerEvent {
            code: code.parse::<TriggerCode>()?,
            sample_index: sample.parse().map_err(|_| bad(format!("bad trigger sample in {line:?}")))?,
            label,
        });
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing content after trigger list".into()));
    }
    Ok(Header { sample_rate_hz, n_samples, channels, triggers })
}
