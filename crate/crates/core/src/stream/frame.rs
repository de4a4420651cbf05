//! Frame codec. Every frame is `u32 len | u8 kind | payload`, where `len`
//! counts the kind byte and the payload. All integers are little-endian.
//!
//! | kind | tag | payload |
//! |------|-----|---------|
//! | Hello | 1 | `u16 version, f64 sample_rate_hz, u16 n_channels`, then per channel `u8 role, u8 name_len, name` |
//! | Chunk | 2 | `u64 first_sample_index, u32 n_frames`, then `n_frames * n_channels` f32 samples, frame by frame |
//! | Trigger | 3 | `u8 code, u64 sample_index, u8 has_label`, then if set `u8 label_len, label` |
//! | Bye | 4 | empty |

use std::io::{Read, Write};

use super::{Result, StreamError};
use crate::recording::{ChannelInfo, ChannelRole, TriggerCode};

pub const PROTOCOL_VERSION: u16 = 1;
/// Upper bound on `len`; larger prefixes are rejected before allocating.
pub const MAX_FRAME_BYTES: u32 = 16 << 20;
pub const MAX_LABEL_BYTES: usize = u8::MAX as usize;

const TAG_HELLO: u8 = 1;
const TAG_CHUNK: u8 = 2;
const TAG_TRIGGER: u8 = 3;
const TAG_BYE: u8 = 4;

const ROLES: [ChannelRole; 4] = [ChannelRole::ScalpEeg, ChannelRole::Mastoid, ChannelRole::Eog, ChannelRole::Ecg];

#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    pub sample_rate_hz: f64,
    pub channels: Vec<ChannelInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Hello(StreamHeader),
    Chunk {
        first_sample: u64,
        n_frames: u32,
        samples: Vec<f32>,
    },
    /// The label travels as text so that the codec does not depend on the
    /// label vocabulary; [`super::Collector`] parses it.
    Trigger {
        code: TriggerCode,
        sample_index: u64,
        label: Option<String>,
    },
    Bye,
}

impl Frame {
    pub fn kind(&self) -> &'static str {
        match self {
            Frame::Hello(_) => "Hello",
            Frame::Chunk { .. } => "Chunk",
            Frame::Trigger { .. } => "Trigger",
            Frame::Bye => "Bye",
        }
    }
}

fn malformed(msg: impl Into<String>) -> StreamError {
    StreamError::Malformed(msg.into())
}

/// Appends the encoded frame to `out`.
pub fn encode_frame(frame: &Frame, out: &mut Vec<u8>) -> Result<()> {
    let start = out.len();
    out.extend_from_slice(&[0; 4]);
    match frame {
        Frame::Hello(h) => {
            out.push(TAG_HELLO);
            out.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
            out.extend_from_slice(&h.sample_rate_hz.to_le_bytes());
            let n = u16::try_from(h.channels.len()).map_err(|_| malformed("more than 65535 channels"))?;
            out.extend_from_slice(&n.to_le_bytes());
            for ch in &h.channels {
                out.push(ROLES.iter().position(|&r| r == ch.role).unwrap() as u8);
                let name = ch.name.as_bytes();
                let len =
                    u8::try_from(name.len()).map_err(|_| malformed(format!("channel name {:?} too long", ch.name)))?;
                out.push(len);
                out.extend_from_slice(name);
            }
        }
        Frame::Chunk { first_sample, n_frames, samples } => {
            out.push(TAG_CHUNK);
            out.extend_from_slice(&first_sample.to_le_bytes());
            out.extend_from_slice(&n_frames.to_le_bytes());
            for v in samples {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Frame::Trigger { code, sample_index, label } => {
            out.push(TAG_TRIGGER);
            out.push(code.to_u8());
            out.extend_from_slice(&sample_index.to_le_bytes());
            match label {
                None => out.push(0),
                Some(l) => {
                    let len = u8::try_from(l.len()).map_err(|_| malformed(format!("label of {} bytes", l.len())))?;
                    out.push(1);
                    out.push(len);
                    out.extend_from_slice(l.as_bytes());
                }
            }
        }
        Frame::Bye => out.push(TAG_BYE),
    }
    let len = out.len() - start - 4;
    if len > MAX_FRAME_BYTES as usize {
        out.truncate(start);
        return Err(malformed(format!("frame of {len} bytes exceeds the limit")));
    }
    out[start..start + 4].copy_from_slice(&(len as u32).to_le_bytes());
    Ok(())
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    let mut buf = Vec::new();
    encode_frame(frame, &mut buf)?;
    w.write_all(&buf)?;
    Ok(())
}

/// Decodes one frame from the front of `buf`. `Ok(None)` means more bytes
/// are needed; on success the consumed byte count is returned.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Frame, usize)>> {
    let Some(prefix) = buf.get(..4) else { return Ok(None) };
    let len = u32::from_le_bytes(prefix.try_into().unwrap());
    check_len(len)?;
    let Some(body) = buf.get(4..4 + len as usize) else { return Ok(None) };
    Ok(Some((decode_body(body)?, 4 + len as usize)))
}

fn check_len(len: u32) -> Result<()> {
    if len == 0 {
        return Err(malformed("zero-length frame"));
    }
    if len > MAX_FRAME_BYTES {
        return Err(malformed(format!("length prefix {len} exceeds {MAX_FRAME_BYTES}")));
    }
    Ok(())
}

/// Reads one frame. `Ok(None)` on a clean end of stream between frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(malformed("stream ends inside a length prefix")),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(prefix);
    check_len(len)?;
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => malformed(format!("stream ends inside a {len}-byte frame")),
        _ => e.into(),
    })?;
    decode_body(&body).map(Some)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed("frame payload too short"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u8()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("string is not UTF-8"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(malformed(format!("{} trailing bytes in frame", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn decode_body(body: &[u8]) -> Result<Frame> {
    let mut c = Cursor { buf: body, pos: 1 };
    let frame = match body[0] {
        TAG_HELLO => {
            let version = c.u16()?;
            if version != PROTOCOL_VERSION {
                return Err(malformed(format!("protocol version {version}, expected {PROTOCOL_VERSION}")));
            }
            let sample_rate_hz = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
            if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
                return Err(malformed(format!("sample rate {sample_rate_hz}")));
            }
            let n = c.u16()? as usize;
            let mut channels = Vec::with_capacity(n.min(body.len()));
            for index in 0..n {
                let role = *ROLES.get(c.u8()? as usize).ok_or_else(|| malformed("unknown channel role"))?;
                channels.push(ChannelInfo { name: c.string()?, role, index });
            }
            Frame::Hello(StreamHeader { sample_rate_hz, channels })
        }
        TAG_CHUNK => {
            let first_sample = c.u64()?;
            let n_frames = c.u32()?;
            let rest = c.take(body.len() - c.pos)?;
            if n_frames == 0 || rest.len() % 4 != 0 || (rest.len() / 4) % n_frames as usize != 0 {
                return Err(malformed(format!("{} sample bytes do not hold {n_frames} whole frames", rest.len())));
            }
            let samples = rest.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            Frame::Chunk { first_sample, n_frames, samples }
        }
        TAG_TRIGGER => {
            let raw = c.u8()?;
            let code = TriggerCode::from_u8(raw).ok_or_else(|| malformed(format!("unknown trigger code {raw}")))?;
            let sample_index = c.u64()?;
            let label = match c.u8()? {
                0 => None,
                1 => Some(c.string()?),
                f => return Err(malformed(format!("label flag {f}"))),
            };
            Frame::Trigger { code, sample_index, label }
        }
        TAG_BYE => Frame::Bye,
        t => return Err(malformed(format!("unknown frame kind {t}"))),
    };
    c.finish()?;
    Ok(frame)
}
