//! Model files: `"EEGM" | u32 header_len | header text | f32-LE weight blob`.
//!
//! ```text
//! format_version: 1
//! kind: Mlp
//! task: MI
//! profile: F40
//! seed: 7
//! input: features 295            (or: window <channels> <len> <decimation>)
//! hyper: epochs=1000 learning_rate=0.001 ...
//! norm_mean: <f32> <f32> ...
//! norm_std: <f32> <f32> ...
//! tensors: 6
//!   w1 295x128
//!   ...
//! ```
//!
//! The blob holds the listed tensors back to back, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::nn::{CompactCnn, Mlp};
use super::tree::Tree;
use super::{DecoderError, DecoderKind, DecoderModel, InputSpec, Normalizer, Params, Result, Tensor};
use crate::recording::Task;

pub const MODEL_MAGIC: &[u8; 4] = b"EEGM";
pub const MODEL_VERSION: u32 = 1;

fn join<T: ToString>(v: impl IntoIterator<Item = T>, sep: &str) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

pub fn write_model(m: &DecoderModel, out: &mut impl Write) -> Result<()> {
    let tensors = m.tensors();
    let mut h = String::new();
    h.push_str(&format!("format_version: {MODEL_VERSION}\n"));
    h.push_str(&format!("kind: {}\n", m.kind));
    h.push_str(&format!("task: {}\n", m.task));
    h.push_str(&format!("profile: {}\n", m.profile));
    h.push_str(&format!("seed: {}\n", m.seed));
    match m.input {
        InputSpec::Features { dim } => h.push_str(&format!("input: features {dim}\n")),
        InputSpec::Window { channels, len, decimation } => {
            h.push_str(&format!("input: window {channels} {len} {decimation}\n"))
        }
    }
    h.push_str(&format!("hyper: {}\n", join(m.hyper.iter().map(|(k, v)| format!("{k}={v}")), " ")));
    h.push_str(&format!("norm_mean: {}\n", join(m.norm.mean.iter().map(|&v| v as f32), " ")));
    h.push_str(&format!("norm_std: {}\n", join(m.norm.std.iter().map(|&v| v as f32), " ")));
    h.push_str(&format!("tensors: {}\n", tensors.len()));
    for t in &tensors {
        h.push_str(&format!("  {} {}\n", t.name, join(&t.shape, "x")));
    }
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&(h.len() as u32).to_le_bytes())?;
    out.write_all(h.as_bytes())?;
    for t in &tensors {
        for &v in &t.data {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_model(m: &DecoderModel, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model(m, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DecoderModel> {
    read_model(&mut BufReader::new(File::open(path)?))
}

fn fmt_err(msg: impl Into<String>) -> DecoderError {
    DecoderError::Format(msg.into())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| fmt_err(format!("bad {what}: {s:?}")))
}

fn floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split_whitespace().map(|v| parse::<f32>(v, what).map(f64::from)).collect()
}

/// Tensor layout a model of `kind` must have. Data-dependent leading
/// dimensions (KNN rows, tree nodes) are taken from `stored`.
fn expected_layout(
    kind: DecoderKind,
    input: InputSpec,
    k: usize,
    stored: &[(String, Vec<usize>)],
) -> Result<Vec<(String, Vec<usize>)>> {
    let mismatch = |detail: String| DecoderError::KindMismatch { kind, detail };
    let lead = |i: usize| stored.get(i).and_then(|(_, s)| s.first().copied()).unwrap_or(0);
    let owned = |v: &[(&str, Vec<usize>)]| v.iter().map(|(n, s)| (n.to_string(), s.clone())).collect();
    match (kind, input) {
        (DecoderKind::CompactCnn, InputSpec::Window { channels, len, decimation }) if decimation > 0 => {
            CompactCnn::layout(channels, len / decimation, k)
        }
        (DecoderKind::CompactCnn, _) => Err(mismatch("CompactCnn needs a window input".into())),
        (_, InputSpec::Window { .. }) => Err(mismatch("feature model with a window input".into())),
        (DecoderKind::Ridge | DecoderKind::LinearSvm, InputSpec::Features { dim }) => {
            Ok(owned(&[("weights", vec![dim, k]), ("bias", vec![k])]))
        }
        (DecoderKind::Knn, InputSpec::Features { dim }) => {
            let n = lead(0).max(1);
            Ok(owned(&[("train", vec![n, dim]), ("labels", vec![n])]))
        }
        (DecoderKind::DecisionTree, InputSpec::Features { .. }) => Ok(owned(&[("nodes", vec![lead(0).max(1), 4 + k])])),
        (DecoderKind::Mlp, InputSpec::Features { dim }) => Ok(Mlp::layout(dim, k)),
    }
}

pub fn read_model(src: &mut impl Read) -> Result<DecoderModel> {
    let mut pre = [0u8; 8];
    src.read_exact(&mut pre).map_err(|_| fmt_err("file shorter than preamble"))?;
    if &pre[..4] != MODEL_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let header_len = u32::from_le_bytes(pre[4..].try_into().expect("4 bytes")) as usize;
    let mut header = vec![0u8; header_len];
    src.read_exact(&mut header).map_err(|_| fmt_err("truncated header"))?;
    let header = String::from_utf8(header).map_err(|_| fmt_err("header is not UTF-8"))?;
    let mut lines = header.lines();
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| fmt_err(format!("header ended before `{key}`")))?;
        match line.split_once(':') {
            Some((k, v)) if k == key => Ok(v.trim().to_string()),
            _ => Err(fmt_err(format!("expected `{key}:`, found {line:?}"))),
        }
    };
    let version: u32 = parse(&field("format_version")?, "version")?;
    if version != MODEL_VERSION {
        return Err(DecoderError::Version { found: version, supported: MODEL_VERSION });
    }
    let kind: DecoderKind = field("kind")?.parse()?;
    let task: Task = field("task")?.parse().map_err(|_| fmt_err("bad task"))?;
    let profile = field("profile")?.parse().map_err(|_| fmt_err("bad profile"))?;
    let seed: u64 = parse(&field("seed")?, "seed")?;
    let input_line = field("input")?;
    let parts: Vec<&str> = input_line.split_whitespace().collect();
    let input = match parts[..] {
        ["features", d] => InputSpec::Features { dim: parse(d, "dim")? },
        ["window", c, l, dec] => InputSpec::Window {
            channels: parse(c, "channels")?,
            len: parse(l, "len")?,
            decimation: parse(dec, "decimation")?,
        },
        _ => return Err(fmt_err(format!("bad input line {input_line:?}"))),
    };
    let hyper: Vec<(String, String)> = field("hyper")?
        .split_whitespace()
        .map(|kv| {
            kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| fmt_err("bad hyper entry"))
        })
        .collect::<Result<_>>()?;
    let norm =
        Normalizer { mean: floats(&field("norm_mean")?, "norm_mean")?, std: floats(&field("norm_std")?, "norm_std")? };
    let n_tensors: usize = parse(&field("tensors")?, "tensor count")?;
    let mut stored = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let line = lines.next().ok_or_else(|| fmt_err("missing tensor line"))?;
        let (name, shape) = line.trim().split_once(' ').ok_or_else(|| fmt_err(format!("bad tensor line {line:?}")))?;
        let shape: Vec<usize> = shape.split('x').map(|d| parse(d, "shape")).collect::<Result<_>>()?;
        stored.push((name.to_string(), shape));
    }
    let k = task.n_classes();
    let expected = expected_layout(kind, input, k, &stored)?;
    if expected != stored {
        return Err(DecoderError::KindMismatch {
            kind,
            detail: format!("expected tensors {expected:?}, header lists {stored:?}"),
        });
    }
    let groups = match input {
        InputSpec::Features { dim } => dim,
        InputSpec::Window { channels, .. } => channels,
    };
    if norm.mean.len() != groups || norm.std.len() != groups {
        return Err(fmt_err(format!("normalization covers {} entries, input needs {groups}", norm.mean.len())));
    }
    let mut blob = Vec::new();
    src.read_to_end(&mut blob)?;
    let expected_len: usize = stored.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if blob.len() % 4 != 0 || blob.len() / 4 != expected_len {
        return Err(DecoderError::BlobLength { expected: expected_len, found: blob.len() / 4 });
    }
    let mut values = blob.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64);
    let mut tensors: Vec<Tensor> = stored
        .iter()
        .map(|(name, shape)| {
            let n = shape.iter().product();
            Tensor::new(name, shape, values.by_ref().take(n).collect())
        })
        .collect();
    let params = match kind {
        DecoderKind::Ridge | DecoderKind::LinearSvm => {
            let bias = tensors.pop().expect("two tensors");
            let weights = tensors.pop().expect("two tensors");
            Params::Linear { weights, bias }
        }
        DecoderKind::Knn => {
            let labels_t = tensors.pop().expect("two tensors");
            let train = tensors.pop().expect("two tensors");
            let labels = labels_t
                .data
                .iter()
                .map(|&l| (l >= 0.0 && l.fract() == 0.0 && (l as usize) < k).then_some(l as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| fmt_err("knn labels out of range"))?;
            let nn_k = hyper
                .iter()
                .find(|(key, _)| key == "k")
                .map(|(_, v)| parse::<usize>(v, "k"))
                .transpose()?
                .unwrap_or(super::KNN_K)
                .clamp(1, labels.len());
            Params::Knn { k: nn_k, train, labels }
        }
        DecoderKind::DecisionTree => {
            let InputSpec::Features { dim } = input else { unreachable!("checked by layout") };
            let t = Tree::from_rows(&tensors[0].data, k, dim).ok_or_else(|| fmt_err("tree nodes are inconsistent"))?;
            Params::Tree(t)
        }
        DecoderKind::Mlp => {
            let InputSpec::Features { dim } = input else { unreachable!("checked by layout") };
            Params::Mlp(Mlp { dim, n_classes: k, tensors })
        }
        DecoderKind::CompactCnn => {
            let InputSpec::Window { channels, len, decimation } = input else { unreachable!("checked by layout") };
            Params::Cnn(CompactCnn { channels, len: len / decimation, n_classes: k, tensors })
        }
    };
    Ok(DecoderModel { kind, task, profile, seed, input, norm, params, hyper })
}
