//! Feature matrix export: `"EEGF" | u32 header_len | header text | f32-LE rows`.
//!
//! Header lines: `format_version`, `n_rows`, `n_cols`, `bands` (space
//! separated), `channels` (space separated scalp names), then one
//! `  <trial_id> <window_index> <label>` line per row. The payload is
//! `n_rows x n_cols` little-endian `f32`, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BandDef, FeatureError, FeatureVector, Result};
use crate::recording::ClassLabel;

pub const TABLE_MAGIC: &[u8; 4] = b"EEGF";
pub const TABLE_VERSION: u32 = 1;

pub fn write_feature_table(path: impl AsRef<Path>, rows: &[FeatureVector], channel_names: &[String]) -> Result<()> {
    let n_cols = rows.first().map_or(0, |r| r.values.len());
    let bands = rows.first().map_or_else(Vec::new, |r| r.band_set.clone());
    if rows.iter().any(|r| r.values.len() != n_cols || r.band_set != bands) {
        return Err(FeatureError::Table("rows disagree on width or band set".into()));
    }
    if !bands.is_empty() && channel_names.len() * bands.len() != n_cols {
        return Err(FeatureError::Table(format!(
            "{} channels x {} bands does not match {n_cols} columns",
            channel_names.len(),
            bands.len()
        )));
    }
    let mut h = format!("format_version: {TABLE_VERSION}\nn_rows: {}\nn_cols: {n_cols}\n", rows.len());
    h.push_str(&format!("bands: {}\n", bands.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")));
    h.push_str(&format!("channels: {}\nrows:\n", channel_names.join(" ")));
    for r in rows {
        h.push_str(&format!("  {} {} {}\n", r.trial_id, r.window_index, r.label));
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(TABLE_MAGIC)?;
    out.write_all(&(h.len() as u32).to_le_bytes())?;
    out.write_all(h.as_bytes())?;
    for r in rows {
        for &v in &r.values {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Returns the rows (values widened back from `f32`) and channel names.
pub fn read_feature_table(path: impl AsRef<Path>) -> Result<(Vec<FeatureVector>, Vec<String>)> {
    let bad = |m: &str| FeatureError::Table(m.to_string());
    let mut input = BufReader::new(File::open(path)?);
    let mut pre = [0u8; 8];
    input.read_exact(&mut pre).map_err(|_| bad("file shorter than preamble"))?;
    if &pre[..4] != TABLE_MAGIC {
        return Err(bad("bad magic"));
    }
    let header_len = u32::from_le_bytes(pre[4..].try_into().unwrap()) as usize;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    let header = String::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = header.lines();
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad("header ended early"))?;
        match line.split_once(':') {
            Some((k, v)) if k == key => Ok(v.trim().to_string()),
            _ => Err(FeatureError::Table(format!("expected `{key}:`, got {line:?}"))),
        }
    };
    let version: u32 = field("format_version")?.parse().map_err(|_| bad("bad version"))?;
    if version != TABLE_VERSION {
        return Err(FeatureError::Table(format!("unsupported version {version}")));
    }
    let n_rows: usize = field("n_rows")?.parse().map_err(|_| bad("bad n_rows"))?;
    let n_cols: usize = field("n_cols")?.parse().map_err(|_| bad("bad n_cols"))?;
    let bands = field("bands")?.split_whitespace().map(str::parse).collect::<Result<Vec<BandDef>>>()?;
    let channels: Vec<String> = field("channels")?.split_whitespace().map(String::from).collect();
    field("rows")?;
    let mut meta = Vec::with_capacity(n_rows);
    for line in lines.by_ref().take(n_rows) {
        let p: Vec<&str> = line.split_whitespace().collect();
        let [trial, window, label] = p[..] else { return Err(bad("malformed row line")) };
        meta.push((
            trial.parse::<usize>().map_err(|_| bad("bad trial id"))?,
            window.parse::<usize>().map_err(|_| bad("bad window index"))?,
            label.parse::<ClassLabel>().map_err(|e| FeatureError::Table(e.to_string()))?,
        ));
    }
    if meta.len() != n_rows {
        return Err(bad("fewer row lines than n_rows"));
    }
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() != n_rows * n_cols * 4 {
        return Err(FeatureError::Table(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            n_rows * n_cols * 4
        )));
    }
    let values: Vec<f64> = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    let rows = meta
        .into_iter()
        .enumerate()
        .map(|(i, (trial_id, window_index, label))| FeatureVector {
            values: values[i * n_cols..(i + 1) * n_cols].to_vec(),
            trial_id,
            window_index,
            label,
            band_set: bands.clone(),
        })
        .collect();
    Ok((rows, channels))
}
