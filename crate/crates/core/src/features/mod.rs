//! Differential-entropy features on 500 ms windows.
//!
//! Offline epochs lose 10% of their samples at each end, then are tiled by
//! [`tile_windows`]. Each window gets a Hann-tapered periodogram, and DE is
//! taken per (scalp channel, band) with bands δ, θ, α, β and the γ band
//! matching the recording's filter profile. Vectors are channel-major: all
//! bands of channel 0, then channel 1, and so on.

mod spectrum;
pub mod table;

pub use spectrum::{de_of_row, differential_entropy, hann, PeriodogramEstimator, SpectrumEstimate, LOG_FLOOR};
pub use table::{read_feature_table, write_feature_table};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::FrequencyProfile;
use crate::recording::{ChannelInfo, ChannelRole, ClassLabel, Epoch, RecordingError};

pub const WINDOW_SECONDS: f64 = 0.5;
pub const TRIM_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("segment of {len} samples is shorter than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("window of {len} samples is below the {min}-sample minimum")]
    WindowTooShort { len: usize, min: usize },
    #[error("band {band:?} contains no spectral bins at df = {df_hz} Hz")]
    EmptyBand { band: BandDef, df_hz: f64 },
    #[error("non-finite feature value at index {0}")]
    NonFinite(usize),
    #[error("malformed feature table: {0}")]
    Table(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Recording(#[from] RecordingError),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BandDef {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma40,
    Gamma60,
    Gamma100,
}

impl BandDef {
    pub const ALL: [BandDef; 7] =
        [Self::Delta, Self::Theta, Self::Alpha, Self::Beta, Self::Gamma40, Self::Gamma60, Self::Gamma100];

    pub fn range(self) -> (f64, f64) {
        match self {
            Self::Delta => (0.5, 4.0),
            Self::Theta => (4.0, 8.0),
            Self::Alpha => (8.0, 13.0),
            Self::Beta => (13.0, 30.0),
            Self::Gamma40 => (30.0, 40.0),
            Self::Gamma60 => (30.0, 60.0),
            Self::Gamma100 => (30.0, 100.0),
        }
    }

    pub fn gamma_for(profile: FrequencyProfile) -> Self {
        match profile {
            FrequencyProfile::F40 => Self::Gamma40,
            FrequencyProfile::F60 => Self::Gamma60,
            FrequencyProfile::F100 => Self::Gamma100,
        }
    }

    /// δ, θ, α, β and the profile's γ band.
    pub fn set_for(profile: FrequencyProfile) -> Vec<BandDef> {
        vec![Self::Delta, Self::Theta, Self::Alpha, Self::Beta, Self::gamma_for(profile)]
    }

    /// Profile implied by a band set's γ band, if it has exactly one.
    pub fn profile_of(bands: &[BandDef]) -> Option<FrequencyProfile> {
        let mut gammas = bands.iter().filter_map(|b| match b {
            Self::Gamma40 => Some(FrequencyProfile::F40),
            Self::Gamma60 => Some(FrequencyProfile::F60),
            Self::Gamma100 => Some(FrequencyProfile::F100),
            _ => None,
        });
        let first = gammas.next()?;
        gammas.next().is_none().then_some(first)
    }
}

impl fmt::Display for BandDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for BandDef {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|b| b.to_string() == s)
            .ok_or_else(|| FeatureError::Table(format!("unknown band {s:?}")))
    }
}

/// Window length in samples for a 500 ms window.
pub fn window_len(sample_rate_hz: f64) -> usize {
    (WINDOW_SECONDS * sample_rate_hz).round() as usize
}

/// Start offsets of the minimal-overlap tiling of `[0, len)` by windows of
/// `w` samples: `n = ceil((len - w) / w) + 1` windows at stride
/// `round((len - w) / (n - 1))`, with the last window ending exactly at `len`.
pub fn tile_windows(len: usize, w: usize) -> Result<Vec<usize>> {
    if w == 0 || len < w {
        return Err(FeatureError::TooShort { len, window: w });
    }
    let span = len - w;
    let n = span.div_ceil(w) + 1;
    if n == 1 {
        return Ok(vec![0]);
    }
    let stride = (span as f64 / (n - 1) as f64).round() as usize;
    let mut starts: Vec<usize> = (0..n - 1).map(|i| i * stride).collect();
    starts.push(span);
    Ok(starts)
}

/// Samples removed from each end of an offline epoch.
pub fn trim_len(epoch_len: usize) -> usize {
    (TRIM_FRACTION * epoch_len as f64).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisWindow {
    pub channels: Arc<[ChannelInfo]>,
    /// `[n_channels x len]`, row-major.
    pub data: Vec<f32>,
    pub len: usize,
    pub sample_rate_hz: f64,
    pub parent_trial: usize,
    pub window_index: usize,
}

impl AnalysisWindow {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    /// Rows of the scalp channels only, row-major.
    pub fn scalp_rows(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for ch in self.channels.iter().filter(|c| c.role == ChannelRole::ScalpEeg) {
            out.extend_from_slice(self.channel(ch.index));
        }
        out
    }
}

/// Cuts windows at `starts` out of a `[n_channels x n_samples]` block.
#[allow(clippy::too_many_arguments)]
pub fn cut_windows(
    channels: &Arc<[ChannelInfo]>,
    data: &[f32],
    n_samples: usize,
    offset: usize,
    starts: &[usize],
    w: usize,
    sample_rate_hz: f64,
    parent_trial: usize,
) -> Vec<AnalysisWindow> {
    starts
        .iter()
        .enumerate()
        .map(|(window_index, &s)| {
            let mut win = Vec::with_capacity(channels.len() * w);
            for c in 0..channels.len() {
                let row = &data[c * n_samples..(c + 1) * n_samples];
                win.extend_from_slice(&row[offset + s..offset + s + w]);
            }
            AnalysisWindow { channels: channels.clone(), data: win, len: w, sample_rate_hz, parent_trial, window_index }
        })
        .collect()
}

/// Drops 10% from both ends of the epoch and tiles the rest with 500 ms windows.
pub fn trim_and_window(ep: &Epoch) -> Result<Vec<AnalysisWindow>> {
    let w = window_len(ep.sample_rate_hz);
    let trim = trim_len(ep.n_samples);
    let len = ep.n_samples - 2 * trim;
    let starts = tile_windows(len, w)?;
    Ok(cut_windows(&ep.channels, &ep.data, ep.n_samples, trim, &starts, w, ep.sample_rate_hz, ep.trial_id))
}

/// Hann periodogram of every channel in the window.
pub fn periodogram(win: &AnalysisWindow) -> Result<SpectrumEstimate> {
    let est = PeriodogramEstimator::new(win.len, win.sample_rate_hz)?;
    Ok(est.estimate(&win.data, win.n_channels()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub trial_id: usize,
    pub window_index: usize,
    pub label: ClassLabel,
    pub band_set: Vec<BandDef>,
}

/// Reusable DE extractor for one window length and band set.
#[derive(Debug)]
pub struct FeatureExtractor {
    estimator: PeriodogramEstimator,
    bands: Vec<BandDef>,
    bins: Vec<std::ops::Range<usize>>,
}

impl FeatureExtractor {
    pub fn new(profile: FrequencyProfile, sample_rate_hz: f64) -> Result<Self> {
        Self::with_bands(BandDef::set_for(profile), window_len(sample_rate_hz), sample_rate_hz)
    }

    pub fn with_bands(bands: Vec<BandDef>, w: usize, sample_rate_hz: f64) -> Result<Self> {
        let estimator = PeriodogramEstimator::new(w, sample_rate_hz)?;
        let grid = SpectrumEstimate {
            freqs_hz: estimator.freqs(),
            psd: vec![],
            df_hz: estimator.df_hz(),
            window_seconds: w as f64 / sample_rate_hz,
        };
        let mut bins = Vec::with_capacity(bands.len());
        for &band in &bands {
            let b = grid.band_bins(band);
            if b.is_empty() {
                return Err(FeatureError::EmptyBand { band, df_hz: grid.df_hz });
            }
            bins.push(b);
        }
        Ok(Self { estimator, bands, bins })
    }

    pub fn bands(&self) -> &[BandDef] {
        &self.bands
    }

    pub fn window_len(&self) -> usize {
        self.estimator.len()
    }

    /// DE features of `rows` (`[n_channels x w]`), channel-major.
    pub fn features(&self, rows: &[f32], n_channels: usize) -> Result<Vec<f64>> {
        let w = self.estimator.len();
        assert_eq!(rows.len(), n_channels * w);
        let df = self.estimator.df_hz();
        let mut scratch = Vec::with_capacity(w);
        let mut out = Vec::with_capacity(n_channels * self.bands.len());
        for row in rows.chunks_exact(w) {
            let psd = self.estimator.channel_psd(row, &mut scratch);
            out.extend(self.bins.iter().map(|b| de_of_row(&psd, b.clone(), df)));
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(i));
        }
        Ok(out)
    }

    pub fn window_features(&self, win: &AnalysisWindow, label: ClassLabel) -> Result<FeatureVector> {
        let scalp = win.scalp_rows();
        let n = scalp.len() / win.len;
        Ok(FeatureVector {
            values: self.features(&scalp, n)?,
            trial_id: win.parent_trial,
            window_index: win.window_index,
            label,
            band_set: self.bands.clone(),
        })
    }
}

/// `trim_and_window -> periodogram -> differential_entropy` over the
/// profile's bands, scalp channels only. One vector per window.
pub fn extract_features(ep: &Epoch, profile: FrequencyProfile) -> Result<Vec<FeatureVector>> {
    let extractor = FeatureExtractor::new(profile, ep.sample_rate_hz)?;
    trim_and_window(ep)?.iter().map(|w| extractor.window_features(w, ep.label)).collect()
}
