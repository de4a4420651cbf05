//! Offline/online preprocessing chain: band-pass, 50 Hz notch, linked-mastoid
//! re-reference and ICA artifact rejection.

pub mod filter;
mod ica;

pub use filter::{Biquad, SosFilter};
pub use ica::{fit_ica, reject_artifacts, IcaFitOptions, IcaModel};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recording::{ChannelRole, Recording, RecordingError};

pub const BANDPASS_ORDER: usize = 4;
pub const NOTCH_HZ: f64 = 50.0;
pub const NOTCH_Q: f64 = 30.0;
pub const DEFAULT_ARTIFACT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("cutoff {cutoff_hz} Hz is not below Nyquist ({nyquist_hz} Hz)")]
    AboveNyquist { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("expected exactly 2 mastoid channels, found {0}")]
    Mastoids(usize),
    #[error("montage has no {0:?} channels")]
    MissingRole(ChannelRole),
    #[error("need at least {needed} samples to fit ICA on {channels} channels, got {got}")]
    TooShort { needed: usize, channels: usize, got: usize },
    #[error("covariance has effective rank 0")]
    ZeroRank,
    #[error("ICA model expects {expected} scalp channels, recording has {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Recording(#[from] RecordingError),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// The three band-pass variants compared offline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrequencyProfile {
    F40,
    F60,
    F100,
}

impl FrequencyProfile {
    pub const ALL: [FrequencyProfile; 3] = [Self::F40, Self::F60, Self::F100];

    pub fn band(self) -> (f64, f64) {
        match self {
            Self::F40 => (0.5, 40.0),
            Self::F60 => (0.5, 60.0),
            Self::F100 => (0.5, 100.0),
        }
    }

    pub fn high_hz(self) -> u32 {
        match self {
            Self::F40 => 40,
            Self::F60 => 60,
            Self::F100 => 100,
        }
    }
}

impl fmt::Display for FrequencyProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{}", self.high_hz())
    }
}

impl FromStr for FrequencyProfile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim_start_matches(['F', 'f']) {
            "40" => Ok(Self::F40),
            "60" => Ok(Self::F60),
            "100" => Ok(Self::F100),
            _ => Err(format!("unknown frequency profile {s:?} (expected F40, F60 or F100)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FilterKind {
    BandPass,
    Notch,
}

/// Filter description echoed into reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub low_hz: f64,
    pub high_hz: f64,
    pub notch_hz: f64,
    pub order: usize,
    pub q: f64,
}

impl FilterSpec {
    pub fn bandpass(profile: FrequencyProfile) -> Self {
        let (low_hz, high_hz) = profile.band();
        Self { kind: FilterKind::BandPass, low_hz, high_hz, notch_hz: NOTCH_HZ, order: BANDPASS_ORDER, q: 0.0 }
    }

    pub fn notch() -> Self {
        Self { kind: FilterKind::Notch, low_hz: 0.0, high_hz: 0.0, notch_hz: NOTCH_HZ, order: 2, q: NOTCH_Q }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist_hz = sample_rate_hz / 2.0;
        let cutoff_hz = match self.kind {
            FilterKind::BandPass => {
                assert!(self.low_hz < self.high_hz, "band edges out of order");
                self.high_hz
            }
            FilterKind::Notch => self.notch_hz,
        };
        if cutoff_hz >= nyquist_hz {
            return Err(PreprocessError::AboveNyquist { cutoff_hz, nyquist_hz });
        }
        Ok(())
    }

    pub fn design(&self, sample_rate_hz: f64) -> Result<SosFilter> {
        self.validate(sample_rate_hz)?;
        Ok(match self.kind {
            FilterKind::BandPass => {
                SosFilter::butterworth_bandpass(self.order, self.low_hz, self.high_hz, sample_rate_hz)
            }
            FilterKind::Notch => SosFilter::notch(self.notch_hz, self.q, sample_rate_hz),
        })
    }

    pub fn describe(&self) -> String {
        match self.kind {
            FilterKind::BandPass => {
                format!("bandpass butterworth order={} {}-{} Hz zero-phase", self.order, self.low_hz, self.high_hz)
            }
            FilterKind::Notch => format!("notch {} Hz Q={} zero-phase", self.notch_hz, self.q),
        }
    }
}

fn apply_filter(rec: &Recording, spec: &FilterSpec) -> Result<Recording> {
    let filter = spec.design(rec.sample_rate_hz())?;
    Ok(rec.map_channels(|_| true, |_, row| filter.filtfilt_f32(row)))
}

/// Zero-phase order-4 Butterworth band-pass on every channel.
pub fn bandpass(rec: &Recording, profile: FrequencyProfile) -> Result<Recording> {
    apply_filter(rec, &FilterSpec::bandpass(profile))
}

/// Zero-phase 50 Hz notch (Q = 30) on every channel.
pub fn notch50(rec: &Recording) -> Result<Recording> {
    apply_filter(rec, &FilterSpec::notch())
}

/// Subtracts the mean of the two mastoid channels from every scalp channel.
pub fn rereference_linked_mastoids(rec: &Recording) -> Result<Recording> {
    let mastoids = rec.indices_with_role(ChannelRole::Mastoid);
    let [m1, m2] = mastoids[..] else {
        return Err(PreprocessError::Mastoids(mastoids.len()));
    };
    let reference: Vec<f32> = rec.channel(m1).iter().zip(rec.channel(m2)).map(|(a, b)| (a + b) / 2.0).collect();
    Ok(rec.map_channels(
        |c| c.role == ChannelRole::ScalpEeg,
        |_, row| row.iter().zip(&reference).map(|(v, r)| v - r).collect(),
    ))
}

/// Band-pass, notch and re-reference, in that order.
pub fn filter_and_rereference(rec: &Recording, profile: FrequencyProfile) -> Result<Recording> {
    let bp = FilterSpec::bandpass(profile).design(rec.sample_rate_hz())?;
    let notch = FilterSpec::notch().design(rec.sample_rate_hz())?;
    let filtered = rec.map_channels(
        |_| true,
        |_, row| {
            let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            notch.filtfilt(&bp.filtfilt(&x)).into_iter().map(|v| v as f32).collect()
        },
    );
    rereference_linked_mastoids(&filtered)
}

/// The complete chain. ICA is optional: `None` skips artifact rejection,
/// `Some` applies a previously fitted model with its frozen mask.
pub fn apply_chain(rec: &Recording, profile: FrequencyProfile, ica: Option<&IcaModel>) -> Result<Recording> {
    let clean = filter_and_rereference(rec, profile)?;
    match ica {
        Some(model) => model.apply(&clean),
        None => Ok(clean),
    }
}
