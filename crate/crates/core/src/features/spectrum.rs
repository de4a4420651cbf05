use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{BandDef, FeatureError, Result};

/// Floor applied inside the logarithm of the DE functional.
pub const LOG_FLOOR: f64 = 1e-12;

/// One-sided PSD per channel on a uniform grid `k * df`, `k = 0..=w/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    pub freqs_hz: Vec<f64>,
    /// One row per channel, `freqs_hz.len()` values each.
    pub psd: Vec<Vec<f64>>,
    pub df_hz: f64,
    pub window_seconds: f64,
}

impl SpectrumEstimate {
    /// Bin indices with `lo_hz <= f < hi_hz`.
    pub fn band_bins(&self, band: BandDef) -> std::ops::Range<usize> {
        let (lo, hi) = band.range();
        let first = self.freqs_hz.iter().position(|&f| f >= lo).unwrap_or(self.freqs_hz.len());
        let end = self.freqs_hz.iter().position(|&f| f >= hi).unwrap_or(self.freqs_hz.len());
        first..end.max(first)
    }
}

/// Hann-tapered periodogram for a fixed window length, with the FFT plan
/// and taper computed once.
pub struct PeriodogramEstimator {
    len: usize,
    sample_rate_hz: f64,
    taper: Vec<f64>,
    taper_energy: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PeriodogramEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodogramEstimator").field("len", &self.len).field("fs", &self.sample_rate_hz).finish()
    }
}

impl PeriodogramEstimator {
    pub const MIN_LEN: usize = 64;

    pub fn new(len: usize, sample_rate_hz: f64) -> Result<Self> {
        if len < Self::MIN_LEN {
            return Err(FeatureError::WindowTooShort { len, min: Self::MIN_LEN });
        }
        let taper = hann(len);
        let taper_energy = taper.iter().map(|h| h * h).sum();
        let fft = FftPlanner::new().plan_fft_forward(len);
        Ok(Self { len, sample_rate_hz, taper, taper_energy, fft })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn df_hz(&self) -> f64 {
        self.sample_rate_hz / self.len as f64
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..=self.len / 2).map(|k| k as f64 * self.df_hz()).collect()
    }

    /// PSD of one channel. Scaled by `1 / (fs * sum(h^2))` with interior
    /// bins doubled, so `sum(psd) * df` equals the taper-weighted mean square.
    pub fn channel_psd(&self, x: &[f32], scratch: &mut Vec<Complex64>) -> Vec<f64> {
        assert_eq!(x.len(), self.len, "window length does not match estimator");
        scratch.clear();
        scratch.extend(x.iter().zip(&self.taper).map(|(&v, &h)| Complex64::new(v as f64 * h, 0.0)));
        self.fft.process(scratch);
        let scale = 1.0 / (self.sample_rate_hz * self.taper_energy);
        let half = self.len / 2;
        (0..=half)
            .map(|k| {
                let p = scratch[k].norm_sqr() * scale;
                let nyquist = self.len.is_multiple_of(2) && k == half;
                if k == 0 || nyquist {
                    p
                } else {
                    2.0 * p
                }
            })
            .collect()
    }

    /// `rows` is `[n_channels x len]`, row-major.
    pub fn estimate(&self, rows: &[f32], n_channels: usize) -> SpectrumEstimate {
        assert_eq!(rows.len(), n_channels * self.len);
        let mut scratch = Vec::with_capacity(self.len);
        SpectrumEstimate {
            freqs_hz: self.freqs(),
            psd: rows.chunks_exact(self.len).map(|r| self.channel_psd(r, &mut scratch)).collect(),
            df_hz: self.df_hz(),
            window_seconds: self.len as f64 / self.sample_rate_hz,
        }
    }
}

/// Periodic Hann taper.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()).collect()
}

/// `-sum_{lo <= f < hi} P(f) ln(max(P(f), eps)) df` for one PSD row.
pub fn de_of_row(psd: &[f64], bins: std::ops::Range<usize>, df_hz: f64) -> f64 {
    -psd[bins].iter().map(|&p| p * p.max(LOG_FLOOR).ln()).sum::<f64>() * df_hz
}

/// Differential entropy of each channel over `band`.
pub fn differential_entropy(spec: &SpectrumEstimate, band: BandDef) -> Result<Vec<f64>> {
    let bins = spec.band_bins(band);
    if bins.is_empty() {
        return Err(FeatureError::EmptyBand { band, df_hz: spec.df_hz });
    }
    Ok(spec.psd.iter().map(|row| de_of_row(row, bins.clone(), spec.df_hz)).collect())
}
