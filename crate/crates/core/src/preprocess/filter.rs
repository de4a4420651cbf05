//! IIR filter design and zero-phase application.
//!
//! Band-pass filters are an order-4 Butterworth high-pass at `low_hz`
//! cascaded with an order-4 Butterworth low-pass at `high_hz`, each realized
//! as two bilinear-transformed biquads. The notch is a single RBJ biquad.
//! Both are run forward then backward, which squares the magnitude response
//! and cancels the phase.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

/// Second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn normalized(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Self { b: [b[0] / a0, b[1] / a0, b[2] / a0], a: [a1 / a0, a2 / a0] }
    }

    pub fn lowpass(fc: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (cos, alpha) = (w0.cos(), w0.sin() / (2.0 * q));
        let b1 = 1.0 - cos;
        Self::normalized([b1 / 2.0, b1, b1 / 2.0], 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    pub fn highpass(fc: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (cos, alpha) = (w0.cos(), w0.sin() / (2.0 * q));
        let b0 = (1.0 + cos) / 2.0;
        Self::normalized([b0, -(1.0 + cos), b0], 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    pub fn notch(f0: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (cos, alpha) = (w0.cos(), w0.sin() / (2.0 * q));
        Self::normalized([1.0, -2.0 * cos, 1.0], 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / fs);
        let z2 = z1 * z1;
        let num = self.b[0] + self.b[1] * z1 + self.b[2] * z2;
        let den = 1.0 + self.a[0] * z1 + self.a[1] * z2;
        num / den
    }

    /// DC gain `H(1)`.
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Q factors of the biquads that make up an even-order Butterworth filter.
fn butterworth_qs(order: usize) -> Vec<f64> {
    assert!(order.is_multiple_of(2), "only even orders are cascaded from biquads");
    (1..=order / 2)
        .map(|k| {
            let theta = (2 * k - 1) as f64 * PI / (2 * order) as f64;
            1.0 / (2.0 * theta.cos())
        })
        .collect()
}

/// Cascade of biquads applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    pub sample_rate_hz: f64,
    /// Samples of odd-symmetric padding used at each end in `filtfilt`.
    settle_samples: usize,
}

impl SosFilter {
    pub fn butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Self {
        let qs = butterworth_qs(order);
        let mut sections: Vec<Biquad> = qs.iter().map(|&q| Biquad::highpass(low_hz, q, fs)).collect();
        sections.extend(qs.iter().map(|&q| Biquad::lowpass(high_hz, q, fs)));
        Self { sections, sample_rate_hz: fs, settle_samples: (3.0 * fs / low_hz).ceil() as usize }
    }

    pub fn notch(f0: f64, q: f64, fs: f64) -> Self {
        let bandwidth = f0 / q;
        Self {
            sections: vec![Biquad::notch(f0, q, fs)],
            sample_rate_hz: fs,
            settle_samples: (3.0 * fs / bandwidth).ceil() as usize,
        }
    }

    /// Single-pass complex response.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        self.sections.iter().map(|s| s.response(freq_hz, self.sample_rate_hz)).product()
    }

    /// Magnitude of the forward-backward response, `|H(f)|^2`.
    pub fn zero_phase_gain(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm_sqr()
    }

    /// Causal single pass. The state starts at the steady state for a
    /// constant input equal to `x[0]`.
    pub fn lfilter(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let mut level = x0;
        for s in &self.sections {
            let y_ss = s.dc_gain() * level;
            let mut s2 = s.b[2] * level - s.a[1] * y_ss;
            let mut s1 = s.b[1] * level - s.a[0] * y_ss + s2;
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + s1;
                s1 = s.b[1] * input - s.a[0] * y + s2;
                s2 = s.b[2] * input - s.a[1] * y;
                *v = y;
            }
            level = y_ss;
        }
    }

    /// Zero-phase filtering with odd-symmetric end padding. Output length
    /// equals input length.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = self.settle_samples.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.lfilter(&mut ext);
        ext.reverse();
        self.lfilter(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    pub fn filtfilt_f32(&self, x: &[f32]) -> Vec<f32> {
        let xd: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        self.filtfilt(&xd).into_iter().map(|v| v as f32).collect()
    }
}
