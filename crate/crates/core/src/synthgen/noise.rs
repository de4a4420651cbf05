//! Background and artifact sources.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Two independent real Gaussian series of length `n` whose one-sided PSD
/// is `psd(f)` in units^2/Hz. The DC bin is left empty.
///
/// Built as the real and imaginary parts of one inverse FFT of a complex
/// white spectrum shaped by `sqrt(psd / 2 * fs / N)`.
pub fn colored_pair(n: usize, fs: f64, psd: impl Fn(f64) -> f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let big_n = n.next_power_of_two();
    let df = fs / big_n as f64;
    let mut spec: Vec<Complex64> = (0..big_n)
        .map(|k| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            if k == 0 {
                return Complex64::new(0.0, 0.0);
            }
            let f = if k <= big_n / 2 { k as f64 * df } else { (big_n - k) as f64 * df };
            Complex64::new(re, im) * (psd(f) / 2.0 * df).sqrt()
        })
        .collect();
    FftPlanner::new().plan_fft_inverse(big_n).process(&mut spec);
    spec.truncate(n);
    spec.into_iter().map(|c| (c.re, c.im)).unzip()
}

/// `A / f^alpha` with `f` floored at `f_min`.
pub fn pink_psd(amplitude: f64, alpha: f64, f_min: f64) -> impl Fn(f64) -> f64 {
    move |f| amplitude / f.max(f_min).powf(alpha)
}

/// Event onsets (in samples) of a Poisson process with a refractory gap.
pub fn poisson_onsets(n: usize, fs: f64, rate_hz: f64, refractory_s: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if rate_hz <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(rate_hz).expect("positive rate");
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += refractory_s + rng.sample(exp);
        let s = (t * fs) as usize;
        if s >= n {
            return out;
        }
        out.push(s);
    }
}

/// Blink waveform: Gaussian bump of width `sigma_s` peaking `4 sigma` after onset.
pub fn blink_shape(fs: f64, sigma_s: f64) -> Vec<f64> {
    let len = (8.0 * sigma_s * fs).round() as usize;
    let centre = len as f64 / 2.0;
    (0..len).map(|i| (-0.5 * ((i as f64 - centre) / (sigma_s * fs)).powi(2)).exp()).collect()
}

/// Biphasic QRS-like pulse.
pub fn qrs_shape(fs: f64) -> Vec<f64> {
    let sigma = 0.008 * fs;
    let len = (10.0 * sigma).round() as usize;
    let c = len as f64 / 2.0;
    (0..len)
        .map(|i| {
            let r = (i as f64 - c) / sigma;
            (-0.5 * r * r).exp() - 0.25 * (-0.5 * ((r - 2.5) / 1.5).powi(2)).exp()
        })
        .collect()
}

/// Adds `gain * shape` to `row` at every onset.
pub fn stamp(row: &mut [f64], onsets: &[usize], shape: &[f64], gain: f64) {
    for &s in onsets {
        for (v, &b) in row[s..].iter_mut().zip(shape) {
            *v += gain * b;
        }
    }
}

/// Component of `x` inside `[lo, hi)` Hz, by FFT masking of the mirrored
/// segment `[x, reverse(x)]`, which has no jump at the wrap-around.
pub fn band_component(x: &[f64], fs: f64, bands: &[(f64, f64)], planner: &mut FftPlanner<f64>) -> Vec<Vec<f64>> {
    let n = 2 * x.len().max(1);
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spec: Vec<Complex64> = x.iter().chain(x.iter().rev()).map(|&v| Complex64::new(v, 0.0)).collect();
    spec.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut spec);
    let df = fs / n as f64;
    bands
        .iter()
        .map(|&(lo, hi)| {
            let mut s: Vec<Complex64> = spec
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let f = if k <= n / 2 { k as f64 * df } else { (n - k) as f64 * df };
                    if f >= lo && f < hi {
                        c
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            inv.process(&mut s);
            s.iter().take(x.len()).map(|c| c.re / n as f64).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn colored_variance_matches_integral() {
        // Flat PSD of 2 units^2/Hz over 0..fs/2 -> variance 2 * fs / 2.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = colored_pair(1 << 16, 100.0, |_| 2.0, &mut rng);
        for x in [a, b] {
            let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            assert!((var - 100.0).abs() < 3.0, "{var}");
        }
    }

    #[test]
    fn band_component_of_pure_tone() {
        let fs = 1000.0;
        let x: Vec<f64> = (0..2000)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * std::f64::consts::PI * 10.0 * t).sin() + (2.0 * std::f64::consts::PI * 100.0 * t).sin()
            })
            .collect();
        let mut planner = FftPlanner::new();
        let parts = band_component(&x, fs, &[(8.0, 13.0)], &mut planner);
        // Away from the edges the 10 Hz tone survives and 100 Hz is gone;
        // what is left is brick-wall ringing from the mirror kink.
        let err: Vec<f64> =
            (400..1600).map(|i| parts[0][i] - (2.0 * std::f64::consts::PI * 10.0 * i as f64 / fs).sin()).collect();
        let rms = (err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64).sqrt();
        assert!(rms < 0.06, "{rms}");
        assert!(err.iter().all(|e| e.abs() < 0.15));
    }

    #[test]
    fn onsets_respect_refractory_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let on = poisson_onsets(600_000, 1000.0, 0.5, 0.5, &mut rng);
        assert!(on.windows(2).all(|w| w[1] - w[0] >= 500));
        assert!(on.len() > 100);
    }
}
