//! FastICA (deflation, tanh contrast) on whitened scalp channels, plus
//! correlation-based rejection of ocular/cardiac components.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{PreprocessError, Result};
use crate::recording::{ChannelRole, Recording};

/// Samples processed per block when streaming over a whole session.
const BLOCK: usize = 8192;
/// Eigenvalues below `RANK_RTOL * max_eigenvalue` count as rank loss.
const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcaFitOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Fit on at most this many (evenly strided) samples. `None` uses all.
    pub max_fit_samples: Option<usize>,
}

impl Default for IcaFitOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-5, seed: 0, max_fit_samples: Some(20_000) }
    }
}

/// Fitted unmixing for the scalp channels of a montage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaModel {
    /// Recording channel indices the model operates on.
    pub scalp_channels: Vec<usize>,
    /// Per-channel mean removed before unmixing.
    pub mean: Vec<f64>,
    /// `[k x n]`, row-major. Includes the whitening transform.
    pub unmixing: Vec<f64>,
    /// `[n x k]`, row-major. Pseudo-inverse of `unmixing`.
    pub mixing: Vec<f64>,
    pub n_components: usize,
    /// `true` = component kept.
    pub component_mask: Vec<bool>,
    /// Largest |Pearson r| of each component against any EOG/ECG channel,
    /// filled in by [`reject_artifacts`].
    pub artifact_correlation: Vec<f64>,
    pub converged: Vec<bool>,
    pub effective_rank: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl IcaModel {
    pub fn n_channels(&self) -> usize {
        self.scalp_channels.len()
    }

    pub fn unmixing_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_components, self.n_channels(), &self.unmixing)
    }

    pub fn mixing_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_channels(), self.n_components, &self.mixing)
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    pub fn removed_components(&self) -> Vec<usize> {
        (0..self.n_components).filter(|&j| !self.component_mask[j]).collect()
    }

    /// Component time courses `[k x n_samples]` for the whole recording.
    pub fn sources(&self, rec: &Recording) -> Result<Vec<Vec<f64>>> {
        self.check(rec)?;
        let mut out = vec![Vec::with_capacity(rec.n_samples()); self.n_components];
        for_each_block(rec.n_samples(), |a, b| {
            let s = self.block_sources(rec, a, b, None);
            for (j, row) in s.chunks_exact(b - a).enumerate() {
                out[j].extend_from_slice(row);
            }
        });
        Ok(out)
    }

    /// Removes the masked-out components from the scalp channels. Kept
    /// components are never touched, so a full mask is an exact identity.
    pub fn apply(&self, rec: &Recording) -> Result<Recording> {
        self.check(rec)?;
        let removed = self.removed_components();
        if removed.is_empty() {
            return Ok(rec.clone());
        }
        let ns = rec.n_samples();
        let mut data = rec.data().to_vec();
        for_each_block(ns, |a, b| {
            let len = b - a;
            let s = self.block_sources(rec, a, b, Some(&removed));
            for (ci, &ch) in self.scalp_channels.iter().enumerate() {
                let row = &mut data[ch * ns + a..ch * ns + b];
                for (ri, &j) in removed.iter().enumerate() {
                    let w = self.mixing[ci * self.n_components + j];
                    let src = &s[ri * len..(ri + 1) * len];
                    for (v, &sv) in row.iter_mut().zip(src) {
                        *v = (*v as f64 - w * sv) as f32;
                    }
                }
            }
        });
        Ok(rec.with_data(data)?)
    }

    fn check(&self, rec: &Recording) -> Result<()> {
        let scalp = rec.indices_with_role(ChannelRole::ScalpEeg);
        if scalp != self.scalp_channels {
            return Err(PreprocessError::ChannelMismatch { expected: self.n_channels(), found: scalp.len() });
        }
        Ok(())
    }

    /// Sources for samples `[a, b)`, row-major `[rows x (b-a)]`. With
    /// `only`, computes just those component rows.
    fn block_sources(&self, rec: &Recording, a: usize, b: usize, only: Option<&[usize]>) -> Vec<f64> {
        let len = b - a;
        let n = self.n_channels();
        let mut x = vec![0.0; n * len];
        for (ci, &ch) in self.scalp_channels.iter().enumerate() {
            let mean = self.mean[ci];
            for (dst, &v) in x[ci * len..(ci + 1) * len].iter_mut().zip(&rec.channel(ch)[a..b]) {
                *dst = v as f64 - mean;
            }
        }
        let rows: Vec<usize> = only.map_or_else(|| (0..self.n_components).collect(), <[usize]>::to_vec);
        let mut u = Vec::with_capacity(rows.len() * n);
        for &j in &rows {
            u.extend_from_slice(&self.unmixing[j * n..(j + 1) * n]);
        }
        let mut s = vec![0.0; rows.len() * len];
        gemm(&u, rows.len(), n, &x, len, &mut s);
        s
    }
}

fn for_each_block(n: usize, mut f: impl FnMut(usize, usize)) {
    let mut a = 0;
    while a < n {
        let b = (a + BLOCK).min(n);
        f(a, b);
        a = b;
    }
}

/// `c[m x n] = a[m x k] * b[k x n]`, all row-major.
fn gemm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slice lengths match the stated row-major shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Fits FastICA on the recording's scalp channels.
///
/// Whitening keeps every eigen-direction above a relative threshold; if the
/// covariance is rank deficient the component count drops to the effective
/// rank and a warning is logged. Each component runs the tanh fixed-point
/// update with Gram-Schmidt deflation against the rows already extracted;
/// a component that has not moved by less than `tol` after `max_iter`
/// iterations is flagged unconverged. The final rows get one symmetric
/// decorrelation pass.
pub fn fit_ica(rec: &Recording, opts: &IcaFitOptions) -> Result<IcaModel> {
    let scalp = rec.indices_with_role(ChannelRole::ScalpEeg);
    let n = scalp.len();
    if n == 0 {
        return Err(PreprocessError::MissingRole(ChannelRole::ScalpEeg));
    }
    let stride = match opts.max_fit_samples {
        Some(max) if max > 0 && rec.n_samples() > max => rec.n_samples().div_ceil(max),
        _ => 1,
    };
    let t = rec.n_samples().div_ceil(stride);
    if t < 10 * n {
        return Err(PreprocessError::TooShort { needed: 10 * n * stride, channels: n, got: rec.n_samples() });
    }

    let mut x = DMatrix::<f64>::zeros(n, t);
    let mut mean = vec![0.0; n];
    for (ci, &ch) in scalp.iter().enumerate() {
        let row = rec.channel(ch);
        let m = (0..t).map(|i| row[i * stride] as f64).sum::<f64>() / t as f64;
        mean[ci] = m;
        for i in 0..t {
            x[(ci, i)] = row[i * stride] as f64 - m;
        }
    }

    let cov = (&x * x.transpose()) / t as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lmax = eig.eigenvalues[order[0]];
    if !(lmax > 0.0) {
        return Err(PreprocessError::ZeroRank);
    }
    let keep: Vec<usize> = order.into_iter().filter(|&i| eig.eigenvalues[i] > lmax * RANK_RTOL).collect();
    let k = keep.len();
    if k < n {
        warn!("ICA covariance is rank deficient: effective rank {k} of {n}; fitting {k} components");
    }

    // Whitening K (k x n) and its pseudo-inverse (n x k).
    let mut whiten = DMatrix::<f64>::zeros(k, n);
    let mut dewhiten = DMatrix::<f64>::zeros(n, k);
    for (r, &i) in keep.iter().enumerate() {
        let l = eig.eigenvalues[i];
        for c in 0..n {
            let e = eig.eigenvectors[(c, i)];
            whiten[(r, c)] = e / l.sqrt();
            dewhiten[(c, r)] = e * l.sqrt();
        }
    }
    let z = &whiten * &x;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut w = DMatrix::<f64>::zeros(k, k);
    let mut converged = vec![false; k];
    let mut y = vec![0.0; t];
    for p in 0..k {
        let mut wp: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        deflate(&mut wp, &w, p);
        normalize(&mut wp);
        for _ in 0..opts.max_iter {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = (0..k).map(|j| wp[j] * z[(j, i)]).sum();
            }
            let mut next = vec![0.0; k];
            let mut dg = 0.0;
            for (i, &yi) in y.iter().enumerate() {
                let g = yi.tanh();
                dg += 1.0 - g * g;
                for (j, nj) in next.iter_mut().enumerate() {
                    *nj += z[(j, i)] * g;
                }
            }
            let (inv_t, dg) = (1.0 / t as f64, dg / t as f64);
            for j in 0..k {
                next[j] = next[j] * inv_t - dg * wp[j];
            }
            deflate(&mut next, &w, p);
            normalize(&mut next);
            let plus: f64 = next.iter().zip(&wp).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let minus: f64 = next.iter().zip(&wp).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt();
            wp = next;
            if plus.min(minus) < opts.tol {
                converged[p] = true;
                break;
            }
        }
        for j in 0..k {
            w[(p, j)] = wp[j];
        }
    }
    let unconverged = converged.iter().filter(|c| !**c).count();
    if unconverged > 0 {
        warn!("ICA: {unconverged} of {k} components hit max_iter={} without converging", opts.max_iter);
    }
    let w = symmetric_decorrelation(&w);

    let unmixing = &w * &whiten;
    let mixing = &dewhiten * w.transpose();
    Ok(IcaModel {
        scalp_channels: scalp,
        mean,
        unmixing: row_major(&unmixing),
        mixing: row_major(&mixing),
        n_components: k,
        component_mask: vec![true; k],
        artifact_correlation: vec![0.0; k],
        converged,
        effective_rank: k,
        max_iter: opts.max_iter,
        tol: opts.tol,
    })
}

fn deflate(w: &mut [f64], done: &DMatrix<f64>, rows: usize) {
    for q in 0..rows {
        let proj: f64 = (0..w.len()).map(|j| w[j] * done[(q, j)]).sum();
        for (j, v) in w.iter_mut().enumerate() {
            *v -= proj * done[(q, j)];
        }
    }
}

fn normalize(w: &mut [f64]) {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        w.iter_mut().for_each(|v| *v /= norm);
    }
}

/// `W <- (W W^T)^{-1/2} W`.
fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose() * w
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter().copied());
    }
    out
}

/// Zeroes every component whose |Pearson r| with any EOG or ECG channel
/// exceeds `threshold`, records the mask in `ica`, and returns the cleaned
/// recording.
pub fn reject_artifacts(rec: &Recording, ica: &mut IcaModel, threshold: f64) -> Result<Recording> {
    ica.check(rec)?;
    let mut refs = rec.indices_with_role(ChannelRole::Eog);
    if refs.is_empty() {
        return Err(PreprocessError::MissingRole(ChannelRole::Eog));
    }
    let ecg = rec.indices_with_role(ChannelRole::Ecg);
    if ecg.is_empty() {
        return Err(PreprocessError::MissingRole(ChannelRole::Ecg));
    }
    refs.extend(ecg);

    let k = ica.n_components;
    let r = refs.len();
    let mut s_sum = vec![0.0; k];
    let mut s_sq = vec![0.0; k];
    let mut e_sum = vec![0.0; r];
    let mut e_sq = vec![0.0; r];
    let mut cross = vec![0.0; k * r];
    for_each_block(rec.n_samples(), |a, b| {
        let len = b - a;
        let s = ica.block_sources(rec, a, b, None);
        for (ri, &ch) in refs.iter().enumerate() {
            let e: Vec<f64> = rec.channel(ch)[a..b].iter().map(|&v| v as f64).collect();
            e_sum[ri] += e.iter().sum::<f64>();
            e_sq[ri] += e.iter().map(|v| v * v).sum::<f64>();
            for j in 0..k {
                let src = &s[j * len..(j + 1) * len];
                cross[j * r + ri] += src.iter().zip(&e).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        for j in 0..k {
            let src = &s[j * len..(j + 1) * len];
            s_sum[j] += src.iter().sum::<f64>();
            s_sq[j] += src.iter().map(|v| v * v).sum::<f64>();
        }
    });

    let nt = rec.n_samples() as f64;
    for j in 0..k {
        let mut best: f64 = 0.0;
        for ri in 0..r {
            let cov = cross[j * r + ri] / nt - (s_sum[j] / nt) * (e_sum[ri] / nt);
            let vs = s_sq[j] / nt - (s_sum[j] / nt).powi(2);
            let ve = e_sq[ri] / nt - (e_sum[ri] / nt).powi(2);
            if vs > 0.0 && ve > 0.0 {
                best = best.max((cov / (vs * ve).sqrt()).abs());
            }
        }
        ica.artifact_correlation[j] = best;
        ica.component_mask[j] = best <= threshold;
    }
    ica.apply(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::Montage;
    use rand::Rng;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn scalp_only(rows: Vec<Vec<f32>>) -> Recording {
        let specs = (0..rows.len()).map(|i| (format!("S{i}"), ChannelRole::ScalpEeg));
        let chans = Montage::from_specs(specs).unwrap().into_channels();
        Recording::from_rows(chans, 1000.0, rows, vec![]).unwrap()
    }

    #[test]
    fn recovers_sine_and_sawtooth() {
        let n = 5000;
        let s1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.031).sin()).collect();
        let s2: Vec<f64> = (0..n).map(|i| ((i as f64 * 0.0173) % 1.0) * 2.0 - 1.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: [[f64; 2]; 2] = [
            [rng.random_range(0.5..1.5), rng.random_range(-1.0..1.0)],
            [rng.random_range(-1.0..1.0), rng.random_range(0.5..1.5)],
        ];
        let rows: Vec<Vec<f32>> =
            (0..2).map(|r| (0..n).map(|i| (a[r][0] * s1[i] + a[r][1] * s2[i]) as f32).collect()).collect();
        let rec = scalp_only(rows);
        let model = fit_ica(&rec, &IcaFitOptions { max_fit_samples: None, ..Default::default() }).unwrap();
        assert!(model.all_converged());
        let src = model.sources(&rec).unwrap();
        for truth in [&s1, &s2] {
            let best = src.iter().map(|s| pearson(s, truth).abs()).fold(0.0, f64::max);
            assert!(best > 0.99, "best |r| {best}");
        }
    }

    #[test]
    fn independent_white_input_gives_permutation() {
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 3;
        // Uniform and Laplace sources, unit variance.
        let rows: Vec<Vec<f32>> = (0..k)
            .map(|r| {
                (0..n)
                    .map(|_| {
                        let u: f64 = rng.random_range(-1.0..1.0);
                        let v = if r == 1 { -u.signum() * (1.0 - u.abs()).ln() / 2f64.sqrt() } else { u * 3f64.sqrt() };
                        v as f32
                    })
                    .collect()
            })
            .collect();
        let model = fit_ica(&scalp_only(rows), &IcaFitOptions { max_fit_samples: None, ..Default::default() }).unwrap();
        let u = model.unmixing_matrix();
        for r in 0..k {
            let row: Vec<f64> = u.row(r).iter().map(|v| v.abs()).collect();
            let max = row.iter().cloned().fold(0.0, f64::max);
            assert!(max > 0.9, "row {r}: {row:?}");
            assert!(row.iter().filter(|&&v| v > 0.2).count() == 1, "row {r}: {row:?}");
        }
    }

    #[test]
    fn mixing_inverts_unmixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f32>> = (0..6).map(|_| (0..3000).map(|_| rng.random_range(-5.0..5.0f32)).collect()).collect();
        let model = fit_ica(&scalp_only(rows), &IcaFitOptions { max_iter: 50, ..Default::default() }).unwrap();
        let prod = model.mixing_matrix() * model.unmixing_matrix();
        let err = (prod - DMatrix::<f64>::identity(6, 6)).abs().max();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rank_deficient_input_reduces_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f32> = (0..3000).map(|_| rng.random_range(-1.0..1.0f32)).collect();
        let b: Vec<f32> = (0..3000).map(|_| rng.random_range(-1.0..1.0f32)).collect();
        let rows = vec![a.clone(), b, a];
        let model = fit_ica(&scalp_only(rows), &IcaFitOptions { max_iter: 100, ..Default::default() }).unwrap();
        assert_eq!(model.effective_rank, 2);
        assert_eq!(model.n_components, 2);
    }

    #[test]
    fn too_short_is_an_error() {
        let rows = vec![vec![0.0f32; 15], vec![1.0f32; 15]];
        assert!(matches!(fit_ica(&scalp_only(rows), &IcaFitOptions::default()), Err(PreprocessError::TooShort { .. })));
    }
}
