//! One-vs-rest linear decoders: closed-form ridge and hinge-loss SVM.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DecoderError, Result, Tensor, TrainConfig};

/// Margins `x . w[:, c] + b[c]` with `w: [d x k]`.
pub fn margins(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let k = b.data.len();
    let mut out = b.data.clone();
    for (xi, row) in x.iter().zip(w.data.chunks_exact(k)) {
        for (o, wi) in out.iter_mut().zip(row) {
            *o += xi * wi;
        }
    }
    out
}

fn targets(labels: &[usize], k: usize) -> Vec<f64> {
    labels.iter().flat_map(|&y| (0..k).map(move |c| if c == y { 1.0 } else { -1.0 })).collect()
}

/// Minimises `|X w + b - Y|^2 / n + l2 |w|^2` with `Y` in `{-1, +1}`.
/// The bias is not penalised.
pub fn fit_ridge(x: &[f64], dim: usize, labels: &[usize], k: usize, l2: f64) -> Result<(Tensor, Tensor)> {
    let n = labels.len();
    let xa = DMatrix::from_fn(n, dim + 1, |i, j| if j == dim { 1.0 } else { x[i * dim + j] });
    let y = DMatrix::from_row_slice(n, k, &targets(labels, k));
    let mut a = xa.tr_mul(&xa) / n as f64;
    for j in 0..dim {
        a[(j, j)] += l2;
    }
    let rhs = xa.tr_mul(&y) / n as f64;
    let sol = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            a.lu().solve(&rhs).ok_or_else(|| DecoderError::Numerical("ridge normal equations are singular".into()))?
        }
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(DecoderError::Numerical("ridge solution is not finite".into()));
    }
    let w_rows = (0..dim).flat_map(|i| (0..k).map(move |c| (i, c))).map(|(i, c)| sol[(i, c)]).collect();
    let mut w = Tensor::new("weights", &[dim, k], w_rows);
    let mut b = Tensor::new("bias", &[k], (0..k).map(|c| sol[(dim, c)]).collect());
    w.round_to_f32();
    b.round_to_f32();
    Ok((w, b))
}

/// One-vs-rest hinge loss `mean(max(0, 1 - y m)) + l2/2 |w|^2`, minimised
/// by mini-batch subgradient steps with Adam.
pub fn fit_svm(
    x: &[f64],
    dim: usize,
    labels: &[usize],
    k: usize,
    cfg: &TrainConfig,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let n = labels.len();
    let y = targets(labels, k);
    let mut w = Tensor::zeros("weights", &[dim, k]);
    let mut b = Tensor::zeros("bias", &[k]);
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let (mut mw, mut vw) = (vec![0.0; dim * k], vec![0.0; dim * k]);
    let (mut mb, mut vb) = (vec![0.0; k], vec![0.0; k]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0i32;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut gw = vec![0.0; dim * k];
            let mut gb = vec![0.0; k];
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let xi = &x[i * dim..(i + 1) * dim];
                let m = margins(&w, &b, xi);
                for c in 0..k {
                    let yc = y[i * k + c];
                    let slack = 1.0 - yc * m[c];
                    if slack > 0.0 {
                        total += slack;
                        gb[c] -= yc * scale;
                        for (j, &xj) in xi.iter().enumerate() {
                            gw[j * k + c] -= yc * xj * scale;
                        }
                    }
                }
            }
            step += 1;
            let c1 = 1.0 - b1.powi(step);
            let c2 = 1.0 - b2.powi(step);
            let adam = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            for j in 0..dim * k {
                let g = gw[j] + cfg.l2 * w.data[j];
                adam(&mut w.data[j], g, &mut mw[j], &mut vw[j]);
            }
            for c in 0..k {
                adam(&mut b.data[c], gb[c], &mut mb[c], &mut vb[c]);
            }
        }
        let reg = 0.5 * cfg.l2 * w.data.iter().map(|v| v * v).sum::<f64>();
        let loss = total / n as f64 + reg;
        if !loss.is_finite() {
            return Err(DecoderError::Numerical(format!("hinge loss became {loss} after {} epochs", history.len())));
        }
        history.push(loss);
    }
    w.round_to_f32();
    b.round_to_f32();
    Ok((w, b, history))
}
