//! Gradient-trained decoders: the Mlp and the EEGNet-style CompactCnn.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::autograd::{BatchStats, Tape, Var};
use super::{DecoderError, Result, Tensor, TrainConfig};

pub const MLP_HIDDEN: [usize; 2] = [128, 64];

pub const CNN_F1: usize = 8;
pub const CNN_DEPTH: usize = 2;
pub const CNN_F2: usize = 16;
pub const CNN_TEMPORAL_KERNEL: usize = 64;
pub const CNN_SEPARABLE_KERNEL: usize = 16;
pub const CNN_POOL1: usize = 4;
pub const CNN_POOL2: usize = 8;
/// Rate the CNN runs at; inputs are box-car decimated down to it.
pub const CNN_RATE_HZ: f64 = 250.0;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// A network whose parameters live in a flat list of named tensors.
pub trait Net {
    fn tensors(&self) -> &[Tensor];
    fn tensors_mut(&mut self) -> &mut [Tensor];
    /// Number of leading tensors updated by the optimizer; the rest are
    /// running statistics.
    fn n_trainable(&self) -> usize;
    /// Flattened length of one input row.
    fn row_len(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// Logits for `x` (`[batch x row_len]`). In training mode batch-norm
    /// layers use batch statistics and report them.
    fn forward(&self, tape: &mut Tape, params: &[Var], x: &[f64], train: bool) -> (Var, Vec<BatchStats>);

    /// Mean cross-entropy and its gradient with respect to every trainable tensor.
    fn loss_and_grad(&self, x: &[f64], labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let params = leaves(&mut tape, self.tensors());
        let (logits, _) = self.forward(&mut tape, &params, x, true);
        let loss = tape.softmax_ce(logits, labels);
        tape.backward(loss);
        let grads = params[..self.n_trainable()].iter().map(|&p| tape.grad(p).to_vec()).collect();
        (tape.value(loss)[0], grads)
    }

    /// Training-mode loss without gradients.
    fn loss(&self, x: &[f64], labels: &[usize]) -> f64 {
        let mut tape = Tape::new();
        let params = leaves(&mut tape, self.tensors());
        let (logits, _) = self.forward(&mut tape, &params, x, true);
        let loss = tape.softmax_ce(logits, labels);
        tape.value(loss)[0]
    }

    /// Inference-mode logits for one row.
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let params = leaves(&mut tape, self.tensors());
        let (logits, _) = self.forward(&mut tape, &params, x, false);
        tape.value(logits).to_vec()
    }
}

fn leaves(tape: &mut Tape, tensors: &[Tensor]) -> Vec<Var> {
    tensors.iter().map(|t| tape.leaf(t.data.clone(), &t.shape)).collect()
}

fn he_normal(rng: &mut ChaCha8Rng, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
    let scale = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(name, shape, data)
}

/// Fully connected d -> 128 -> 64 -> k with ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dim: usize,
    pub n_classes: usize,
    pub tensors: Vec<Tensor>,
}

impl Mlp {
    pub fn new(dim: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h1, h2] = MLP_HIDDEN;
        let tensors = vec![
            he_normal(&mut rng, "w1", &[dim, h1], dim),
            Tensor::zeros("b1", &[h1]),
            he_normal(&mut rng, "w2", &[h1, h2], h1),
            Tensor::zeros("b2", &[h2]),
            he_normal(&mut rng, "w3", &[h2, n_classes], h2),
            Tensor::zeros("b3", &[n_classes]),
        ];
        Self { dim, n_classes, tensors }
    }

    pub fn layout(dim: usize, n_classes: usize) -> Vec<(String, Vec<usize>)> {
        Self::new(dim, n_classes, 0).tensors.into_iter().map(|t| (t.name, t.shape)).collect()
    }
}

impl Net for Mlp {
    fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
    fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
    fn n_trainable(&self) -> usize {
        self.tensors.len()
    }
    fn row_len(&self) -> usize {
        self.dim
    }
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn forward(&self, tape: &mut Tape, p: &[Var], x: &[f64], _train: bool) -> (Var, Vec<BatchStats>) {
        let n = x.len() / self.dim;
        let mut h = tape.leaf(x.to_vec(), &[n, self.dim]);
        for layer in 0..3 {
            h = tape.matmul(h, p[2 * layer]);
            h = tape.add_row(h, p[2 * layer + 1]);
            if layer < 2 {
                h = tape.relu(h);
            }
        }
        (h, Vec::new())
    }
}

/// EEGNet-style network on `[channels x len]` windows (already decimated).
///
/// Block 1 is a depthwise spatial filter (`F1 * D` maps over all channels)
/// followed by a per-filter temporal convolution; both are linear, so this
/// equals temporal-then-spatial filtering at a fraction of the cost. Then
/// batch norm, ELU and mean-pooling by 4. Block 2 is a separable
/// convolution (depthwise temporal kernel, pointwise mix to `F2` maps),
/// batch norm, ELU and pooling by 8, then a dense softmax layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactCnn {
    pub channels: usize,
    pub len: usize,
    pub n_classes: usize,
    pub tensors: Vec<Tensor>,
}

impl CompactCnn {
    pub const N_TRAINABLE: usize = 10;

    pub fn new(channels: usize, len: usize, n_classes: usize, seed: u64) -> Result<Self> {
        let maps = CNN_F1 * CNN_DEPTH;
        let pooled = len / CNN_POOL1 / CNN_POOL2;
        if pooled == 0 {
            return Err(DecoderError::Dimension(format!(
                "window of {len} samples is too short for pooling by {}",
                CNN_POOL1 * CNN_POOL2
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat = CNN_F2 * pooled;
        let tensors = vec![
            he_normal(&mut rng, "spatial", &[maps, channels], channels),
            he_normal(&mut rng, "temporal", &[CNN_F1, CNN_TEMPORAL_KERNEL], CNN_TEMPORAL_KERNEL),
            Tensor::new("bn1_gamma", &[maps], vec![1.0; maps]),
            Tensor::zeros("bn1_beta", &[maps]),
            he_normal(&mut rng, "separable_depthwise", &[maps, CNN_SEPARABLE_KERNEL], CNN_SEPARABLE_KERNEL),
            he_normal(&mut rng, "separable_pointwise", &[CNN_F2, maps], maps),
            Tensor::new("bn2_gamma", &[CNN_F2], vec![1.0; CNN_F2]),
            Tensor::zeros("bn2_beta", &[CNN_F2]),
            he_normal(&mut rng, "dense", &[flat, n_classes], flat),
            Tensor::zeros("dense_bias", &[n_classes]),
            Tensor::zeros("bn1_mean", &[maps]),
            Tensor::new("bn1_var", &[maps], vec![1.0; maps]),
            Tensor::zeros("bn2_mean", &[CNN_F2]),
            Tensor::new("bn2_var", &[CNN_F2], vec![1.0; CNN_F2]),
        ];
        Ok(Self { channels, len, n_classes, tensors })
    }

    pub fn layout(channels: usize, len: usize, n_classes: usize) -> Result<Vec<(String, Vec<usize>)>> {
        Ok(Self::new(channels, len, n_classes, 0)?.tensors.into_iter().map(|t| (t.name, t.shape)).collect())
    }
}

impl Net for CompactCnn {
    fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
    fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
    fn n_trainable(&self) -> usize {
        Self::N_TRAINABLE
    }
    fn row_len(&self) -> usize {
        self.channels * self.len
    }
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn forward(&self, tape: &mut Tape, p: &[Var], x: &[f64], train: bool) -> (Var, Vec<BatchStats>) {
        let n = x.len() / self.row_len();
        let mut stats = Vec::new();
        let mut norm = |tape: &mut Tape, h: Var, g: Var, b: Var, running: usize| {
            if train {
                let (y, s) = tape.batch_norm(h, g, b, BN_EPS);
                stats.push(s);
                y
            } else {
                let (m, v) = (&self.tensors[running].data, &self.tensors[running + 1].data);
                tape.frozen_norm(h, g, b, m, v, BN_EPS)
            }
        };
        let x = tape.leaf(x.to_vec(), &[n, self.channels, self.len]);
        let h = tape.mix(p[0], x);
        let h = tape.depthwise_conv(h, p[1], CNN_DEPTH);
        let h = norm(tape, h, p[2], p[3], 10);
        let h = tape.elu(h);
        let h = tape.avg_pool(h, CNN_POOL1);
        let h = tape.depthwise_conv(h, p[4], 1);
        let h = tape.mix(p[5], h);
        let h = norm(tape, h, p[6], p[7], 12);
        let h = tape.elu(h);
        let h = tape.avg_pool(h, CNN_POOL2);
        let flat = tape.shape(h)[1] * tape.shape(h)[2];
        let h = tape.reshape(h, &[n, flat]);
        let h = tape.matmul(h, p[8]);
        (tape.add_row(h, p[9]), stats)
    }
}

/// Updates the running statistics of a CompactCnn from one training batch.
fn update_running(net: &mut dyn Net, stats: &[BatchStats]) {
    for (i, s) in stats.iter().enumerate() {
        let base = 10 + 2 * i;
        let t = net.tensors_mut();
        for (r, b) in t[base].data.iter_mut().zip(&s.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in t[base + 1].data.iter_mut().zip(&s.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

/// Mini-batch Adam on softmax cross-entropy. `x` holds prepared rows.
/// Returns the mean training loss of every epoch.
pub fn train_net(net: &mut dyn Net, x: &[f64], labels: &[usize], cfg: &TrainConfig) -> Result<Vec<f64>> {
    let row = net.row_len();
    let n = labels.len();
    if n == 0 {
        return Err(DecoderError::Empty);
    }
    assert_eq!(x.len(), n * row);
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let nt = net.n_trainable();
    let mut m: Vec<Vec<f64>> = net.tensors()[..nt].iter().map(|t| vec![0.0; t.data.len()]).collect();
    let mut v = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0i32;
    let mut batch_x = Vec::with_capacity(cfg.batch_size * row);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&x[i * row..(i + 1) * row]);
                batch_y.push(labels[i]);
            }
            let mut tape = Tape::new();
            let params = leaves(&mut tape, net.tensors());
            let (logits, stats) = net.forward(&mut tape, &params, &batch_x, true);
            let loss = tape.softmax_ce(logits, &batch_y);
            let lv = tape.value(loss)[0];
            if !lv.is_finite() {
                return Err(DecoderError::Numerical(format!(
                    "loss became {lv} at epoch {epoch}, batch {bi} (lr {}, batch {})",
                    cfg.learning_rate, cfg.batch_size
                )));
            }
            total += lv * chunk.len() as f64;
            tape.backward(loss);
            step += 1;
            let c1 = 1.0 - b1.powi(step);
            let c2 = 1.0 - b2.powi(step);
            for (ti, &p) in params[..nt].iter().enumerate() {
                let g = tape.grad(p);
                let t = &mut net.tensors_mut()[ti];
                let decay = if t.shape.len() > 1 { cfg.l2 } else { 0.0 };
                for (j, w) in t.data.iter_mut().enumerate() {
                    let gj = g[j] + decay * *w;
                    m[ti][j] = b1 * m[ti][j] + (1.0 - b1) * gj;
                    v[ti][j] = b2 * v[ti][j] + (1.0 - b2) * gj * gj;
                    *w -= cfg.learning_rate * (m[ti][j] / c1) / ((v[ti][j] / c2).sqrt() + eps);
                }
            }
            update_running(net, &stats);
        }
        let mean = total / n as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    for t in net.tensors_mut() {
        t.round_to_f32();
    }
    Ok(history)
}

/// Integer factor bringing `sample_rate_hz` near [`CNN_RATE_HZ`]; 4 at 1 kHz.
pub fn decimation_for(sample_rate_hz: f64) -> usize {
    ((sample_rate_hz / CNN_RATE_HZ).round() as usize).max(1)
}

/// Box-car decimation of a `[channels x len]` window.
pub fn decimate(window: &[f32], channels: usize, factor: usize) -> Vec<f64> {
    let len = window.len() / channels;
    let out_len = len / factor;
    let mut out = Vec::with_capacity(channels * out_len);
    for row in window.chunks_exact(len) {
        out.extend(
            (0..out_len)
                .map(|i| row[i * factor..(i + 1) * factor].iter().map(|&v| v as f64).sum::<f64>() / factor as f64),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize, row: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n * row).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        (x, (0..n).map(|i| i % 3).collect())
    }

    fn max_rel_error(net: &mut dyn Net, x: &[f64], y: &[usize], per_tensor: usize) -> f64 {
        let (_, grads) = net.loss_and_grad(x, y);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (ti, g) in grads.iter().enumerate() {
            let n = g.len();
            let stride = (n / per_tensor).max(1);
            for j in (0..n).step_by(stride) {
                let w0 = net.tensors()[ti].data[j];
                net.tensors_mut()[ti].data[j] = w0 + h;
                let up = net.loss(x, y);
                net.tensors_mut()[ti].data[j] = w0 - h;
                let down = net.loss(x, y);
                net.tensors_mut()[ti].data[j] = w0;
                let numeric = (up - down) / (2.0 * h);
                let err = (numeric - g[j]).abs() / numeric.abs().max(g[j].abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut net = Mlp::new(12, 3, 1);
        let (x, y) = batch(10, 12, 2);
        let err = max_rel_error(&mut net, &x, &y, 40);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn cnn_gradient_matches_finite_differences() {
        let mut net = CompactCnn::new(3, 64, 3, 1).unwrap();
        let (x, y) = batch(10, 3 * 64, 2);
        let err = max_rel_error(&mut net, &x, &y, 25);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn too_short_window_rejected() {
        assert!(CompactCnn::new(4, 31, 2, 0).is_err());
    }

    #[test]
    fn decimation_averages_blocks() {
        let w = [1.0f32, 3.0, 5.0, 7.0, 0.0, 0.0, 4.0, 4.0];
        assert_eq!(decimate(&w, 2, 2), vec![2.0, 6.0, 0.0, 4.0]);
    }

    #[test]
    fn training_lowers_loss_and_is_deterministic() {
        let (x, y) = batch(60, 8, 5);
        let mut shifted = x.clone();
        for (i, &c) in y.iter().enumerate() {
            shifted[i * 8 + c] += 3.0;
        }
        let cfg = TrainConfig { epochs: 30, ..TrainConfig::default() };
        let mut a = Mlp::new(8, 3, 9);
        let mut b = Mlp::new(8, 3, 9);
        let ha = train_net(&mut a, &shifted, &y, &cfg).unwrap();
        let hb = train_net(&mut b, &shifted, &y, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert!(ha.last().unwrap() < &(0.5 * ha[0]), "{ha:?}");
    }
}
