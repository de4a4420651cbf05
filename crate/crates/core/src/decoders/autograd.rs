//! Tape-based reverse-mode differentiation over dense f64 tensors.
//!
//! Only the handful of ops the Mlp and CompactCnn need are provided.
//! Tensors are row-major; 3-D tensors are `[batch, maps, time]`.

use matrixmultiply::dgemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Elu(Var),
    Mix(Var, Var),
    DepthwiseConv { x: Var, k: Var, share: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    FrozenNorm { x: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64> },
    AvgPool { x: Var, p: usize },
    Reshape(Var),
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
}

/// Per-channel statistics of one batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "expected a [batch, maps, time] tensor");
    (shape[0], shape[1], shape[2])
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "expected a matrix");
    (shape[0], shape[1])
}

/// `c (+)= a[m x k] * b[k x n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the strides describe matrices that lie inside the given slices,
    // which the callers guarantee through the shape checks on each op.
    unsafe {
        dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { value, shape, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<f64>, shape: &[usize]) -> Var {
        assert_eq!(value.len(), shape.iter().product::<usize>(), "leaf value does not match shape {shape:?}");
        self.push(value, shape.to_vec(), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = dims2(self.shape(a));
        let (k2, m) = dims2(self.shape(b));
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.value(a), (k as isize, 1), self.value(b), (m as isize, 1), 0.0, &mut out);
        self.push(out, vec![n, m], Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (n, m) = dims2(self.shape(x));
        assert_eq!(self.value(bias).len(), m);
        let b = self.value(bias);
        let out: Vec<f64> = self.value(x).chunks_exact(m).flat_map(|r| r.iter().zip(b).map(|(a, c)| a + c)).collect();
        self.push(out, vec![n, m], Op::AddRow(x, bias))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Relu(x))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| if v > 0.0 { v } else { v.exp_m1() }).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Elu(x))
    }

    /// `y[b] = w * x[b]` for `w: [m, c]`, `x: [batch, c, t]`.
    pub fn mix(&mut self, w: Var, x: Var) -> Var {
        let (m, c) = dims2(self.shape(w));
        let (nb, c2, t) = dims3(self.shape(x));
        assert_eq!(c, c2, "mix channel count differs");
        let mut out = vec![0.0; nb * m * t];
        let (wv, xv) = (self.value(w), self.value(x));
        for b in 0..nb {
            gemm(
                m,
                c,
                t,
                wv,
                (c as isize, 1),
                &xv[b * c * t..],
                (t as isize, 1),
                0.0,
                &mut out[b * m * t..(b + 1) * m * t],
            );
        }
        self.push(out, vec![nb, m, t], Op::Mix(w, x))
    }

    /// Same-length temporal convolution (cross-correlation, zero padded)
    /// of each map with kernel `k[map / share]`. `k: [maps / share, len]`.
    pub fn depthwise_conv(&mut self, x: Var, k: Var, share: usize) -> Var {
        let (nb, m, t) = dims3(self.shape(x));
        let (g, l) = dims2(self.shape(k));
        assert_eq!(g * share, m, "kernel groups do not cover the maps");
        let pad = (l - 1) / 2;
        let (xv, kv) = (self.value(x), self.value(k));
        let mut out = vec![0.0; nb * m * t];
        for bm in 0..nb * m {
            let kern = &kv[((bm % m) / share) * l..][..l];
            let row = &xv[bm * t..(bm + 1) * t];
            let o = &mut out[bm * t..(bm + 1) * t];
            for (li, &kw) in kern.iter().enumerate() {
                // o[i] += kw * row[i + li - pad] where in range
                let lo = pad.saturating_sub(li);
                let hi = (t + pad).saturating_sub(li).min(t);
                for i in lo..hi {
                    o[i] += kw * row[i + li - pad];
                }
            }
        }
        self.push(out, vec![nb, m, t], Op::DepthwiseConv { x, k, share })
    }

    /// Training-mode batch norm over (batch, time) for each map.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, BatchStats) {
        let (nb, m, t) = dims3(self.shape(x));
        let xv = self.value(x);
        let n = (nb * t) as f64;
        let mut mean = vec![0.0; m];
        let mut var = vec![0.0; m];
        for b in 0..nb {
            for c in 0..m {
                mean[c] += xv[(b * m + c) * t..][..t].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        for b in 0..nb {
            for c in 0..m {
                var[c] += xv[(b * m + c) * t..][..t].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for (i, (&v, (h, o))) in xv.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let c = (i / t) % m;
            *h = (v - mean[c]) * inv_std[c];
            *o = gv[c] * *h + bv[c];
        }
        let stats = BatchStats { mean, var };
        let v = self.push(out, vec![nb, m, t], Op::BatchNorm { x, gamma, beta, xhat, inv_std });
        (v, stats)
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn frozen_norm(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Var {
        let (_, m, t) = dims3(self.shape(x));
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = (i / t) % m;
                (v - mean[c]) * inv_std[c] * gv[c] + bv[c]
            })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::FrozenNorm { x, gamma, beta, mean: mean.to_vec(), inv_std })
    }

    /// Non-overlapping mean pool of width `p` along time; a remainder is dropped.
    pub fn avg_pool(&mut self, x: Var, p: usize) -> Var {
        let (nb, m, t) = dims3(self.shape(x));
        let to = t / p;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(nb * m * to);
        for row in xv.chunks_exact(t) {
            out.extend((0..to).map(|i| row[i * p..(i + 1) * p].iter().sum::<f64>() / p as f64));
        }
        self.push(out, vec![nb, m, to], Op::AvgPool { x, p })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(shape.iter().product::<usize>(), self.value(x).len());
        let out = self.value(x).to_vec();
        self.push(out, shape.to_vec(), Op::Reshape(x))
    }

    /// Mean softmax cross-entropy of `logits: [n, k]` against class indices.
    pub fn softmax_ce(&mut self, logits: Var, labels: &[usize]) -> Var {
        let (n, k) = dims2(self.shape(logits));
        assert_eq!(labels.len(), n);
        let probs: Vec<f64> = self.value(logits).chunks_exact(k).flat_map(softmax).collect();
        let loss = -labels.iter().enumerate().map(|(i, &y)| probs[i * k + y].max(f64::MIN_POSITIVE).ln()).sum::<f64>()
            / n as f64;
        self.push(vec![loss], vec![1], Op::SoftmaxCe { logits, labels: labels.to_vec(), probs })
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward root must be a scalar");
        self.grads = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        self.grads[root.0][0] = 1.0;
        for i in (0..=root.0).rev() {
            let dy = std::mem::take(&mut self.grads[i]);
            if dy.iter().all(|&g| g == 0.0) {
                self.grads[i] = dy;
                continue;
            }
            self.backprop_node(i, &dy);
            self.grads[i] = dy;
        }
    }

    fn backprop_node(&mut self, i: usize, dy: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = dims2(&nodes[a.0].shape);
                let m = node.shape[1];
                let mut da = std::mem::take(&mut grads[a.0]);
                gemm(n, m, k, dy, (m as isize, 1), &nodes[b.0].value, (1, m as isize), 1.0, &mut da);
                grads[a.0] = da;
                let mut db = std::mem::take(&mut grads[b.0]);
                gemm(k, n, m, &nodes[a.0].value, (1, k as isize), dy, (m as isize, 1), 1.0, &mut db);
                grads[b.0] = db;
            }
            Op::AddRow(x, bias) => {
                let m = node.shape[1];
                grads[x.0].iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                let db = &mut grads[bias.0];
                for row in dy.chunks_exact(m) {
                    db.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
            }
            Op::Relu(x) => {
                let xv = &nodes[x.0].value;
                for ((g, d), &v) in grads[x.0].iter_mut().zip(dy).zip(xv) {
                    if v > 0.0 {
                        *g += d;
                    }
                }
            }
            Op::Elu(x) => {
                let xv = &nodes[x.0].value;
                for ((g, d), (&v, &y)) in grads[x.0].iter_mut().zip(dy).zip(xv.iter().zip(&node.value)) {
                    *g += if v > 0.0 { *d } else { d * (y + 1.0) };
                }
            }
            Op::Mix(w, x) => {
                let (m, c) = dims2(&nodes[w.0].shape);
                let (nb, _, t) = dims3(&nodes[x.0].shape);
                let (wv, xv) = (&nodes[w.0].value, &nodes[x.0].value);
                let mut dw = std::mem::take(&mut grads[w.0]);
                let mut dx = std::mem::take(&mut grads[x.0]);
                for b in 0..nb {
                    let dyb = &dy[b * m * t..];
                    // dW += dY_b * X_b^T
                    gemm(m, t, c, dyb, (t as isize, 1), &xv[b * c * t..], (1, t as isize), 1.0, &mut dw);
                    // dX_b += W^T * dY_b
                    gemm(c, m, t, wv, (1, c as isize), dyb, (t as isize, 1), 1.0, &mut dx[b * c * t..(b + 1) * c * t]);
                }
                grads[w.0] = dw;
                grads[x.0] = dx;
            }
            Op::DepthwiseConv { x, k, share } => {
                let (nb, m, t) = dims3(&node.shape);
                let l = nodes[k.0].shape[1];
                let pad = (l - 1) / 2;
                let (xv, kv) = (&nodes[x.0].value, &nodes[k.0].value);
                let mut dx = std::mem::take(&mut grads[x.0]);
                let mut dk = std::mem::take(&mut grads[k.0]);
                for bm in 0..nb * m {
                    let g = (bm % m) / share;
                    let row = &xv[bm * t..(bm + 1) * t];
                    let d = &dy[bm * t..(bm + 1) * t];
                    let dxr = &mut dx[bm * t..(bm + 1) * t];
                    for li in 0..l {
                        let lo = pad.saturating_sub(li);
                        let hi = (t + pad).saturating_sub(li).min(t);
                        let kw = kv[g * l + li];
                        let mut acc = 0.0;
                        for i in lo..hi {
                            let j = i + li - pad;
                            acc += d[i] * row[j];
                            dxr[j] += d[i] * kw;
                        }
                        dk[g * l + li] += acc;
                    }
                }
                grads[x.0] = dx;
                grads[k.0] = dk;
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let (nb, m, t) = dims3(&node.shape);
                let n = (nb * t) as f64;
                let gv = &nodes[gamma.0].value;
                let mut sum_d = vec![0.0; m];
                let mut sum_dx = vec![0.0; m];
                for (i, (&d, &h)) in dy.iter().zip(xhat).enumerate() {
                    let c = (i / t) % m;
                    sum_d[c] += d;
                    sum_dx[c] += d * h;
                }
                for c in 0..m {
                    grads[gamma.0][c] += sum_dx[c];
                    grads[beta.0][c] += sum_d[c];
                }
                let dx = &mut grads[x.0];
                for (i, (&d, &h)) in dy.iter().zip(xhat).enumerate() {
                    let c = (i / t) % m;
                    dx[i] += gv[c] * inv_std[c] / n * (n * d - sum_d[c] - h * sum_dx[c]);
                }
            }
            Op::FrozenNorm { x, gamma, beta, mean, inv_std } => {
                let (_, m, t) = dims3(&node.shape);
                let (xv, gv) = (&nodes[x.0].value, &nodes[gamma.0].value);
                for (i, &d) in dy.iter().enumerate() {
                    let c = (i / t) % m;
                    grads[x.0][i] += d * inv_std[c] * gv[c];
                    grads[gamma.0][c] += d * (xv[i] - mean[c]) * inv_std[c];
                    grads[beta.0][c] += d;
                }
            }
            Op::AvgPool { x, p } => {
                let t = nodes[x.0].shape[2];
                let to = node.shape[2];
                let dx = &mut grads[x.0];
                for (r, d) in dy.chunks_exact(to).enumerate() {
                    for (i, &g) in d.iter().enumerate() {
                        for v in &mut dx[r * t + i * p..r * t + (i + 1) * p] {
                            *v += g / *p as f64;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                grads[x.0].iter_mut().zip(dy).for_each(|(g, d)| *g += d);
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let k = nodes[logits.0].shape[1];
                let scale = dy[0] / labels.len() as f64;
                let dl = &mut grads[logits.0];
                for (i, &y) in labels.iter().enumerate() {
                    for j in 0..k {
                        let target = if j == y { 1.0 } else { 0.0 };
                        dl[i * k + j] += scale * (probs[i * k + j] - target);
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
