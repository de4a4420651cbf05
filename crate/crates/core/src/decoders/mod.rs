//! The six decoders: Ridge, Knn, DecisionTree, LinearSvm, Mlp and CompactCnn.
//!
//! All kinds except CompactCnn consume DE feature vectors; CompactCnn
//! consumes time-domain scalp windows, box-car decimated to about 250 Hz before the
//! first layer. Inputs are z-scored with statistics frozen at training time
//! (per feature, or per channel for windows). Every parameter is rounded to
//! f32 when training ends, so a saved model predicts bit-identically.

pub mod autograd;
mod dataset;
mod eval;
mod io;
mod linear;
pub mod nn;
pub mod tree;
mod vote;

pub use dataset::{stratified_split, Dataset, InputRef, Inputs};
pub use eval::{evaluate, EvalReport, Evaluation};
pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use vote::{aggregate_votes, argmax, Aggregation};

use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::FrequencyProfile;
use crate::recording::{ClassLabel, Task};
use nn::{CompactCnn, Mlp, Net};
use tree::Tree;

pub const KNN_K: usize = 5;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty input")]
    Empty,
    #[error("class {label} has {found} trials, at least 2 are needed to split")]
    TooFewTrials { label: ClassLabel, found: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("model file version {found} is not supported (reader is at {supported})")]
    Version { found: u32, supported: u32 },
    #[error("model kind {kind} does not match the stored tensors: {detail}")]
    KindMismatch { kind: DecoderKind, detail: String },
    #[error("weight blob holds {found} values, header describes {expected}")]
    BlobLength { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DecoderError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecoderKind {
    Ridge,
    Knn,
    DecisionTree,
    LinearSvm,
    Mlp,
    CompactCnn,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 6] =
        [Self::Ridge, Self::Knn, Self::DecisionTree, Self::LinearSvm, Self::Mlp, Self::CompactCnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ridge => "Ridge",
            Self::Knn => "Knn",
            Self::DecisionTree => "DecisionTree",
            Self::LinearSvm => "LinearSvm",
            Self::Mlp => "Mlp",
            Self::CompactCnn => "CompactCnn",
        }
    }

    /// True for kinds that consume time-domain windows instead of features.
    pub fn uses_windows(self) -> bool {
        self == Self::CompactCnn
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecoderKind {
    type Err = DecoderError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .or(match s.to_ascii_lowercase().as_str() {
                "svm" => Some(Self::LinearSvm),
                "tree" | "dt" => Some(Self::DecisionTree),
                "cnn" | "eegnet" => Some(Self::CompactCnn),
                _ => None,
            })
            .ok_or_else(|| DecoderError::Config(format!("unknown decoder kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1000, learning_rate: 1e-3, batch_size: 64, l2: 1e-4, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(DecoderError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(DecoderError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DecoderError::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(DecoderError::Config(format!("l2 {} must be non-negative", self.l2)));
        }
        Ok(())
    }
}

/// A named dense parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: &str, shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor {name} data does not match shape");
        Self { name: name.to_string(), shape: shape.to_vec(), data }
    }

    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Self::new(name, shape, vec![0.0; shape.iter().product()])
    }

    pub fn round_to_f32(&mut self) {
        self.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

/// Expected input layout of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSpec {
    Features { dim: usize },
    Window { channels: usize, len: usize, decimation: usize },
}

impl InputSpec {
    /// Number of values in one raw input row.
    pub fn row_len(&self) -> usize {
        match *self {
            Self::Features { dim } => dim,
            Self::Window { channels, len, .. } => channels * len,
        }
    }
}

/// Per-feature (or per-channel) z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Statistics of the `groups` interleaved blocks of `rows`: each row is
    /// `groups` contiguous runs of `run` values.
    fn fit(rows: &[f64], groups: usize, run: usize) -> Self {
        let row = groups * run;
        let n = rows.len() / row;
        let count = (n * run) as f64;
        let mut mean = vec![0.0; groups];
        let mut sq = vec![0.0; groups];
        for r in rows.chunks_exact(row) {
            for (g, block) in r.chunks_exact(run).enumerate() {
                mean[g] += block.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for r in rows.chunks_exact(row) {
            for (g, block) in r.chunks_exact(run).enumerate() {
                sq[g] += block.iter().map(|v| (v - mean[g]).powi(2)).sum::<f64>();
            }
        }
        let std = sq.iter().map(|s| (s / count).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect::<Vec<_>>();
        let r32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect();
        Self { mean: r32(mean), std: r32(std) }
    }

    fn apply(&self, row: &mut [f64]) {
        let run = row.len() / self.mean.len();
        for (g, block) in row.chunks_exact_mut(run).enumerate() {
            let (m, s) = (self.mean[g], self.std[g]);
            block.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Params {
    Linear { weights: Tensor, bias: Tensor },
    Knn { k: usize, train: Tensor, labels: Vec<usize> },
    Tree(Tree),
    Mlp(Mlp),
    Cnn(CompactCnn),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: ClassLabel,
    /// Non-negative, sums to 1.
    pub scores: Vec<f64>,
}

/// A trained decoder. Immutable after training; inference is a pure function
/// of the stored parameters and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    kind: DecoderKind,
    task: Task,
    profile: FrequencyProfile,
    seed: u64,
    input: InputSpec,
    norm: Normalizer,
    params: Params,
    hyper: Vec<(String, String)>,
}

impl DecoderModel {
    pub fn kind(&self) -> DecoderKind {
        self.kind
    }
    pub fn task(&self) -> Task {
        self.task
    }
    pub fn profile(&self) -> FrequencyProfile {
        self.profile
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn n_classes(&self) -> usize {
        self.task.n_classes()
    }
    pub fn input_spec(&self) -> InputSpec {
        self.input
    }
    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }
    /// Hyperparameters recorded in the model header.
    pub fn hyperparameters(&self) -> &[(String, String)] {
        &self.hyper
    }

    /// Hash over every stored parameter bit pattern.
    pub fn parameter_digest(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for t in self.tensors() {
            t.name.hash(&mut h);
            t.shape.hash(&mut h);
            t.data.iter().for_each(|v| v.to_bits().hash(&mut h));
        }
        self.norm.mean.iter().chain(&self.norm.std).for_each(|v| v.to_bits().hash(&mut h));
        h.finish()
    }

    pub(crate) fn tensors(&self) -> Vec<Tensor> {
        match &self.params {
            Params::Linear { weights, bias } => vec![weights.clone(), bias.clone()],
            Params::Knn { train, labels, .. } => {
                vec![train.clone(), Tensor::new("labels", &[labels.len()], labels.iter().map(|&l| l as f64).collect())]
            }
            Params::Tree(t) => {
                let rows = t.to_rows();
                vec![Tensor::new("nodes", &[t.nodes.len(), 4 + t.n_classes], rows)]
            }
            Params::Mlp(m) => m.tensors.clone(),
            Params::Cnn(c) => c.tensors.clone(),
        }
    }

    /// Raw input row to a normalized, network-ready row.
    fn prepare(&self, x: InputRef<'_>) -> Result<Vec<f64>> {
        let mut row = match (x, self.input) {
            (InputRef::Features(v), InputSpec::Features { dim }) if v.len() == dim => v.to_vec(),
            (InputRef::Window(v), InputSpec::Window { channels, len, decimation }) if v.len() == channels * len => {
                nn::decimate(v, channels, decimation)
            }
            (x, spec) => {
                let got = match x {
                    InputRef::Features(v) => format!("{} features", v.len()),
                    InputRef::Window(v) => format!("a window of {} values", v.len()),
                };
                return Err(DecoderError::Dimension(format!("{} expects {spec:?}, got {got}", self.kind)));
            }
        };
        self.norm.apply(&mut row);
        Ok(row)
    }

    pub fn predict(&self, x: InputRef<'_>) -> Result<Prediction> {
        let row = self.prepare(x)?;
        let k = self.n_classes();
        let scores = match &self.params {
            Params::Linear { weights, bias } => autograd::softmax(&linear::margins(weights, bias, &row)),
            Params::Knn { k: nn_k, train, labels } => knn_votes(train, labels, *nn_k, k, &row),
            Params::Tree(t) => t.leaf_dist(&row).to_vec(),
            Params::Mlp(m) => autograd::softmax(&m.logits(&row)),
            Params::Cnn(c) => autograd::softmax(&c.logits(&row)),
        };
        let label = ClassLabel::new(self.task, argmax(&scores) as u8).expect("argmax below class count");
        Ok(Prediction { label, scores })
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<Prediction>> {
        (0..ds.len()).map(|i| self.predict(ds.row(i))).collect()
    }
}

/// Scores are neighbour vote fractions among the `k` nearest rows; distance
/// ties go to the earlier training row.
fn knn_votes(train: &Tensor, labels: &[usize], k: usize, n_classes: usize, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut dist: Vec<(f64, usize)> = train
        .data
        .chunks_exact(d)
        .enumerate()
        .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let k = k.min(dist.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, cmp);
    }
    let mut votes = vec![0.0; n_classes];
    for &(_, i) in &dist[..k] {
        votes[labels[i]] += 1.0;
    }
    votes.iter_mut().for_each(|v| *v /= k as f64);
    votes
}

fn hyper(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Prepared `[n x row]` matrix and the frozen normalizer.
fn prepare_training(ds: &Dataset) -> (Vec<f64>, InputSpec, Normalizer) {
    match &ds.inputs {
        Inputs::Features { dim, values } => {
            let norm = Normalizer::fit(values, *dim, 1);
            let mut x = values.clone();
            x.chunks_exact_mut(*dim).for_each(|r| norm.apply(r));
            (x, InputSpec::Features { dim: *dim }, norm)
        }
        Inputs::Windows { channels, len, values, sample_rate_hz } => {
            let dec = nn::decimation_for(*sample_rate_hz);
            let mut x: Vec<f64> =
                values.chunks_exact(channels * len).flat_map(|w| nn::decimate(w, *channels, dec)).collect();
            let norm = Normalizer::fit(&x, *channels, len / dec);
            x.chunks_exact_mut(channels * (len / dec)).for_each(|r| norm.apply(r));
            (x, InputSpec::Window { channels: *channels, len: *len, decimation: dec }, norm)
        }
    }
}

/// Trains one decoder. See [`fit`] for the loss trajectory.
pub fn train(ds: &Dataset, kind: DecoderKind, cfg: &TrainConfig) -> Result<DecoderModel> {
    fit(ds, kind, cfg).map(|(m, _)| m)
}

/// Trains one decoder and returns the per-epoch training loss (empty for
/// the kinds without an iterative fit).
pub fn fit(ds: &Dataset, kind: DecoderKind, cfg: &TrainConfig) -> Result<(DecoderModel, Vec<f64>)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(DecoderError::Empty);
    }
    if kind.uses_windows() != matches!(ds.inputs, Inputs::Windows { .. }) {
        return Err(DecoderError::Dimension(format!(
            "{kind} needs {} inputs",
            if kind.uses_windows() { "window" } else { "feature" }
        )));
    }
    let k = ds.n_classes();
    let labels = ds.class_indices();
    let (x, input, norm) = prepare_training(ds);
    let row = x.len() / ds.len();
    let train_cfg = |extra: &[(&str, String)]| {
        let mut h = hyper(&[
            ("epochs", cfg.epochs.to_string()),
            ("learning_rate", cfg.learning_rate.to_string()),
            ("batch_size", cfg.batch_size.to_string()),
            ("l2", cfg.l2.to_string()),
            ("optimizer", "adam".into()),
        ]);
        h.extend(hyper(extra));
        h
    };
    let (params, hyper, history) = match kind {
        DecoderKind::Ridge => {
            let (weights, bias) = linear::fit_ridge(&x, row, &labels, k, cfg.l2)?;
            (Params::Linear { weights, bias }, hyper(&[("l2", cfg.l2.to_string()), ("targets", "pm1".into())]), vec![])
        }
        DecoderKind::LinearSvm => {
            let (weights, bias, hist) = linear::fit_svm(&x, row, &labels, k, cfg)?;
            (Params::Linear { weights, bias }, train_cfg(&[("loss", "hinge".into())]), hist)
        }
        DecoderKind::Knn => {
            let mut train = Tensor::new("train", &[ds.len(), row], x);
            train.round_to_f32();
            let nn_k = KNN_K.min(ds.len());
            (
                Params::Knn { k: nn_k, train, labels },
                hyper(&[("k", nn_k.to_string()), ("metric", "euclidean".into())]),
                vec![],
            )
        }
        DecoderKind::DecisionTree => {
            let t = Tree::fit(&x, row, &labels, k, tree::MAX_DEPTH, tree::MIN_LEAF);
            let h = hyper(&[
                ("criterion", "gini".into()),
                ("max_depth", tree::MAX_DEPTH.to_string()),
                ("min_leaf", tree::MIN_LEAF.to_string()),
            ]);
            (Params::Tree(t), h, vec![])
        }
        DecoderKind::Mlp => {
            let mut net = Mlp::new(row, k, cfg.seed);
            let hist = nn::train_net(&mut net, &x, &labels, cfg)?;
            let [h1, h2] = nn::MLP_HIDDEN;
            (Params::Mlp(net), train_cfg(&[("hidden", format!("{h1},{h2}")), ("activation", "relu".into())]), hist)
        }
        DecoderKind::CompactCnn => {
            let InputSpec::Window { channels, len, decimation } = input else { unreachable!() };
            let mut net = CompactCnn::new(channels, len / decimation, k, cfg.seed)?;
            let hist = nn::train_net(&mut net, &x, &labels, cfg)?;
            let h = train_cfg(&[
                ("f1", nn::CNN_F1.to_string()),
                ("depth_multiplier", nn::CNN_DEPTH.to_string()),
                ("f2", nn::CNN_F2.to_string()),
                ("temporal_kernel", nn::CNN_TEMPORAL_KERNEL.to_string()),
                ("separable_kernel", nn::CNN_SEPARABLE_KERNEL.to_string()),
                ("pool", format!("{},{}", nn::CNN_POOL1, nn::CNN_POOL2)),
                ("activation", "elu".into()),
                ("dropout", "none".into()),
            ]);
            (Params::Cnn(net), h, hist)
        }
    };
    let model = DecoderModel { kind, task: ds.task, profile: ds.profile, seed: cfg.seed, input, norm, params, hyper };
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two well separated clusters per class along distinct axes.
    fn separable(task: Task, per_class: usize, dim: usize) -> Dataset {
        let k = task.n_classes();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per_class * k {
            let c = i % k;
            for j in 0..dim {
                let jitter = (((i * 31 + j * 17) % 13) as f64 - 6.0) / 20.0;
                values.push(if j % k == c { 4.0 } else { 0.0 } + jitter);
            }
            labels.push(ClassLabel::new(task, c as u8).unwrap());
        }
        let ids = (0..labels.len()).collect();
        Dataset::new(Inputs::Features { dim, values }, labels, ids, task, FrequencyProfile::F40).unwrap()
    }

    #[test]
    fn every_feature_kind_fits_separable_data() {
        let ds = separable(Task::VI, 20, 6);
        let cfg = TrainConfig { epochs: 60, learning_rate: 1e-2, ..TrainConfig::default() };
        for kind in DecoderKind::ALL.into_iter().filter(|k| !k.uses_windows()) {
            let m = train(&ds, kind, &cfg).unwrap();
            let acc = evaluate(&m, &ds).unwrap().window.accuracy;
            assert_eq!(acc, 1.0, "{kind}");
        }
    }

    #[test]
    fn knn_scores_are_vote_fractions() {
        // One query point with four class-0 and one class-1 neighbour nearby.
        let mut values = vec![0.0, 0.1, 0.2, 0.3, 0.4];
        let mut labels =
            vec![ClassLabel::LEFT, ClassLabel::LEFT, ClassLabel::LEFT, ClassLabel::LEFT, ClassLabel::RIGHT];
        for i in 0..6 {
            values.push(50.0 + i as f64);
            labels.push(ClassLabel::RIGHT);
        }
        let ids = (0..labels.len()).collect();
        let ds =
            Dataset::new(Inputs::Features { dim: 1, values }, labels, ids, Task::MI, FrequencyProfile::F40).unwrap();
        let m = train(&ds, DecoderKind::Knn, &TrainConfig::default()).unwrap();
        let raw = 0.2;
        let p = m.predict(InputRef::Features(&[raw])).unwrap();
        assert_eq!(p.label, ClassLabel::LEFT);
        assert_eq!(p.scores, vec![0.8, 0.2]);
    }

    #[test]
    fn tied_scores_pick_class_zero() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn wrong_input_width_rejected() {
        let ds = separable(Task::MI, 10, 4);
        let m = train(&ds, DecoderKind::Ridge, &TrainConfig::default()).unwrap();
        assert!(matches!(m.predict(InputRef::Features(&[1.0; 3])), Err(DecoderError::Dimension(_))));
        assert!(matches!(m.predict(InputRef::Window(&[1.0; 4])), Err(DecoderError::Dimension(_))));
    }

    #[test]
    fn cnn_rejects_feature_dataset() {
        let ds = separable(Task::MI, 10, 4);
        assert!(train(&ds, DecoderKind::CompactCnn, &TrainConfig::default()).is_err());
    }

    #[test]
    fn deterministic_training() {
        let ds = separable(Task::VI, 10, 5);
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        for kind in
            [DecoderKind::Ridge, DecoderKind::DecisionTree, DecoderKind::Knn, DecoderKind::Mlp, DecoderKind::LinearSvm]
        {
            let (a, ha) = fit(&ds, kind, &cfg).unwrap();
            let (b, hb) = fit(&ds, kind, &cfg).unwrap();
            assert_eq!(a, b, "{kind}");
            assert_eq!(ha, hb, "{kind}");
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let ds = separable(Task::MI, 4, 2);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(train(&ds, DecoderKind::Mlp, &cfg), Err(DecoderError::Config(_))));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in DecoderKind::ALL {
            assert_eq!(k.to_string().parse::<DecoderKind>().unwrap(), k);
        }
        assert_eq!("svm".parse::<DecoderKind>().unwrap(), DecoderKind::LinearSvm);
    }
}
