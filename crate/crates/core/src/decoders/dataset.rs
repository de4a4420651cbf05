use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DecoderError, Result};
use crate::features::{AnalysisWindow, FeatureVector};
use crate::preprocess::FrequencyProfile;
use crate::recording::{ClassLabel, Task};

/// Row storage for a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// `[n x dim]` DE features.
    Features { dim: usize, values: Vec<f64> },
    /// `[n x channels x len]` time-domain windows.
    Windows { channels: usize, len: usize, sample_rate_hz: f64, values: Vec<f32> },
}

/// One input row, borrowed.
#[derive(Debug, Clone, Copy)]
pub enum InputRef<'a> {
    Features(&'a [f64]),
    Window(&'a [f32]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Inputs,
    pub labels: Vec<ClassLabel>,
    /// Trial each row was cut from; used to keep trials on one side of a split.
    pub trial_ids: Vec<usize>,
    pub task: Task,
    pub profile: FrequencyProfile,
}

impl Dataset {
    pub fn new(
        inputs: Inputs,
        labels: Vec<ClassLabel>,
        trial_ids: Vec<usize>,
        task: Task,
        profile: FrequencyProfile,
    ) -> Result<Self> {
        let n = match &inputs {
            Inputs::Features { dim, values } => {
                if *dim == 0 || values.len() % dim != 0 {
                    return Err(DecoderError::Dimension(format!("{} values do not tile rows of {dim}", values.len())));
                }
                values.len() / dim
            }
            Inputs::Windows { channels, len, values, .. } => {
                let row = channels * len;
                if row == 0 || values.len() % row != 0 {
                    return Err(DecoderError::Dimension(format!(
                        "{} values do not tile {channels}x{len} windows",
                        values.len()
                    )));
                }
                values.len() / row
            }
        };
        if labels.len() != n || trial_ids.len() != n {
            return Err(DecoderError::Dimension(format!(
                "{n} rows but {} labels and {} trial ids",
                labels.len(),
                trial_ids.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| l.task() != task) {
            return Err(DecoderError::Dimension(format!("label {l} does not belong to task {task}")));
        }
        Ok(Self { inputs, labels, trial_ids, task, profile })
    }

    pub fn from_feature_vectors(rows: &[FeatureVector], task: Task, profile: FrequencyProfile) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.values.len());
        if let Some(r) = rows.iter().find(|r| r.values.len() != dim) {
            return Err(DecoderError::Dimension(format!("feature rows of width {dim} and {}", r.values.len())));
        }
        let values = rows.iter().flat_map(|r| r.values.iter().copied()).collect();
        Self::new(
            Inputs::Features { dim: dim.max(1), values },
            rows.iter().map(|r| r.label).collect(),
            rows.iter().map(|r| r.trial_id).collect(),
            task,
            profile,
        )
    }

    /// Scalp rows of each window, labelled by `label_of(parent_trial)`.
    pub fn from_windows(
        windows: &[AnalysisWindow],
        mut label_of: impl FnMut(usize) -> ClassLabel,
        task: Task,
        profile: FrequencyProfile,
    ) -> Result<Self> {
        let Some(first) = windows.first() else {
            return Err(DecoderError::Empty);
        };
        let len = first.len;
        let sample_rate_hz = first.sample_rate_hz;
        let mut values = Vec::new();
        let mut channels = 0;
        for w in windows {
            let rows = w.scalp_rows();
            if w.len != len || (channels != 0 && rows.len() != channels * len) {
                return Err(DecoderError::Dimension("windows differ in shape".into()));
            }
            channels = rows.len() / len;
            values.extend_from_slice(&rows);
        }
        Self::new(
            Inputs::Windows { channels, len, sample_rate_hz, values },
            windows.iter().map(|w| label_of(w.parent_trial)).collect(),
            windows.iter().map(|w| w.parent_trial).collect(),
            task,
            profile,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.task.n_classes()
    }

    pub fn row(&self, i: usize) -> InputRef<'_> {
        match &self.inputs {
            Inputs::Features { dim, values } => InputRef::Features(&values[i * dim..(i + 1) * dim]),
            Inputs::Windows { channels, len, values, .. } => {
                let r = channels * len;
                InputRef::Window(&values[i * r..(i + 1) * r])
            }
        }
    }

    pub fn class_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.index()).collect()
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let inputs = match &self.inputs {
            Inputs::Features { dim, values } => Inputs::Features {
                dim: *dim,
                values: idx.iter().flat_map(|&i| values[i * dim..(i + 1) * dim].iter().copied()).collect(),
            },
            Inputs::Windows { channels, len, sample_rate_hz, values } => {
                let r = channels * len;
                Inputs::Windows {
                    channels: *channels,
                    len: *len,
                    sample_rate_hz: *sample_rate_hz,
                    values: idx.iter().flat_map(|&i| values[i * r..(i + 1) * r].iter().copied()).collect(),
                }
            }
        };
        Self {
            inputs,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            trial_ids: idx.iter().map(|&i| self.trial_ids[i]).collect(),
            task: self.task,
            profile: self.profile,
        }
    }

    /// Distinct trials in first-seen order, each with the label of its first row.
    pub fn trials(&self) -> Vec<(usize, ClassLabel)> {
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for (&t, &l) in self.trial_ids.iter().zip(&self.labels) {
            if seen.insert(t, ()).is_none() {
                out.push((t, l));
            }
        }
        out
    }
}

/// Splits at trial granularity: each class's trials are shuffled with `seed`
/// and `round(n_class * test_fraction)` of them (at least one when the
/// fraction is positive, at most all but one) go to the test side.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DecoderError::Config(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (t, l) in ds.trials() {
        by_class[l.index()].push(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_trials = std::collections::BTreeSet::new();
    for (c, trials) in by_class.iter_mut().enumerate() {
        if trials.len() < 2 {
            let label = ClassLabel::new(ds.task, c as u8).expect("class index in range");
            return Err(DecoderError::TooFewTrials { label, found: trials.len() });
        }
        trials.shuffle(&mut rng);
        // A non-zero fraction always holds out at least one trial per class.
        let mut n_test = (trials.len() as f64 * test_fraction).round() as usize;
        if test_fraction > 0.0 {
            n_test = n_test.max(1);
        }
        test_trials.extend(trials[..n_test.min(trials.len() - 1)].iter().copied());
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| test_trials.contains(&ds.trial_ids[i]));
    Ok((ds.select(&train), ds.select(&test)))
}
