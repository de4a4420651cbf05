use std::collections::BTreeMap;
use std::fmt;

use super::{aggregate_votes, Aggregation, Dataset, DecoderError, DecoderModel, Prediction, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_recall: Vec<f64>,
    pub chance_level: f64,
    pub n: usize,
}

impl EvalReport {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, k: usize) -> Result<Self> {
        let mut confusion = vec![vec![0usize; k]; k];
        let mut n = 0;
        for (t, p) in pairs {
            confusion[t][p] += 1;
            n += 1;
        }
        if n == 0 {
            return Err(DecoderError::Empty);
        }
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let per_class_recall = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let total: usize = row.iter().sum();
                if total == 0 {
                    0.0
                } else {
                    row[c] as f64 / total as f64
                }
            })
            .collect();
        Ok(Self { accuracy: correct as f64 / n as f64, confusion, per_class_recall, chance_level: 1.0 / k as f64, n })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy {:.4} (n = {}, chance {:.4})", self.accuracy, self.n, self.chance_level)?;
        for (c, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
            writeln!(f, "  {c}: {}  recall {:.4}", cells.join(""), self.per_class_recall[c])?;
        }
        Ok(())
    }
}

/// Window-level and trial-level (majority vote over a trial's windows) scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub window: EvalReport,
    pub trial: EvalReport,
}

pub fn evaluate(m: &DecoderModel, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(DecoderError::Empty);
    }
    if test.task != m.task() {
        return Err(DecoderError::Dimension(format!("{} model evaluated on {} data", m.task(), test.task)));
    }
    let preds = m.predict_dataset(test)?;
    let k = m.n_classes();
    let window = EvalReport::from_pairs(test.labels.iter().zip(&preds).map(|(t, p)| (t.index(), p.label.index())), k)?;
    let mut by_trial: BTreeMap<usize, (usize, Vec<Prediction>)> = BTreeMap::new();
    for ((&tid, label), p) in test.trial_ids.iter().zip(&test.labels).zip(preds) {
        by_trial.entry(tid).or_insert_with(|| (label.index(), Vec::new())).1.push(p);
    }
    let mut pairs = Vec::with_capacity(by_trial.len());
    for (truth, ps) in by_trial.values() {
        pairs.push((*truth, aggregate_votes(ps, Aggregation::MajorityVote)?.label.index()));
    }
    Ok(Evaluation { window, trial: EvalReport::from_pairs(pairs, k)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_give_diagonal() {
        let r = EvalReport::from_pairs([(0, 0), (1, 1), (2, 2), (1, 1)], 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn constant_prediction_on_balanced_three_class() {
        let r = EvalReport::from_pairs((0..300).map(|i| (i % 3, 1)), 3).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class_recall, vec![0.0, 1.0, 0.0]);
        for (c, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), 100, "row {c}");
        }
    }

    #[test]
    fn empty_is_an_error() {
        assert!(EvalReport::from_pairs(std::iter::empty(), 2).is_err());
    }
}
