use serde::{Deserialize, Serialize};

use super::{DecoderError, Prediction, Result};
use crate::recording::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Aggregation {
    #[default]
    MajorityVote,
    MeanScore,
}

impl std::str::FromStr for Aggregation {
    type Err = DecoderError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "majorityvote" | "majority" | "vote" => Ok(Self::MajorityVote),
            "meanscore" | "mean" => Ok(Self::MeanScore),
            _ => Err(DecoderError::Config(format!("unknown aggregation {s:?}"))),
        }
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Combines per-window predictions into one decision.
///
/// `MajorityVote` takes the modal label; ties go to the tied label with the
/// highest mean score, then to the lowest index. `MeanScore` takes the
/// argmax of the averaged scores. The averaged scores are returned either way.
pub fn aggregate_votes(preds: &[Prediction], mode: Aggregation) -> Result<Prediction> {
    let first = preds.first().ok_or(DecoderError::Empty)?;
    let task = first.label.task();
    let k = first.scores.len();
    let mut mean = vec![0.0; k];
    let mut votes = vec![0usize; k];
    for p in preds {
        if p.scores.len() != k || p.label.task() != task {
            return Err(DecoderError::Dimension("predictions disagree on task or class count".into()));
        }
        votes[p.label.index()] += 1;
        mean.iter_mut().zip(&p.scores).for_each(|(m, s)| *m += s);
    }
    mean.iter_mut().for_each(|m| *m /= preds.len() as f64);
    let winner = match mode {
        Aggregation::MeanScore => argmax(&mean),
        Aggregation::MajorityVote => {
            let top = *votes.iter().max().expect("k > 0");
            let mut best: Option<usize> = None;
            for c in (0..k).filter(|&c| votes[c] == top) {
                if best.is_none_or(|b| mean[c] > mean[b]) {
                    best = Some(c);
                }
            }
            best.expect("some class has the top count")
        }
    };
    Ok(Prediction {
        label: ClassLabel::new(task, winner as u8).map_err(|e| DecoderError::Format(e.to_string()))?,
        scores: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::Task;

    fn p(c: u8, scores: &[f64]) -> Prediction {
        Prediction { label: ClassLabel::new(Task::VI, c).unwrap(), scores: scores.to_vec() }
    }

    #[test]
    fn majority_wins() {
        let v = [p(0, &[0.6, 0.3, 0.1]), p(0, &[0.5, 0.4, 0.1]), p(1, &[0.2, 0.7, 0.1])];
        assert_eq!(aggregate_votes(&v, Aggregation::MajorityVote).unwrap().label, ClassLabel::APPLE);
    }

    #[test]
    fn tied_votes_go_to_higher_mean_score() {
        let mut v = Vec::new();
        for _ in 0..10 {
            v.push(Prediction { label: ClassLabel::LEFT, scores: vec![0.51, 0.49] });
            v.push(Prediction { label: ClassLabel::RIGHT, scores: vec![0.41, 0.59] });
        }
        // mean scores 0.46 / 0.54 -> Right
        let out = aggregate_votes(&v, Aggregation::MajorityVote).unwrap();
        assert_eq!(out.label, ClassLabel::RIGHT);
        assert!((out.scores[1] - 0.54).abs() < 1e-12);
    }

    #[test]
    fn full_tie_goes_to_lowest_index() {
        let v = [p(2, &[0.0, 0.5, 0.5]), p(1, &[0.0, 0.5, 0.5])];
        assert_eq!(aggregate_votes(&v, Aggregation::MajorityVote).unwrap().label, ClassLabel::BANANA);
        assert_eq!(aggregate_votes(&v, Aggregation::MeanScore).unwrap().label, ClassLabel::BANANA);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(aggregate_votes(&[], Aggregation::MeanScore).is_err());
    }
}
