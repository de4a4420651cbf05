//! Per-trial outcomes, the stage-time ledger and the session report.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::decoders::{Aggregation, Prediction};
use crate::recording::ClassLabel;

/// Published system accuracy, shown next to our estimates.
pub const REFERENCE_SYSTEM_ACCURACY: f64 = 0.2088;
/// Published component rates: VI decode, grasp, MI decode, place.
pub const REFERENCE_COMPONENT_RATES: [f64; 4] = [0.4023, 0.7611, 0.6259, 1.0];

/// Stage durations in whole milliseconds. `total_ms` is always the exact
/// sum of the eight stages, so the ledger closes by construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    pub prepare_ms: u64,
    pub vi_task_ms: u64,
    pub vi_data_proc_ms: u64,
    pub vi_infer_ms: u64,
    pub mi_task_ms: u64,
    pub mi_data_proc_ms: u64,
    pub mi_infer_ms: u64,
    pub robot_exec_ms: u64,
    pub total_ms: u64,
}

pub const STAGE_NAMES: [&str; 9] =
    ["Prepare", "VI Task", "VI Data Proc.", "VI Infer", "MI Task", "MI Data Proc.", "MI Infer", "Robot Exec.", "Total"];

fn ms(seconds: f64) -> u64 {
    (seconds.max(0.0) * 1000.0).round() as u64
}

impl StageTiming {
    /// Builds the ledger from stage durations in seconds: `[prepare,
    /// vi_task, vi_data_proc, vi_infer, mi_task, mi_data_proc, mi_infer,
    /// robot_exec]`.
    pub fn from_seconds(stages: [f64; 8]) -> Self {
        Self::from_ms(stages.map(ms))
    }

    pub fn from_ms(s: [u64; 8]) -> Self {
        Self {
            prepare_ms: s[0],
            vi_task_ms: s[1],
            vi_data_proc_ms: s[2],
            vi_infer_ms: s[3],
            mi_task_ms: s[4],
            mi_data_proc_ms: s[5],
            mi_infer_ms: s[6],
            robot_exec_ms: s[7],
            total_ms: s.iter().sum(),
        }
    }

    pub fn stages_ms(&self) -> [u64; 8] {
        [
            self.prepare_ms,
            self.vi_task_ms,
            self.vi_data_proc_ms,
            self.vi_infer_ms,
            self.mi_task_ms,
            self.mi_data_proc_ms,
            self.mi_infer_ms,
            self.robot_exec_ms,
        ]
    }

    pub fn columns_ms(&self) -> [u64; 9] {
        let s = self.stages_ms();
        [s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], self.total_ms]
    }

    /// |sum of stages - total| in seconds.
    pub fn ledger_error_s(&self) -> f64 {
        (self.stages_ms().iter().sum::<u64>() as f64 - self.total_ms as f64).abs() / 1000.0
    }

    /// Stage-wise mean, each rounded to the millisecond.
    pub fn mean(rows: &[StageTiming]) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mut s = [0u64; 8];
        for (i, v) in s.iter_mut().enumerate() {
            *v = (rows.iter().map(|r| r.stages_ms()[i] as f64).sum::<f64>() / n).round() as u64;
        }
        Some(Self::from_ms(s))
    }
}

fn secs(ms: u64) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub index: usize,
    pub true_vi: Option<ClassLabel>,
    pub true_mi: Option<ClassLabel>,
    /// `None` when the trial was aborted before decoding.
    pub decoded_vi: Option<Prediction>,
    pub decoded_mi: Option<Prediction>,
    pub vi_votes: Vec<usize>,
    pub mi_votes: Vec<usize>,
    pub action: String,
    pub grasp_ok: bool,
    pub place_ok: bool,
    pub system_success: bool,
    pub rng_draws: Vec<f64>,
    pub timing: StageTiming,
    pub failure: Option<String>,
}

impl TrialOutcome {
    pub fn vi_correct(&self) -> bool {
        matches!((&self.decoded_vi, self.true_vi), (Some(p), Some(t)) if p.label == t)
    }

    pub fn mi_correct(&self) -> bool {
        matches!((&self.decoded_mi, self.true_mi), (Some(p), Some(t)) if p.label == t)
    }

    pub fn log_line(&self) -> String {
        let name = |l: Option<ClassLabel>| l.map_or("-", |l| l.name());
        let dec = |p: &Option<Prediction>| p.as_ref().map_or("-", |p| p.label.name());
        let votes = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let draws = self.rng_draws.iter().map(|d| format!("{d:.6}")).collect::<Vec<_>>().join(",");
        let mut s = format!(
            "trial {:>3} truth={}/{} decoded={}/{} votes_vi=[{}] votes_mi=[{}] action=\"{}\" grasp={} place={} success={} total_s={} draws=[{}]",
            self.index,
            name(self.true_vi),
            name(self.true_mi),
            dec(&self.decoded_vi),
            dec(&self.decoded_mi),
            votes(&self.vi_votes),
            votes(&self.mi_votes),
            self.action,
            self.grasp_ok as u8,
            self.place_ok as u8,
            self.system_success as u8,
            secs(self.timing.total_ms),
            draws,
        );
        if let Some(f) = &self.failure {
            let _ = write!(s, " failure=\"{f}\"");
        }
        s
    }
}

/// Fraction with an explicit count, `None` when nothing was counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub hits: usize,
    pub n: usize,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        (self.n > 0).then(|| self.hits as f64 / self.n as f64)
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{:6.2} ({}/{})", 100.0 * v, self.hits, self.n),
            None => write!(f, "   n/a (0/0)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub trials: Vec<TrialOutcome>,
    pub aggregation: Aggregation,
    /// Models used, `(vi, mi)`, e.g. `Mlp/F40`.
    pub decoders: (String, String),
    pub timing_mode: String,
    /// Set when the session ended before the requested trial count.
    pub partial: Option<String>,
    pub requested_trials: usize,
    /// Parameter digests before and after the session, per model.
    pub digests: Vec<(u64, u64)>,
}

impl SessionReport {
    pub fn vi_accuracy(&self) -> Rate {
        let scored: Vec<_> = self.trials.iter().filter(|t| t.true_vi.is_some()).collect();
        Rate { hits: scored.iter().filter(|t| t.vi_correct()).count(), n: scored.len() }
    }

    pub fn mi_accuracy(&self) -> Rate {
        let scored: Vec<_> = self.trials.iter().filter(|t| t.true_mi.is_some()).collect();
        Rate { hits: scored.iter().filter(|t| t.mi_correct()).count(), n: scored.len() }
    }

    /// Over trials that reached the robot.
    pub fn grasp_rate(&self) -> Rate {
        let attempted: Vec<_> = self.trials.iter().filter(|t| t.failure.is_none()).collect();
        Rate { hits: attempted.iter().filter(|t| t.grasp_ok).count(), n: attempted.len() }
    }

    /// Over trials with a successful grasp.
    pub fn place_rate(&self) -> Rate {
        let grasped: Vec<_> = self.trials.iter().filter(|t| t.grasp_ok).collect();
        Rate { hits: grasped.iter().filter(|t| t.place_ok).count(), n: grasped.len() }
    }

    pub fn system_accuracy(&self) -> Rate {
        Rate { hits: self.trials.iter().filter(|t| t.system_success).count(), n: self.trials.len() }
    }

    /// `p_vi * p_grasp * p_mi * p_place` from this session's own rates.
    pub fn product_estimator(&self) -> Option<f64> {
        Some(
            self.vi_accuracy().value()?
                * self.grasp_rate().value()?
                * self.mi_accuracy().value()?
                * self.place_rate().value().unwrap_or(1.0),
        )
    }

    pub fn mean_timing(&self) -> Option<StageTiming> {
        StageTiming::mean(&self.trials.iter().map(|t| t.timing).collect::<Vec<_>>())
    }

    pub fn zero_shot_ok(&self) -> bool {
        self.digests.iter().all(|(a, b)| a == b)
    }

    /// Three panels (decoding, system, operation times) followed by the
    /// per-trial log. Contains no wall-clock values unless the timing mode
    /// is `measured`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let rule = "-".repeat(78);
        let _ = writeln!(s, "ONLINE SESSION REPORT");
        let _ = writeln!(
            s,
            "decoders: VI {} | MI {} | aggregation {:?}",
            self.decoders.0, self.decoders.1, self.aggregation
        );
        let _ = writeln!(s, "trials: {} of {} requested", self.trials.len(), self.requested_trials);
        if let Some(p) = &self.partial {
            let _ = writeln!(s, "PARTIAL: {p}");
        }
        let _ = writeln!(s, "zero-shot parameters unchanged: {}", if self.zero_shot_ok() { "yes" } else { "NO" });

        let _ = writeln!(s, "{rule}\n[1] Online decoding accuracy (%)");
        let _ = writeln!(s, "  VI (object)          {}", self.vi_accuracy());
        let _ = writeln!(s, "  MI (position)        {}", self.mi_accuracy());

        let _ = writeln!(s, "{rule}\n[2] System accuracy (%)");
        let _ = writeln!(s, "  Grasp query success  {}", self.grasp_rate());
        let _ = writeln!(s, "  Place success        {}", self.place_rate());
        let _ = writeln!(s, "  Empirical joint      {}", self.system_accuracy());
        match self.product_estimator() {
            Some(p) => {
                let _ = writeln!(s, "  Product estimator    {:6.2}", 100.0 * p);
            }
            None => {
                let _ = writeln!(s, "  Product estimator       n/a");
            }
        }
        let r = REFERENCE_COMPONENT_RATES;
        let product: f64 = r.iter().product();
        let _ = writeln!(
            s,
            "  Reference            {:6.2}  (product of reference rates {:.4}*{:.4}*{:.4}*{:.1} = {:.2}; composite definition unstated, gap {:+.2})",
            100.0 * REFERENCE_SYSTEM_ACCURACY,
            r[0],
            r[1],
            r[2],
            r[3],
            100.0 * product,
            100.0 * (REFERENCE_SYSTEM_ACCURACY - product)
        );

        let _ = writeln!(s, "{rule}\n[3] System operation times (s), {} timing", self.timing_mode);
        let header: Vec<String> = STAGE_NAMES.iter().map(|n| format!("{n:>13}")).collect();
        let _ = writeln!(s, "  {:<6}{}", "", header.join(""));
        match self.mean_timing() {
            Some(m) => {
                let cells: Vec<String> = m.columns_ms().iter().map(|&v| format!("{:>13}", secs(v))).collect();
                let _ = writeln!(s, "  {:<6}{}", "mean", cells.join(""));
            }
            None => {
                let _ = writeln!(s, "  {:<6}{:>13}", "mean", "n/a");
            }
        }
        let _ = writeln!(s, "{rule}\nper-trial log");
        for t in &self.trials {
            let _ = writeln!(s, "  {}", t.log_line());
        }
        s
    }
}

impl fmt::Display for SessionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_closes_on_reference_budget() {
        let t = StageTiming::from_seconds([6.010, 15.0, 0.639, 8.191, 15.0, 0.524, 8.000, 54.872]);
        assert_eq!(t.total_ms, 108_236);
        assert_eq!(t.ledger_error_s(), 0.0);
    }

    #[test]
    fn mean_rounds_stages_then_sums() {
        let a = StageTiming::from_ms([1, 2, 3, 4, 5, 6, 7, 8]);
        let b = StageTiming::from_ms([2, 2, 3, 4, 5, 6, 7, 9]);
        let m = StageTiming::mean(&[a, b]).unwrap();
        assert_eq!(m.total_ms, m.stages_ms().iter().sum::<u64>());
        assert!(StageTiming::mean(&[]).is_none());
    }

    #[test]
    fn empty_report_renders_without_dividing_by_zero() {
        let r = SessionReport {
            trials: vec![],
            aggregation: Aggregation::MajorityVote,
            decoders: ("Mlp/F40".into(), "Mlp/F40".into()),
            timing_mode: "modeled".into(),
            partial: None,
            requested_trials: 0,
            digests: vec![],
        };
        let text = r.render();
        assert!(text.contains("n/a (0/0)"));
        assert!(r.product_estimator().is_none());
        assert!(text.contains("20.88"));
    }
}
