//! Online dual-task loop: Prepare, VI task, VI decode, MI task, MI decode,
//! robot execution.
//!
//! Each 15 s task buffer is filtered and re-referenced whole (optionally
//! cleaned with a frozen ICA model), cropped to 3-13 s, cut into 500 ms
//! windows and classified window by window; the window predictions are
//! aggregated into one decision per task. Models are only ever borrowed,
//! and their parameter digests are compared before and after a session.

pub mod report;

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::decoders::{aggregate_votes, Aggregation};
pub use report::{
    Rate, SessionReport, StageTiming, TrialOutcome, REFERENCE_COMPONENT_RATES, REFERENCE_SYSTEM_ACCURACY,
};

use crate::decoders::{DecoderError, DecoderModel, InputRef, Prediction};
use crate::features::{cut_windows, tile_windows, window_len, FeatureError, FeatureExtractor};
use crate::preprocess::{apply_chain, FrequencyProfile, IcaModel, PreprocessError};
use crate::recording::{ClassLabel, Recording, Task};
use crate::robotsim::{scenario_map, Executor, ObjectKind, Placement, RobotConfig, RobotError, Scenario, SimExecutor};
use crate::stream::{StreamError, TaskWindow};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pipeline config: {0}")]
    Config(String),
    #[error("task buffer has {found} samples, crop needs {needed}")]
    BufferTooShort { needed: usize, found: usize },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Stream(#[from] StreamError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Reference per-stage durations in seconds, used by modeled timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageBudget {
    pub prepare_s: f64,
    pub vi_data_proc_s: f64,
    pub vi_infer_s: f64,
    pub mi_data_proc_s: f64,
    pub mi_infer_s: f64,
}

impl Default for StageBudget {
    fn default() -> Self {
        Self { prepare_s: 6.010, vi_data_proc_s: 0.639, vi_infer_s: 8.191, mi_data_proc_s: 0.524, mi_infer_s: 8.000 }
    }
}

/// `Modeled` books the budget for prepare, data processing and inference
/// so that reports are reproducible; `Measured` books wall-clock time for
/// data processing and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TimingMode {
    #[default]
    Modeled,
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub profile: FrequencyProfile,
    /// Seconds from task start.
    pub decode_crop: (f64, f64),
    pub aggregation: Aggregation,
    pub scenario: Scenario,
    pub timing: TimingMode,
    pub budget: StageBudget,
    pub task_seconds: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            profile: FrequencyProfile::F40,
            decode_crop: (3.0, 13.0),
            aggregation: Aggregation::MajorityVote,
            scenario: Scenario::BaseDemo,
            timing: TimingMode::Modeled,
            budget: StageBudget::default(),
            task_seconds: 15.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.decode_crop;
        if !(0.0 <= a && a < b && b <= self.task_seconds) {
            return Err(PipelineError::Config(format!("crop ({a}, {b}) not within [0, {}]", self.task_seconds)));
        }
        Ok(())
    }
}

/// Source of per-window predictions for one task.
#[derive(Debug, Clone, Copy)]
pub enum TaskDecoder<'a> {
    Model(&'a DecoderModel),
    /// Always answers the scripted truth; for system-level checks.
    Oracle(Task),
}

impl TaskDecoder<'_> {
    pub fn task(&self) -> Task {
        match self {
            TaskDecoder::Model(m) => m.task(),
            TaskDecoder::Oracle(t) => *t,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            TaskDecoder::Model(m) => format!("{}/{}", m.kind(), m.profile()),
            TaskDecoder::Oracle(_) => "oracle".into(),
        }
    }

    fn digest(&self) -> Option<u64> {
        match self {
            TaskDecoder::Model(m) => Some(m.parameter_digest()),
            TaskDecoder::Oracle(_) => None,
        }
    }
}

/// One task's decision with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub prediction: Prediction,
    /// Window votes per class.
    pub votes: Vec<usize>,
    pub n_windows: usize,
    pub data_proc_s: f64,
    pub infer_s: f64,
}

pub struct OnlinePipeline<'a> {
    cfg: PipelineConfig,
    vi: TaskDecoder<'a>,
    mi: TaskDecoder<'a>,
    ica: Option<&'a IcaModel>,
}

impl<'a> OnlinePipeline<'a> {
    /// Rejects decoders of the wrong task or trained on another profile.
    pub fn new(
        cfg: PipelineConfig,
        vi: TaskDecoder<'a>,
        mi: TaskDecoder<'a>,
        ica: Option<&'a IcaModel>,
    ) -> Result<Self> {
        cfg.validate()?;
        for (want, d) in [(Task::VI, &vi), (Task::MI, &mi)] {
            if d.task() != want {
                return Err(PipelineError::Config(format!("{want} slot holds a {} decoder", d.task())));
            }
            if let TaskDecoder::Model(m) = d {
                if m.profile() != cfg.profile {
                    return Err(PipelineError::Config(format!(
                        "{want} model was trained on {} but the pipeline runs {}",
                        m.profile(),
                        cfg.profile
                    )));
                }
            }
        }
        Ok(Self { cfg, vi, mi, ica })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Window start offsets inside the crop.
    fn crop(&self, buf: &Recording) -> Result<(usize, Vec<usize>, usize)> {
        let fs = buf.sample_rate_hz();
        let (a, b) = ((self.cfg.decode_crop.0 * fs).round() as usize, (self.cfg.decode_crop.1 * fs).round() as usize);
        if buf.n_samples() < b {
            return Err(PipelineError::BufferTooShort { needed: b, found: buf.n_samples() });
        }
        let w = window_len(fs);
        Ok((a, tile_windows(b - a, w)?, w))
    }

    /// Preprocess, window, predict and aggregate one task buffer.
    pub fn decode(&self, dec: &TaskDecoder<'_>, buf: &Recording, truth: Option<ClassLabel>) -> Result<Decoded> {
        let (offset, starts, w) = self.crop(buf)?;
        let k = dec.task().n_classes();
        let model = match dec {
            TaskDecoder::Oracle(task) => {
                let label =
                    truth.ok_or_else(|| PipelineError::Config(format!("{task} oracle needs scripted truth")))?;
                let mut scores = vec![0.0; k];
                scores[label.index()] = 1.0;
                let preds = vec![Prediction { label, scores }; starts.len()];
                return self.finish(preds, k, 0.0, 0.0);
            }
            TaskDecoder::Model(m) => *m,
        };
        let t0 = Instant::now();
        let clean = apply_chain(buf, self.cfg.profile, self.ica)?;
        let channels: Arc<[_]> = clean.channels().into();
        let fs = clean.sample_rate_hz();
        let windows = cut_windows(&channels, clean.data(), clean.n_samples(), offset, &starts, w, fs, 0);
        let inputs: Vec<Vec<f64>> = if model.kind().uses_windows() {
            vec![]
        } else {
            let fx = FeatureExtractor::new(self.cfg.profile, fs)?;
            let label = dec.task().labels()[0];
            windows
                .iter()
                .map(|win| fx.window_features(win, label).map(|f| f.values))
                .collect::<std::result::Result<_, _>>()?
        };
        let raw: Vec<Vec<f32>> =
            if model.kind().uses_windows() { windows.iter().map(|w| w.scalp_rows()).collect() } else { vec![] };
        let data_proc_s = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let preds = if model.kind().uses_windows() {
            raw.iter().map(|r| model.predict(InputRef::Window(r))).collect::<std::result::Result<Vec<_>, _>>()?
        } else {
            inputs.iter().map(|f| model.predict(InputRef::Features(f))).collect::<std::result::Result<Vec<_>, _>>()?
        };
        self.finish(preds, k, data_proc_s, t1.elapsed().as_secs_f64())
    }

    fn finish(&self, preds: Vec<Prediction>, k: usize, data_proc_s: f64, infer_s: f64) -> Result<Decoded> {
        let mut votes = vec![0; k];
        for p in &preds {
            votes[p.label.index()] += 1;
        }
        let prediction = aggregate_votes(&preds, self.cfg.aggregation)?;
        Ok(Decoded { prediction, votes, n_windows: preds.len(), data_proc_s, infer_s })
    }

    /// One full trial. Never fails: problems are recorded in the outcome
    /// and count as a system failure.
    pub fn run_trial(
        &self,
        index: usize,
        vi_buf: &Recording,
        mi_buf: &Recording,
        truth: (Option<ClassLabel>, Option<ClassLabel>),
        executor: &mut dyn Executor,
    ) -> TrialOutcome {
        let mut out = TrialOutcome {
            index,
            true_vi: truth.0,
            true_mi: truth.1,
            decoded_vi: None,
            decoded_mi: None,
            vi_votes: vec![],
            mi_votes: vec![],
            action: String::new(),
            grasp_ok: false,
            place_ok: false,
            system_success: false,
            rng_draws: vec![],
            timing: StageTiming::default(),
            failure: None,
        };
        let b = &self.cfg.budget;
        let modeled = self.cfg.timing == TimingMode::Modeled;
        let pick = |measured: f64, budget: f64| if modeled { budget } else { measured };
        let vi_task_s = vi_buf.duration_seconds();
        let mi_task_s = mi_buf.duration_seconds();
        let mut stages = [b.prepare_s, vi_task_s, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];

        let vi = match self.decode(&self.vi, vi_buf, truth.0) {
            Ok(d) => d,
            Err(e) => return abort(out, stages, format!("VI decode: {e}")),
        };
        stages[2] = pick(vi.data_proc_s, b.vi_data_proc_s);
        stages[3] = pick(vi.infer_s, b.vi_infer_s);
        stages[4] = mi_task_s;
        out.vi_votes = vi.votes.clone();
        out.decoded_vi = Some(vi.prediction.clone());
        let mi = match self.decode(&self.mi, mi_buf, truth.1) {
            Ok(d) => d,
            Err(e) => return abort(out, stages, format!("MI decode: {e}")),
        };
        stages[5] = pick(mi.data_proc_s, b.mi_data_proc_s);
        stages[6] = pick(mi.infer_s, b.mi_infer_s);
        out.mi_votes = mi.votes.clone();
        out.decoded_mi = Some(mi.prediction.clone());

        let request = match (ObjectKind::from_label(vi.prediction.label), Placement::from_label(mi.prediction.label)) {
            (Ok(o), Ok(p)) => scenario_map(o, Some(p), self.cfg.scenario),
            (Err(e), _) | (_, Err(e)) => return abort(out, stages, e.to_string()),
        };
        out.action = request.describe();
        match executor.execute(&request) {
            Ok(r) => {
                stages[7] = r.elapsed_seconds;
                out.grasp_ok = r.grasp_ok;
                out.place_ok = r.place_ok;
                out.rng_draws = r.rng_draws;
            }
            Err(e) => return abort(out, stages, format!("robot: {e}")),
        }
        out.system_success = out.vi_correct() && out.grasp_ok && out.mi_correct() && out.place_ok;
        out.timing = StageTiming::from_seconds(stages);
        out
    }

    /// Consumes VI/MI window pairs until `n_trials` trials have run. A
    /// stream error or an early end yields a partial report.
    pub fn run_session<I>(&self, windows: I, n_trials: usize, executor: &mut dyn Executor) -> SessionReport
    where
        I: IntoIterator<Item = std::result::Result<TaskWindow, StreamError>>,
    {
        let before: Vec<Option<u64>> = [self.vi.digest(), self.mi.digest()].to_vec();
        let mut trials = Vec::with_capacity(n_trials);
        let mut partial = None;
        let mut it = windows.into_iter();
        while trials.len() < n_trials {
            let mut next = |want: Task| -> std::result::Result<TaskWindow, String> {
                match it.next() {
                    Some(Ok(w)) if w.task == want => Ok(w),
                    Some(Ok(w)) => {
                        Err(format!("expected a {want} window, got {} at sample {}", w.task, w.start_sample))
                    }
                    Some(Err(e)) => Err(format!("stream error: {e}")),
                    None => Err(format!("stream ended after {} trials", trials.len())),
                }
            };
            let pair = next(Task::VI).and_then(|vi| next(Task::MI).map(|mi| (vi, mi)));
            match pair {
                Ok((vi, mi)) => {
                    let t = self.run_trial(trials.len(), &vi.recording, &mi.recording, (vi.label, mi.label), executor);
                    log::info!("{}", t.log_line());
                    trials.push(t);
                }
                Err(msg) => {
                    log::warn!("session ends early: {msg}");
                    partial = Some(msg);
                    break;
                }
            }
        }
        let after = [self.vi.digest(), self.mi.digest()];
        let digests = before.iter().zip(after).filter_map(|(b, a)| Some(((*b)?, a?))).collect();
        SessionReport {
            trials,
            aggregation: self.cfg.aggregation,
            decoders: (self.vi.describe(), self.mi.describe()),
            timing_mode: match self.cfg.timing {
                TimingMode::Modeled => "modeled".into(),
                TimingMode::Measured => "measured".into(),
            },
            partial,
            requested_trials: n_trials,
            digests,
        }
    }
}

fn abort(mut out: TrialOutcome, stages: [f64; 8], reason: String) -> TrialOutcome {
    log::warn!("trial {} aborted: {reason}", out.index);
    out.timing = StageTiming::from_seconds(stages);
    out.failure = Some(reason);
    out
}

/// Success probabilities of the four system components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentRates {
    pub vi: f64,
    pub grasp: f64,
    pub mi: f64,
    pub place: f64,
}

impl ComponentRates {
    pub fn reference() -> Self {
        let [vi, grasp, mi, place] = REFERENCE_COMPONENT_RATES;
        Self { vi, grasp, mi, place }
    }

    pub fn product(&self) -> f64 {
        self.vi * self.grasp * self.mi * self.place
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloResult {
    pub n: usize,
    pub successes: usize,
    pub empirical: f64,
    pub product: f64,
}

impl MonteCarloResult {
    pub fn render(&self) -> String {
        format!(
            "system Monte-Carlo: n={} joint={:.4} product={:.4} reference={:.4} (reference differs from product by {:+.4})",
            self.n,
            self.empirical,
            self.product,
            REFERENCE_SYSTEM_ACCURACY,
            REFERENCE_SYSTEM_ACCURACY - self.product
        )
    }
}

/// Independent Bernoulli draws for the two decoders, the grasp (through
/// the robot simulator) and the placement.
pub fn simulate_system(rates: ComponentRates, n: usize, seed: u64) -> Result<MonteCarloResult> {
    for p in [rates.vi, rates.grasp, rates.mi, rates.place] {
        if !(0.0..=1.0).contains(&p) {
            return Err(PipelineError::Config(format!("probability {p} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut robot = SimExecutor::new(RobotConfig::uniform(rates.grasp, seed.wrapping_add(1)))?;
    let mut successes = 0;
    for i in 0..n {
        let vi_ok = rng.random::<f64>() < rates.vi;
        let mi_ok = rng.random::<f64>() < rates.mi;
        let req = scenario_map(ObjectKind::ALL[i % 3], Some(Placement::Left), Scenario::BaseDemo);
        let r = robot.execute(&req)?;
        let place_ok = r.place_ok && rng.random::<f64>() < rates.place;
        if vi_ok && mi_ok && r.grasp_ok && place_ok {
            successes += 1;
        }
    }
    let empirical = if n == 0 { 0.0 } else { successes as f64 / n as f64 };
    Ok(MonteCarloResult { n, successes, empirical, product: rates.product() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::{ChannelInfo, Montage};

    fn buffer(n: usize) -> Recording {
        let channels: Vec<ChannelInfo> = Montage::default_64().into_channels();
        let data = (0..channels.len() * n).map(|i| ((i * 31) % 17) as f32).collect();
        Recording::new(channels, 1000.0, n, data, vec![]).unwrap()
    }

    fn oracle_pipeline() -> OnlinePipeline<'static> {
        OnlinePipeline::new(
            PipelineConfig::default(),
            TaskDecoder::Oracle(Task::VI),
            TaskDecoder::Oracle(Task::MI),
            None,
        )
        .unwrap()
    }

    #[test]
    fn crop_gives_twenty_windows() {
        let p = oracle_pipeline();
        let d = p.decode(&TaskDecoder::Oracle(Task::VI), &buffer(15_000), Some(ClassLabel::BANANA)).unwrap();
        assert_eq!(d.n_windows, 20);
        assert_eq!(d.votes, vec![0, 20, 0]);
        assert_eq!(d.prediction.label, ClassLabel::BANANA);
    }

    #[test]
    fn short_buffer_aborts_trial() {
        let p = oracle_pipeline();
        let mut ex = SimExecutor::new(RobotConfig::uniform(1.0, 0)).unwrap();
        let t = p.run_trial(
            0,
            &buffer(12_000),
            &buffer(15_000),
            (Some(ClassLabel::APPLE), Some(ClassLabel::LEFT)),
            &mut ex,
        );
        assert!(!t.system_success);
        assert!(t.failure.unwrap().contains("13000"));
    }

    #[test]
    fn oracle_with_certain_robot_always_succeeds() {
        let p = oracle_pipeline();
        let mut ex = SimExecutor::new(RobotConfig::uniform(1.0, 0)).unwrap();
        let buf = buffer(15_000);
        let windows = (0..6).flat_map(|i| {
            let vi = Task::VI.labels()[i % 3];
            let mi = Task::MI.labels()[i % 2];
            [
                Ok(TaskWindow { task: Task::VI, label: Some(vi), start_sample: 0, recording: buf.clone() }),
                Ok(TaskWindow { task: Task::MI, label: Some(mi), start_sample: 0, recording: buf.clone() }),
            ]
        });
        let r = p.run_session(windows, 6, &mut ex);
        assert_eq!(r.system_accuracy(), Rate { hits: 6, n: 6 });
        assert!(r.partial.is_none());
        let t = r.mean_timing().unwrap();
        assert_eq!(t.ledger_error_s(), 0.0);
        assert_eq!((t.prepare_ms, t.vi_task_ms, t.vi_infer_ms), (6010, 15_000, 8191));
    }

    #[test]
    fn early_end_is_partial() {
        let p = oracle_pipeline();
        let mut ex = SimExecutor::new(RobotConfig::default()).unwrap();
        let r = p.run_session(std::iter::empty(), 3, &mut ex);
        assert!(r.trials.is_empty());
        assert!(r.partial.unwrap().contains("after 0 trials"));
    }

    #[test]
    fn crop_must_fit_task() {
        let cfg = PipelineConfig { decode_crop: (3.0, 16.0), ..PipelineConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn monte_carlo_matches_product() {
        let r = simulate_system(ComponentRates::reference(), 5000, 1).unwrap();
        assert!((r.product - 0.19165).abs() < 1e-4);
        assert!((r.empirical - r.product).abs() < 0.02);
        assert_eq!(simulate_system(ComponentRates::reference(), 0, 1).unwrap().empirical, 0.0);
    }
}
