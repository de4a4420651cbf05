//! Seeded synthetic sessions following the offline VI/MI paradigms and the
//! online dual-task script.
//!
//! Every channel carries `1/f^alpha` background plus white noise. During
//! imagery the class signature scales band power: the in-band component
//! `b(t)` of the background is added back as `(g(t) - 1) b(t)` with
//! `g^2 = 1 + depth * weight`, ramped over 50 ms at both ends. `depth` is
//! `MAX_MODULATION_DEPTH * separability`, so separability 0 leaves the
//! class-conditional distributions identical. Blinks enter the EOG and
//! frontal channels with the fixed gains of [`blink_mixing`], and the ECG
//! channel carries QRS pulses.

pub mod noise;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recording::{
    ChannelInfo, ChannelRole, ClassLabel, Montage, Recording, RecordingError, Task, TriggerCode, TriggerEvent,
};

/// Power change at separability 1.0.
pub const MAX_MODULATION_DEPTH: f64 = 0.4;
/// Seeds the class signatures; fixed so that every session shares them.
pub const DEFAULT_SIGNATURE_SEED: u64 = 0x51_6e_a7_0e;
pub const MI_BAND: (f64, f64) = (8.0, 30.0);
pub const VI_BANDS: [(f64, f64); 2] = [(8.0, 13.0), (30.0, 40.0)];
const RAMP_S: f64 = 0.05;
const PSD_FLOOR_HZ: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis config: {0}")]
    Config(String),
    #[error(transparent)]
    Recording(#[from] RecordingError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Phase durations in seconds. `cue_s` is the stimulus (VI) or arrow cue (MI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub fixation_s: f64,
    pub cue_s: f64,
    pub imagery_s: f64,
    pub rest_s: f64,
    /// Quiet lead-in and tail of the whole session.
    pub pad_s: f64,
}

impl Timing {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::VI => Self { fixation_s: 1.0, cue_s: 2.0, imagery_s: 5.0, rest_s: 1.0, pad_s: 2.0 },
            Task::MI => Self { fixation_s: 1.0, cue_s: 1.25, imagery_s: 4.0, rest_s: 1.5, pad_s: 2.0 },
        }
    }

    pub fn trial_seconds(&self) -> f64 {
        self.fixation_s + self.cue_s + self.imagery_s + self.rest_s
    }
}

/// Segment lengths of the online script, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineTiming {
    /// Beep to VI task start.
    pub prepare_s: f64,
    pub task_s: f64,
    /// VI task end to MI task start.
    pub between_s: f64,
    /// MI task end to the next beep.
    pub after_s: f64,
}

impl Default for OnlineTiming {
    fn default() -> Self {
        Self { prepare_s: 6.01, task_s: 15.0, between_s: 2.0, after_s: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub task: Task,
    pub n_trials: usize,
    pub separability: f64,
    /// Exponent of the `1/f^alpha` background.
    pub alpha: f64,
    /// Background PSD at 1 Hz for scalp channels, uV^2/Hz.
    pub background_uv2: f64,
    pub white_noise_uv: f64,
    pub blink_rate_hz: f64,
    pub blink_amplitude_uv: f64,
    pub heart_rate_hz: f64,
    pub ecg_amplitude_uv: f64,
    /// Adds a class-independent evoked bump after each VI stimulus onset.
    pub evoked_response: bool,
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub signature_seed: u64,
    pub timing: Option<Timing>,
    pub online: OnlineTiming,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            task: Task::MI,
            n_trials: 100,
            separability: 1.0,
            alpha: 1.0,
            background_uv2: 100.0,
            white_noise_uv: 1.0,
            blink_rate_hz: 0.2,
            blink_amplitude_uv: 120.0,
            heart_rate_hz: 1.1,
            ecg_amplitude_uv: 400.0,
            evoked_response: false,
            sample_rate_hz: 1000.0,
            seed: 0,
            signature_seed: DEFAULT_SIGNATURE_SEED,
            timing: None,
            online: OnlineTiming::default(),
        }
    }
}

impl SynthConfig {
    pub fn new(task: Task, n_trials: usize, separability: f64, seed: u64) -> Self {
        Self { task, n_trials, separability, seed, ..Self::default() }
    }

    pub fn timing(&self) -> Timing {
        self.timing.clone().unwrap_or_else(|| Timing::for_task(self.task))
    }

    pub fn depth(&self) -> f64 {
        MAX_MODULATION_DEPTH * self.separability
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Config(m));
        if !(0.0..=1.0).contains(&self.separability) {
            return bad(format!("separability {} outside [0, 1]", self.separability));
        }
        if !(0.0..=3.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 3]", self.alpha));
        }
        if !(self.sample_rate_hz >= 100.0 && self.sample_rate_hz.is_finite()) {
            return bad(format!("sample rate {} Hz is below 100 Hz", self.sample_rate_hz));
        }
        let non_negative = [
            ("background_uv2", self.background_uv2),
            ("white_noise_uv", self.white_noise_uv),
            ("blink_rate_hz", self.blink_rate_hz),
            ("blink_amplitude_uv", self.blink_amplitude_uv),
            ("heart_rate_hz", self.heart_rate_hz),
            ("ecg_amplitude_uv", self.ecg_amplitude_uv),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be non-negative"));
            }
        }
        let t = self.timing();
        let o = &self.online;
        for (name, v) in [
            ("fixation_s", t.fixation_s),
            ("cue_s", t.cue_s),
            ("imagery_s", t.imagery_s),
            ("prepare_s", o.prepare_s),
            ("task_s", o.task_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        for (name, v) in [("rest_s", t.rest_s), ("pad_s", t.pad_s), ("between_s", o.between_s), ("after_s", o.after_s)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be non-negative"));
            }
        }
        Ok(())
    }

    fn samples(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate_hz).round() as usize
    }
}

/// Spatial weights in `[-1, 1]` over the montage for each modulated band.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSignature {
    pub label: ClassLabel,
    pub bands: Vec<(f64, f64)>,
    /// `weights[band][channel]`; zero off the scalp.
    pub weights: Vec<Vec<f64>>,
}

/// Motor channels over the hemisphere contralateral to the imagined hand:
/// even-numbered FC/C/CP sites for Left, odd-numbered for Right.
pub fn contralateral_group(channels: &[ChannelInfo], label: ClassLabel) -> Vec<usize> {
    let want_even = label == ClassLabel::LEFT;
    channels
        .iter()
        .filter(|c| c.role == ChannelRole::ScalpEeg)
        .filter(|c| {
            let prefix: String = c.name.chars().take_while(|ch| ch.is_ascii_alphabetic()).collect();
            let digits: String = c.name.chars().skip_while(|ch| ch.is_ascii_alphabetic()).collect();
            matches!(prefix.as_str(), "FC" | "C" | "CP")
                && digits.parse::<u32>().is_ok_and(|d| (d % 2 == 0) == want_even)
        })
        .map(|c| c.index)
        .collect()
}

pub fn class_signature(channels: &[ChannelInfo], label: ClassLabel, signature_seed: u64) -> ClassSignature {
    match label.task() {
        Task::MI => {
            let mut w = vec![0.0; channels.len()];
            for i in contralateral_group(channels, label) {
                w[i] = -1.0;
            }
            ClassSignature { label, bands: vec![MI_BAND], weights: vec![w] }
        }
        Task::VI => {
            let mut rng = ChaCha8Rng::seed_from_u64(signature_seed);
            rng.set_stream(1 + label.index() as u64);
            let weights = VI_BANDS
                .iter()
                .map(|_| {
                    channels
                        .iter()
                        .map(|c| if c.role == ChannelRole::ScalpEeg { rng.random_range(-1.0..=1.0) } else { 0.0 })
                        .collect()
                })
                .collect();
            ClassSignature { label, bands: VI_BANDS.to_vec(), weights }
        }
    }
}

/// Gain of the blink source on each channel.
pub fn blink_mixing(channels: &[ChannelInfo]) -> Vec<f64> {
    channels
        .iter()
        .map(|c| match (c.role, c.name.as_str()) {
            (ChannelRole::Eog, "VEOG") => 1.0,
            (ChannelRole::Eog, _) => 0.15,
            (ChannelRole::ScalpEeg, n) if n.starts_with("Fp") => 0.6,
            (ChannelRole::ScalpEeg, n) if n.starts_with("AF") => 0.35,
            (ChannelRole::ScalpEeg, n) if n.starts_with('F') && !n.starts_with("FC") && !n.starts_with("FT") => 0.15,
            _ => 0.0,
        })
        .collect()
}

/// Background PSD scale of each channel relative to scalp EEG.
fn background_scale(role: ChannelRole) -> f64 {
    match role {
        ChannelRole::ScalpEeg => 1.0,
        ChannelRole::Mastoid => 0.25,
        ChannelRole::Eog | ChannelRole::Ecg => 0.01,
    }
}

/// A labelled interval to be modulated.
struct Segment {
    start: usize,
    len: usize,
    label: ClassLabel,
}

struct Builder<'a> {
    cfg: &'a SynthConfig,
    channels: Vec<ChannelInfo>,
    n: usize,
    rows: Vec<Vec<f64>>,
    triggers: Vec<TriggerEvent>,
    segments: Vec<Segment>,
    stimuli: Vec<usize>,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a SynthConfig, n: usize) -> Self {
        let channels = Montage::default_64().into_channels();
        Self { cfg, channels, n, rows: Vec::new(), triggers: Vec::new(), segments: Vec::new(), stimuli: Vec::new() }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        r.set_stream(stream);
        r
    }

    fn background(&mut self) {
        let cfg = self.cfg;
        let mut rng = self.rng(10);
        let psd = noise::pink_psd(cfg.background_uv2, cfg.alpha, PSD_FLOOR_HZ);
        let n_ch = self.channels.len();
        let mut rows = Vec::with_capacity(n_ch + 1);
        while rows.len() < n_ch {
            let (a, b) = noise::colored_pair(self.n, cfg.sample_rate_hz, &psd, &mut rng);
            rows.push(a);
            rows.push(b);
        }
        rows.truncate(n_ch);
        for (row, ch) in rows.iter_mut().zip(&self.channels) {
            let s = background_scale(ch.role).sqrt();
            row.iter_mut().for_each(|v| *v *= s);
        }
        self.rows = rows;
    }

    fn modulate(&mut self) {
        let depth = self.cfg.depth();
        if depth == 0.0 {
            return;
        }
        let fs = self.cfg.sample_rate_hz;
        let ramp = self.cfg.samples(RAMP_S).max(1);
        let mut planner = FftPlanner::new();
        let mut sigs: Vec<ClassSignature> = Vec::new();
        for seg in &self.segments {
            let sig = match sigs.iter().find(|s| s.label == seg.label) {
                Some(s) => s.clone(),
                None => {
                    let s = class_signature(&self.channels, seg.label, self.cfg.signature_seed);
                    sigs.push(s.clone());
                    s
                }
            };
            let envelope: Vec<f64> = (0..seg.len)
                .map(|i| {
                    let edge = i.min(seg.len - 1 - i);
                    if edge >= ramp {
                        1.0
                    } else {
                        0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / ramp as f64).cos()
                    }
                })
                .collect();
            for ch in 0..self.channels.len() {
                let active: Vec<usize> = (0..sig.bands.len()).filter(|&b| sig.weights[b][ch] != 0.0).collect();
                if active.is_empty() {
                    continue;
                }
                let row = &mut self.rows[ch][seg.start..seg.start + seg.len];
                let bands: Vec<(f64, f64)> = active.iter().map(|&b| sig.bands[b]).collect();
                let parts = noise::band_component(row, fs, &bands, &mut planner);
                for (part, &b) in parts.iter().zip(&active) {
                    let factor = 1.0 + depth * sig.weights[b][ch];
                    for ((v, &p), &e) in row.iter_mut().zip(part).zip(&envelope) {
                        let g = (1.0 + (factor - 1.0) * e).max(0.0).sqrt();
                        *v += (g - 1.0) * p;
                    }
                }
            }
        }
    }

    fn artifacts(&mut self) {
        let cfg = self.cfg;
        let fs = cfg.sample_rate_hz;
        let mut rng = self.rng(20);
        let blink = noise::blink_shape(fs, 0.06);
        let onsets = noise::poisson_onsets(self.n.saturating_sub(blink.len()), fs, cfg.blink_rate_hz, 0.5, &mut rng);
        for (row, gain) in self.rows.iter_mut().zip(blink_mixing(&self.channels)) {
            if gain != 0.0 {
                noise::stamp(row, &onsets, &blink, gain * cfg.blink_amplitude_uv);
            }
        }
        if cfg.heart_rate_hz > 0.0 {
            let qrs = noise::qrs_shape(fs);
            let mut beats = Vec::new();
            let mut t = rng.random_range(0.0..1.0 / cfg.heart_rate_hz);
            while ((t * fs) as usize) + qrs.len() < self.n {
                beats.push((t * fs) as usize);
                t += (1.0 + rng.random_range(-0.05..0.05)) / cfg.heart_rate_hz;
            }
            for (row, ch) in self.rows.iter_mut().zip(&self.channels) {
                if ch.role == ChannelRole::Ecg {
                    noise::stamp(row, &beats, &qrs, cfg.ecg_amplitude_uv);
                }
            }
        }
        if cfg.evoked_response {
            let bump = noise::blink_shape(fs, 0.05);
            let lag = cfg.samples(0.3).saturating_sub(bump.len() / 2);
            let onsets: Vec<usize> =
                self.stimuli.iter().map(|s| s + lag).filter(|&s| s + bump.len() < self.n).collect();
            for (row, ch) in self.rows.iter_mut().zip(&self.channels) {
                if ch.role == ChannelRole::ScalpEeg && (ch.name.starts_with('P') || ch.name.starts_with('O')) {
                    noise::stamp(row, &onsets, &bump, 5.0);
                }
            }
        }
        let mut rng = self.rng(30);
        if cfg.white_noise_uv > 0.0 {
            for row in &mut self.rows {
                row.iter_mut()
                    .for_each(|v| *v += cfg.white_noise_uv * rng.sample::<f64, _>(rand_distr::StandardNormal));
            }
        }
    }

    fn finish(mut self) -> Result<Recording> {
        self.background();
        self.modulate();
        self.artifacts();
        self.triggers.sort_by_key(|t| t.sample_index);
        let data: Vec<f32> = self.rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect();
        Ok(Recording::new(self.channels, self.cfg.sample_rate_hz, self.n, data, self.triggers)?)
    }
}

/// Balanced class labels in seeded random order.
fn shuffled_labels(task: Task, n: usize, rng: &mut ChaCha8Rng) -> Vec<ClassLabel> {
    let classes = task.labels();
    let mut out: Vec<ClassLabel> = (0..n).map(|i| classes[i % classes.len()]).collect();
    out.shuffle(rng);
    out
}

/// One offline session: `n_trials` balanced, shuffled trials with
/// fixation, cue, imagery and rest phases.
pub fn generate_session(cfg: &SynthConfig) -> Result<Recording> {
    cfg.validate()?;
    let t = cfg.timing();
    let (fix, cue, img, rest, pad) = (
        cfg.samples(t.fixation_s),
        cfg.samples(t.cue_s),
        cfg.samples(t.imagery_s),
        cfg.samples(t.rest_s),
        cfg.samples(t.pad_s),
    );
    let trial = fix + cue + img + rest;
    let n = 2 * pad + cfg.n_trials * trial;
    let mut b = Builder::new(cfg, n);
    let mut rng = b.rng(1);
    let labels = shuffled_labels(cfg.task, cfg.n_trials, &mut rng);
    for (i, &label) in labels.iter().enumerate() {
        let s = pad + i * trial;
        let cue_code = match (cfg.task, label) {
            (Task::VI, _) => TriggerCode::StimulusOn,
            (Task::MI, l) if l == ClassLabel::LEFT => TriggerCode::CueLeft,
            (Task::MI, _) => TriggerCode::CueRight,
        };
        let img_start = s + fix + cue;
        b.triggers.extend([
            TriggerEvent::new(TriggerCode::FixationOn, s as u64),
            TriggerEvent::labeled(cue_code, (s + fix) as u64, label),
            TriggerEvent::labeled(TriggerCode::ImageryStart, img_start as u64, label),
            TriggerEvent::new(TriggerCode::ImageryEnd, (img_start + img) as u64),
            TriggerEvent::new(TriggerCode::TrialEnd, (s + trial - 1) as u64),
        ]);
        if cfg.task == Task::VI {
            b.stimuli.push(s + fix);
        }
        b.segments.push(Segment { start: img_start, len: img, label });
    }
    b.finish()
}

/// Seeded scripted truth for an online session: both label sequences are
/// balanced and shuffled independently.
pub fn random_truth(n: usize, seed: u64) -> Vec<(ClassLabel, ClassLabel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let vi = shuffled_labels(Task::VI, n, &mut rng);
    let mi = shuffled_labels(Task::MI, n, &mut rng);
    vi.into_iter().zip(mi).collect()
}

/// The online script: per trial a Beep, a VI task window carrying the VI
/// label's signature and an MI task window carrying the MI label's.
pub fn generate_online_stream_script(cfg: &SynthConfig, truth: &[(ClassLabel, ClassLabel)]) -> Result<Recording> {
    cfg.validate()?;
    if truth.is_empty() {
        return Err(SynthError::Config("online script needs at least one trial".into()));
    }
    for &(vi, mi) in truth {
        if vi.task() != Task::VI || mi.task() != Task::MI {
            return Err(SynthError::Config(format!("truth pair ({vi}, {mi}) must be (VI, MI)")));
        }
    }
    let o = &cfg.online;
    let (prep, task, between, after) =
        (cfg.samples(o.prepare_s), cfg.samples(o.task_s), cfg.samples(o.between_s), cfg.samples(o.after_s));
    let pad = cfg.samples(cfg.timing().pad_s);
    let trial = prep + task + between + task + after;
    let n = 2 * pad + truth.len() * trial;
    let mut b = Builder::new(cfg, n);
    for (i, &(vi, mi)) in truth.iter().enumerate() {
        let s = pad + i * trial;
        let vi_start = s + prep;
        let mi_start = vi_start + task + between;
        b.triggers.extend([
            TriggerEvent::new(TriggerCode::Beep, s as u64),
            TriggerEvent::labeled(TriggerCode::TaskViStart, vi_start as u64, vi),
            TriggerEvent::new(TriggerCode::TaskViEnd, (vi_start + task) as u64),
            TriggerEvent::labeled(TriggerCode::TaskMiStart, mi_start as u64, mi),
            TriggerEvent::new(TriggerCode::TaskMiEnd, (mi_start + task) as u64),
        ]);
        b.segments.push(Segment { start: vi_start, len: task, label: vi });
        b.segments.push(Segment { start: mi_start, len: task, label: mi });
    }
    b.finish()
}
