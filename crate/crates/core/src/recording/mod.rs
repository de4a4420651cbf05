//! Shared domain types: montage, recordings, triggers, labels and epochs.
//!
//! A [`Recording`] stores its samples as `f32` microvolts, one contiguous row
//! per channel. The on-disk container (see [`container`]) writes the same
//! values in frame order, so a write/read round trip is bit-exact.

pub mod container;
mod epoch;

pub use container::{read_recording, write_recording, FORMAT_VERSION, MAGIC};
pub use epoch::{slice_epochs, Epoch, Phase};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes, not a recording container")]
    BadMagic,
    #[error("unsupported format version {found} (reader supports {supported})")]
    Version { found: u32, supported: u32 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("sample matrix has {rows}x{cols} values but {expected} were expected")]
    Shape { rows: usize, cols: usize, expected: usize },
    #[error("trigger {index} at sample {sample} is out of range (n_samples = {n_samples})")]
    TriggerOutOfRange { index: usize, sample: u64, n_samples: usize },
    #[error("triggers are not sorted: trigger {index} precedes its predecessor")]
    TriggerOrder { index: usize },
    #[error("invalid channel list: {0}")]
    Channels(String),
    #[error("sample rate must be positive and finite, got {0}")]
    SampleRate(f64),
    #[error("unpaired {code} trigger at sample {sample}")]
    Unpaired { code: TriggerCode, sample: u64 },
    #[error("trial {trial} has no class label on its {code} trigger")]
    MissingLabel { trial: usize, code: TriggerCode },
    #[error("invalid label: {0}")]
    Label(String),
}

pub type Result<T> = std::result::Result<T, RecordingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelRole {
    ScalpEeg,
    Mastoid,
    Eog,
    Ecg,
}

impl ChannelRole {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ScalpEeg => "ScalpEeg",
            Self::Mastoid => "Mastoid",
            Self::Eog => "Eog",
            Self::Ecg => "Ecg",
        }
    }
}

impl FromStr for ChannelRole {
    type Err = RecordingError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ScalpEeg" => Ok(Self::ScalpEeg),
            "Mastoid" => Ok(Self::Mastoid),
            "Eog" => Ok(Self::Eog),
            "Ecg" => Ok(Self::Ecg),
            other => Err(RecordingError::Header(format!("unknown channel role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub name: String,
    pub role: ChannelRole,
    pub index: usize,
}

/// 59 scalp sites of the extended 10-10 system used by the default montage.
pub const SCALP_NAMES: [&str; 59] = [
    "Fp1", "Fp2", "AF3", "AF4", "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8", "FT7", "FC5", "FC3", "FC1",
    "FCz", "FC2", "FC4", "FC6", "FT8", "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8", "TP7", "CP5", "CP3",
    "CP1", "CPz", "CP2", "CP4", "CP6", "TP8", "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "PO5",
    "PO3", "POz", "PO4", "PO6", "PO8", "O1", "Oz", "O2",
];

/// Channel layout of a recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Montage {
    channels: Vec<ChannelInfo>,
}

impl Montage {
    /// 59 scalp EEG + 2 mastoid + 2 EOG + 1 ECG = 64 channels.
    pub fn default_64() -> Self {
        let mut specs: Vec<(String, ChannelRole)> =
            SCALP_NAMES.iter().map(|n| (n.to_string(), ChannelRole::ScalpEeg)).collect();
        specs.push(("M1".into(), ChannelRole::Mastoid));
        specs.push(("M2".into(), ChannelRole::Mastoid));
        specs.push(("VEOG".into(), ChannelRole::Eog));
        specs.push(("HEOG".into(), ChannelRole::Eog));
        specs.push(("ECG".into(), ChannelRole::Ecg));
        Self::from_specs(specs).expect("default montage is valid")
    }

    pub fn from_specs<I, S>(specs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, ChannelRole)>,
        S: Into<String>,
    {
        let channels = specs
            .into_iter()
            .enumerate()
            .map(|(index, (name, role))| ChannelInfo { name: name.into(), role, index })
            .collect();
        Self::new(channels)
    }

    pub fn new(channels: Vec<ChannelInfo>) -> Result<Self> {
        validate_channels(&channels)?;
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[ChannelInfo] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<ChannelInfo> {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn count(&self, role: ChannelRole) -> usize {
        self.channels.iter().filter(|c| c.role == role).count()
    }
}

fn validate_channels(channels: &[ChannelInfo]) -> Result<()> {
    for (i, ch) in channels.iter().enumerate() {
        if ch.index != i {
            return Err(RecordingError::Channels(format!(
                "channel {:?} has index {} at position {i}",
                ch.name, ch.index
            )));
        }
        if ch.name.is_empty() || ch.name.chars().any(char::is_whitespace) {
            return Err(RecordingError::Channels(format!(
                "channel {i} name {:?} is empty or contains whitespace",
                ch.name
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    VI,
    MI,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Self::VI => 3,
            Self::MI => 2,
        }
    }

    pub fn chance_level(self) -> f64 {
        1.0 / self.n_classes() as f64
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::VI => "VI",
            Self::MI => "MI",
        }
    }

    pub fn labels(self) -> Vec<ClassLabel> {
        (0..self.n_classes() as u8).map(|v| ClassLabel { task: self, value: v }).collect()
    }
}

impl FromStr for Task {
    type Err = RecordingError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VI" => Ok(Self::VI),
            "MI" => Ok(Self::MI),
            _ => Err(RecordingError::Label(format!("unknown task {s:?}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Class label: VI is {Apple, Banana, Orange}, MI is {Left, Right}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassLabel {
    task: Task,
    value: u8,
}

impl ClassLabel {
    pub const APPLE: Self = Self { task: Task::VI, value: 0 };
    pub const BANANA: Self = Self { task: Task::VI, value: 1 };
    pub const ORANGE: Self = Self { task: Task::VI, value: 2 };
    pub const LEFT: Self = Self { task: Task::MI, value: 0 };
    pub const RIGHT: Self = Self { task: Task::MI, value: 1 };

    pub fn new(task: Task, value: u8) -> Result<Self> {
        if (value as usize) < task.n_classes() {
            Ok(Self { task, value })
        } else {
            Err(RecordingError::Label(format!("value {value} out of range for task {task}")))
        }
    }

    pub fn task(self) -> Task {
        self.task
    }

    pub fn value(self) -> u8 {
        self.value
    }

    pub fn index(self) -> usize {
        self.value as usize
    }

    pub fn name(self) -> &'static str {
        match (self.task, self.value) {
            (Task::VI, 0) => "Apple",
            (Task::VI, 1) => "Banana",
            (Task::VI, _) => "Orange",
            (Task::MI, 0) => "Left",
            (Task::MI, _) => "Right",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.task, self.value)
    }
}

impl FromStr for ClassLabel {
    type Err = RecordingError;

    /// Accepts `VI:0` style codes as well as class names (`Apple`, `left`, ...).
    fn from_str(s: &str) -> Result<Self> {
        if let Some((task, value)) = s.split_once(':') {
            let value: u8 = value.parse().map_err(|_| RecordingError::Label(format!("bad label {s:?}")))?;
            return Self::new(task.parse()?, value);
        }
        match s.to_ascii_lowercase().as_str() {
            "apple" => Ok(Self::APPLE),
            "banana" => Ok(Self::BANANA),
            "orange" => Ok(Self::ORANGE),
            "left" => Ok(Self::LEFT),
            "right" => Ok(Self::RIGHT),
            _ => Err(RecordingError::Label(format!("bad label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TriggerCode {
    FixationOn,
    StimulusOn,
    ImageryStart,
    ImageryEnd,
    CueLeft,
    CueRight,
    TrialEnd,
    TaskViStart,
    TaskViEnd,
    TaskMiStart,
    TaskMiEnd,
    Beep,
}

impl TriggerCode {
    pub const ALL: [TriggerCode; 12] = [
        Self::FixationOn,
        Self::StimulusOn,
        Self::ImageryStart,
        Self::ImageryEnd,
        Self::CueLeft,
        Self::CueRight,
        Self::TrialEnd,
        Self::TaskViStart,
        Self::TaskViEnd,
        Self::TaskMiStart,
        Self::TaskMiEnd,
        Self::Beep,
    ];

    /// Wire code used by the stream protocol.
    pub fn to_u8(self) -> u8 {
        Self::ALL.iter().position(|&c| c == self).unwrap() as u8
    }

    pub fn from_u8(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FixationOn => "FixationOn",
            Self::StimulusOn => "StimulusOn",
            Self::ImageryStart => "ImageryStart",
            Self::ImageryEnd => "ImageryEnd",
            Self::CueLeft => "CueLeft",
            Self::CueRight => "CueRight",
            Self::TrialEnd => "TrialEnd",
            Self::TaskViStart => "TaskViStart",
            Self::TaskViEnd => "TaskViEnd",
            Self::TaskMiStart => "TaskMiStart",
            Self::TaskMiEnd => "TaskMiEnd",
            Self::Beep => "Beep",
        }
    }
}

impl fmt::Display for TriggerCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TriggerCode {
    type Err = RecordingError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| RecordingError::Header(format!("unknown trigger code {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub code: TriggerCode,
    pub sample_index: u64,
    pub label: Option<ClassLabel>,
}

impl TriggerEvent {
    pub fn new(code: TriggerCode, sample_index: u64) -> Self {
        Self { code, sample_index, label: None }
    }

    pub fn labeled(code: TriggerCode, sample_index: u64, label: ClassLabel) -> Self {
        Self { code, sample_index, label: Some(label) }
    }
}

/// Multichannel recording: `[n_channels x n_samples]` microvolts plus triggers.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    channels: Vec<ChannelInfo>,
    sample_rate_hz: f64,
    n_samples: usize,
    data: Vec<f32>,
    triggers: Vec<TriggerEvent>,
}

impl Recording {
    /// `data` holds one row of `n_samples` values per channel.
    pub fn new(
        channels: Vec<ChannelInfo>,
        sample_rate_hz: f64,
        n_samples: usize,
        data: Vec<f32>,
        triggers: Vec<TriggerEvent>,
    ) -> Result<Self> {
        validate_channels(&channels)?;
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(RecordingError::SampleRate(sample_rate_hz));
        }
        let expected = channels.len() * n_samples;
        if data.len() != expected {
            return Err(RecordingError::Shape {
                rows: channels.len(),
                cols: if channels.is_empty() { 0 } else { data.len() / channels.len() },
                expected,
            });
        }
        validate_triggers(&triggers, n_samples)?;
        Ok(Self { channels, sample_rate_hz, n_samples, data, triggers })
    }

    /// Builds a recording from per-channel rows.
    pub fn from_rows(
        channels: Vec<ChannelInfo>,
        sample_rate_hz: f64,
        rows: Vec<Vec<f32>>,
        triggers: Vec<TriggerEvent>,
    ) -> Result<Self> {
        let n_samples = rows.first().map_or(0, Vec::len);
        if rows.len() != channels.len() || rows.iter().any(|r| r.len() != n_samples) {
            return Err(RecordingError::Shape {
                rows: rows.len(),
                cols: n_samples,
                expected: channels.len() * n_samples,
            });
        }
        Self::new(channels, sample_rate_hz, n_samples, rows.concat(), triggers)
    }

    pub fn channels(&self) -> &[ChannelInfo] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate_hz
    }

    pub fn triggers(&self) -> &[TriggerEvent] {
        &self.triggers
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn sample(&self, c: usize, t: usize) -> f32 {
        self.data[c * self.n_samples + t]
    }

    pub fn indices_with_role(&self, role: ChannelRole) -> Vec<usize> {
        self.channels.iter().filter(|c| c.role == role).map(|c| c.index).collect()
    }

    /// Same channels, rate and triggers with replaced sample data.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.channels.clone(), self.sample_rate_hz, self.n_samples, data, self.triggers.clone())
    }

    /// Applies `f` to each selected channel row, copying the others verbatim.
    pub fn map_channels<F>(&self, mut select: impl FnMut(&ChannelInfo) -> bool, mut f: F) -> Self
    where
        F: FnMut(usize, &[f32]) -> Vec<f32>,
    {
        let mut data = self.data.clone();
        for ch in &self.channels {
            if select(ch) {
                let row = f(ch.index, self.channel(ch.index));
                assert_eq!(row.len(), self.n_samples, "channel map must preserve length");
                data[ch.index * self.n_samples..(ch.index + 1) * self.n_samples].copy_from_slice(&row);
            }
        }
        Self { data, ..self.clone_meta() }
    }

    /// Copies samples `[start, end)` of every channel, keeping the triggers
    /// that fall inside the range (re-indexed relative to `start`).
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.n_samples {
            return Err(RecordingError::Shape { rows: self.n_channels(), cols: end, expected: self.n_samples });
        }
        let len = end - start;
        let mut data = Vec::with_capacity(self.n_channels() * len);
        for c in 0..self.n_channels() {
            data.extend_from_slice(&self.channel(c)[start..end]);
        }
        let triggers = self
            .triggers
            .iter()
            .filter(|t| (t.sample_index as usize) >= start && (t.sample_index as usize) < end)
            .map(|t| TriggerEvent { sample_index: t.sample_index - start as u64, ..*t })
            .collect();
        Self::new(self.channels.clone(), self.sample_rate_hz, len, data, triggers)
    }

    fn clone_meta(&self) -> Self {
        Self {
            channels: self.channels.clone(),
            sample_rate_hz: self.sample_rate_hz,
            n_samples: self.n_samples,
            data: Vec::new(),
            triggers: self.triggers.clone(),
        }
    }
}

fn validate_triggers(triggers: &[TriggerEvent], n_samples: usize) -> Result<()> {
    for (i, t) in triggers.iter().enumerate() {
        if t.sample_index >= n_samples as u64 {
            return Err(RecordingError::TriggerOutOfRange { index: i, sample: t.sample_index, n_samples });
        }
        if i > 0 && t.sample_index < triggers[i - 1].sample_index {
            return Err(RecordingError::TriggerOrder { index: i });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_montage_role_counts() {
        let m = Montage::default_64();
        assert_eq!(m.len(), 64);
        assert_eq!(m.count(ChannelRole::ScalpEeg), 59);
        assert_eq!(m.count(ChannelRole::Mastoid), 2);
        assert_eq!(m.count(ChannelRole::Eog), 2);
        assert_eq!(m.count(ChannelRole::Ecg), 1);
        for (i, c) in m.channels().iter().enumerate() {
            assert_eq!(c.index, i);
        }
    }

    #[test]
    fn label_range_checked() {
        assert!(ClassLabel::new(Task::VI, 2).is_ok());
        assert!(ClassLabel::new(Task::VI, 3).is_err());
        assert!(ClassLabel::new(Task::MI, 2).is_err());
        assert_eq!("VI:1".parse::<ClassLabel>().unwrap(), ClassLabel::BANANA);
        assert_eq!("right".parse::<ClassLabel>().unwrap(), ClassLabel::RIGHT);
        assert_eq!(ClassLabel::ORANGE.to_string().parse::<ClassLabel>().unwrap(), ClassLabel::ORANGE);
    }

    #[test]
    fn trigger_codes_roundtrip_through_wire_byte() {
        for code in TriggerCode::ALL {
            assert_eq!(TriggerCode::from_u8(code.to_u8()), Some(code));
            assert_eq!(code.as_str().parse::<TriggerCode>().unwrap(), code);
        }
        assert_eq!(TriggerCode::from_u8(12), None);
    }

    #[test]
    fn recording_rejects_bad_triggers() {
        let chans = Montage::from_specs([("A", ChannelRole::ScalpEeg)]).unwrap().into_channels();
        let late = vec![TriggerEvent::new(TriggerCode::Beep, 3)];
        assert!(matches!(
            Recording::new(chans.clone(), 100.0, 3, vec![0.0; 3], late),
            Err(RecordingError::TriggerOutOfRange { .. })
        ));
        let unsorted = vec![TriggerEvent::new(TriggerCode::Beep, 2), TriggerEvent::new(TriggerCode::Beep, 1)];
        assert!(matches!(
            Recording::new(chans.clone(), 100.0, 3, vec![0.0; 3], unsorted),
            Err(RecordingError::TriggerOrder { index: 1 })
        ));
        assert!(matches!(Recording::new(chans, 100.0, 3, vec![0.0; 4], vec![]), Err(RecordingError::Shape { .. })));
    }

    #[test]
    fn slice_reindexes_triggers() {
        let chans = Montage::from_specs([("A", ChannelRole::ScalpEeg)]).unwrap().into_channels();
        let trig = vec![TriggerEvent::new(TriggerCode::Beep, 1), TriggerEvent::new(TriggerCode::TrialEnd, 4)];
        let rec = Recording::new(chans, 10.0, 6, (0..6).map(|v| v as f32).collect(), trig).unwrap();
        let s = rec.slice(2, 5).unwrap();
        assert_eq!(s.channel(0), &[2.0, 3.0, 4.0]);
        assert_eq!(s.triggers(), &[TriggerEvent::new(TriggerCode::TrialEnd, 2)]);
    }
}
