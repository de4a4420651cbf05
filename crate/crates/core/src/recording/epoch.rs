use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ChannelInfo, ChannelRole, ClassLabel, Recording, RecordingError, Result, TriggerCode, TriggerEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// Stimulus image (VI) or arrow cue (MI), up to imagery onset.
    Perception,
    Imagery,
}

/// One trial's slice of a recording for a single task phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub channels: Arc<[ChannelInfo]>,
    /// `[n_channels x n_samples]`, one row per channel.
    pub data: Vec<f32>,
    pub n_samples: usize,
    pub sample_rate_hz: f64,
    pub label: ClassLabel,
    pub trial_id: usize,
    pub phase: Phase,
    /// Sample index of the epoch's first sample in the parent recording.
    pub onset: usize,
}

impl Epoch {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate_hz
    }

    pub fn scalp_indices(&self) -> Vec<usize> {
        self.channels.iter().filter(|c| c.role == ChannelRole::ScalpEeg).map(|c| c.index).collect()
    }
}

fn opens(phase: Phase, code: TriggerCode) -> bool {
    match phase {
        Phase::Imagery => code == TriggerCode::ImageryStart,
        Phase::Perception => {
            matches!(code, TriggerCode::StimulusOn | TriggerCode::CueLeft | TriggerCode::CueRight)
        }
    }
}

fn closes(phase: Phase, code: TriggerCode) -> bool {
    match phase {
        Phase::Imagery => code == TriggerCode::ImageryEnd,
        Phase::Perception => code == TriggerCode::ImageryStart,
    }
}

/// Cuts one epoch per trial between the selected phase's start and end
/// triggers. Boundaries come only from trigger sample indices.
pub fn slice_epochs(rec: &Recording, phase: Phase) -> Result<Vec<Epoch>> {
    let channels: Arc<[ChannelInfo]> = rec.channels().into();
    let mut epochs = Vec::new();
    let mut open: Option<&TriggerEvent> = None;

    for trig in rec.triggers() {
        // The perception phase closes on ImageryStart, which is not itself
        // an opener for that phase, so check closers first.
        if closes(phase, trig.code) {
            let start = open.take().ok_or(RecordingError::Unpaired { code: trig.code, sample: trig.sample_index })?;
            let trial_id = epochs.len();
            let label = start.label.ok_or(RecordingError::MissingLabel { trial: trial_id, code: start.code })?;
            let (a, b) = (start.sample_index as usize, trig.sample_index as usize);
            let n = b - a;
            let mut data = Vec::with_capacity(rec.n_channels() * n);
            for c in 0..rec.n_channels() {
                data.extend_from_slice(&rec.channel(c)[a..b]);
            }
            epochs.push(Epoch {
                channels: channels.clone(),
                data,
                n_samples: n,
                sample_rate_hz: rec.sample_rate_hz(),
                label,
                trial_id,
                phase,
                onset: a,
            });
        } else if opens(phase, trig.code) {
            if let Some(prev) = open {
                return Err(RecordingError::Unpaired { code: prev.code, sample: prev.sample_index });
            }
            open = Some(trig);
        }
    }
    if let Some(prev) = open {
        return Err(RecordingError::Unpaired { code: prev.code, sample: prev.sample_index });
    }
    Ok(epochs)
}
