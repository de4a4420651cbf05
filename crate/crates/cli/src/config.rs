//! Run configuration: a TOML file, overridden by command-line flags, and
//! snapshotted next to every output.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use imagery_core::decoders::TrainConfig;
use imagery_core::pipeline::PipelineConfig;
use imagery_core::preprocess::FrequencyProfile;
use imagery_core::robotsim::RobotConfig;
use imagery_core::stream::{DEFAULT_CHUNK, DEFAULT_PORT, DEFAULT_RING_SECONDS};
use imagery_core::synthgen::SynthConfig;

/// A bad flag value or config entry; exits with the config code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub kinds: Vec<String>,
    pub profiles: Vec<FrequencyProfile>,
    pub test_fraction: f64,
    pub split_seed: u64,
    /// `imagery` or `perception`.
    pub phase: String,
    pub ica: bool,
    pub ica_threshold: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            kinds: vec!["Mlp".into()],
            profiles: vec![FrequencyProfile::F40],
            test_fraction: 0.2,
            split_seed: 0,
            phase: "imagery".into(),
            ica: false,
            ica_threshold: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub host: String,
    pub port: u16,
    pub chunk: usize,
    /// `realtime`, `unpaced` or `<factor>x`.
    pub clock: String,
    pub ring_seconds: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            chunk: DEFAULT_CHUNK,
            clock: "unpaced".into(),
            ring_seconds: DEFAULT_RING_SECONDS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub grid: GridConfig,
    pub optimizer: TrainConfig,
    pub pipeline: PipelineConfig,
    pub robot: RobotConfig,
    pub stream: StreamConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    /// Writes `<output>.config.toml` holding the effective configuration
    /// and the command that produced `output`.
    pub fn snapshot(&self, output: &Path, command: &str) -> anyhow::Result<PathBuf> {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".config.toml");
        let path = output.with_file_name(name);
        let body = toml::to_string(self).map_err(|e| config_err(format!("serialising config: {e}")))?;
        let text = format!("# effective configuration for: {command}\n{body}");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
