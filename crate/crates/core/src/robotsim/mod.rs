//! Seeded stand-in for the manipulator: per-object Bernoulli grasp success,
//! certain placement after a successful grasp, and a constant-plus-jitter
//! execution time. Every uniform draw is logged so that a result can be
//! replayed exactly.

pub mod line;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recording::{ClassLabel, Task};

pub const MEAN_EXEC_SECONDS: f64 = 54.872;
pub const EXEC_JITTER: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum RobotError {
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("unknown placement {0:?}")]
    UnknownPlacement(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("{0} needs a placement side")]
    MissingPlacement(Scenario),
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("{0} draws logged, {1} needed")]
    Draws(usize, usize),
    #[error("label {0} has no robot meaning here")]
    Label(ClassLabel),
    #[error("executor link: {0}")]
    Link(String),
}

pub type Result<T> = std::result::Result<T, RobotError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectKind {
    Apple,
    Banana,
    Orange,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 3] = [ObjectKind::Apple, ObjectKind::Banana, ObjectKind::Orange];

    pub fn from_label(l: ClassLabel) -> Result<Self> {
        match l.task() {
            Task::VI => Ok(Self::ALL[l.index()]),
            Task::MI => Err(RobotError::Label(l)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Apple => "Apple",
            ObjectKind::Banana => "Banana",
            ObjectKind::Orange => "Orange",
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectKind {
    type Err = RobotError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| RobotError::UnknownObject(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Placement {
    Left,
    Right,
}

impl Placement {
    pub fn from_label(l: ClassLabel) -> Result<Self> {
        match (l.task(), l.index()) {
            (Task::MI, 0) => Ok(Placement::Left),
            (Task::MI, _) => Ok(Placement::Right),
            _ => Err(RobotError::Label(l)),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Left => "Left",
            Placement::Right => "Right",
        })
    }
}

impl FromStr for Placement {
    type Err = RobotError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "left" => Ok(Placement::Left),
            "right" => Ok(Placement::Right),
            _ => Err(RobotError::UnknownPlacement(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Scenario {
    /// Pick the object and place it on the decoded side.
    #[default]
    BaseDemo,
    /// Reveal the decoded object; placement is unused.
    HiddenObject,
    /// Hand the object to the user's decoded hand.
    DirectHandover,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::BaseDemo => "BaseDemo",
            Scenario::HiddenObject => "HiddenObject",
            Scenario::DirectHandover => "DirectHandover",
        })
    }
}

impl FromStr for Scenario {
    type Err = RobotError;

    fn from_str(s: &str) -> Result<Self> {
        [Scenario::BaseDemo, Scenario::HiddenObject, Scenario::DirectHandover]
            .into_iter()
            .find(|x| x.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| RobotError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub object: ObjectKind,
    pub placement: Option<Placement>,
    pub scenario: Scenario,
}

impl ActionRequest {
    pub fn describe(&self) -> String {
        match (self.scenario, self.placement) {
            (Scenario::BaseDemo, Some(p)) => format!("pick {} and place {p}", self.object),
            (Scenario::HiddenObject, _) => format!("reveal {}", self.object),
            (Scenario::DirectHandover, Some(p)) => {
                format!("hand {} to the {} hand", self.object, p.to_string().to_lowercase())
            }
            (s, None) => format!("{s} with {} and no side", self.object),
        }
    }
}

/// Maps decoded intents onto a request. Pure; no randomness.
pub fn scenario_map(object: ObjectKind, side: Option<Placement>, scenario: Scenario) -> ActionRequest {
    let placement = match scenario {
        Scenario::HiddenObject => None,
        _ => side,
    };
    ActionRequest { object, placement, scenario }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub grasp_ok: bool,
    pub place_ok: bool,
    pub elapsed_seconds: f64,
    /// Uniform draws in consumption order: grasp, then time jitter.
    pub rng_draws: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    pub apple: f64,
    pub banana: f64,
    pub orange: f64,
    pub mean_exec_seconds: f64,
    /// Half-width of the uniform execution-time jitter, as a fraction.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            apple: 0.8983,
            banana: 0.5584,
            orange: 0.8444,
            mean_exec_seconds: MEAN_EXEC_SECONDS,
            jitter: EXEC_JITTER,
            seed: 0,
        }
    }
}

impl RobotConfig {
    /// Every object succeeds with `p`.
    pub fn uniform(p: f64, seed: u64) -> Self {
        Self { apple: p, banana: p, orange: p, seed, ..Self::default() }
    }

    pub fn grasp_prob(&self, o: ObjectKind) -> f64 {
        match o {
            ObjectKind::Apple => self.apple,
            ObjectKind::Banana => self.banana,
            ObjectKind::Orange => self.orange,
        }
    }

    /// Success rate over an equal object mix.
    pub fn equal_mix_rate(&self) -> f64 {
        ObjectKind::ALL.iter().map(|&o| self.grasp_prob(o)).sum::<f64>() / 3.0
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.apple, self.banana, self.orange] {
            if !(0.0..=1.0).contains(&p) {
                return Err(RobotError::Probability(p));
            }
        }
        if !(0.0..1.0).contains(&self.jitter) || !(self.mean_exec_seconds >= 0.0) {
            return Err(RobotError::Probability(self.jitter));
        }
        Ok(())
    }

    /// Outcome implied by logged draws.
    pub fn replay(&self, req: &ActionRequest, draws: &[f64]) -> Result<ActionResult> {
        check_request(req)?;
        let [grasp, jitter] = draws[..] else { return Err(RobotError::Draws(draws.len(), 2)) };
        let grasp_ok = grasp < self.grasp_prob(req.object);
        Ok(ActionResult {
            grasp_ok,
            place_ok: grasp_ok,
            elapsed_seconds: self.mean_exec_seconds * (1.0 + self.jitter * (2.0 * jitter - 1.0)),
            rng_draws: draws.to_vec(),
        })
    }
}

fn check_request(req: &ActionRequest) -> Result<()> {
    match (req.scenario, req.placement) {
        (Scenario::BaseDemo | Scenario::DirectHandover, None) => Err(RobotError::MissingPlacement(req.scenario)),
        _ => Ok(()),
    }
}

/// Anything that can carry out a request: the simulator or a remote bridge.
pub trait Executor {
    fn execute(&mut self, req: &ActionRequest) -> Result<ActionResult>;
}

/// The seeded simulator.
#[derive(Debug, Clone)]
pub struct SimExecutor {
    cfg: RobotConfig,
    rng: ChaCha8Rng,
}

impl SimExecutor {
    pub fn new(cfg: RobotConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self { cfg, rng })
    }

    pub fn config(&self) -> &RobotConfig {
        &self.cfg
    }
}

impl Executor for SimExecutor {
    fn execute(&mut self, req: &ActionRequest) -> Result<ActionResult> {
        check_request(req)?;
        let draws = [self.rng.random::<f64>(), self.rng.random::<f64>()];
        self.cfg.replay(req, &draws)
    }
}
