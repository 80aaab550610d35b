//! The episodic environment contract shared by every plant.
//!
//! A plant model implements [`Plant`]; wrapping it in an [`Episode`] adds
//! the common episode semantics:
//!
//! 1. the action is checked against the action space (out of bounds ends the
//!    episode as a failure, it is never clipped),
//! 2. the plant is advanced one control interval,
//! 3. the state is checked for finiteness and admissibility.
//!
//! The first violation wins and yields `error_reward`. Reaching `max_steps`
//! without failure is a timeout, which is not a failure.

mod registry;
mod space;

pub use registry::{make_env, EnvKind};
pub use space::{box_around, sample_box, ContinuousSpace};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode already finished; call reset")]
    EpisodeFinished,
    #[error("step called before reset")]
    NotReset,
    #[error("action has {got} components, expected {expected}")]
    ActionDimension { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Episode-level settings of one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub error_reward: f64,
    pub action_space: ContinuousSpace,
    pub observation_space: ContinuousSpace,
    pub seed: u64,
}

/// `error_reward <= r_min * max_steps`, i.e. failing is never better than
/// collecting the worst possible reward on every step.
pub fn validate_episode_config(cfg: &EpisodeConfig, r_min: f64) -> bool {
    cfg.error_reward <= r_min * cfg.max_steps as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub timeout: bool,
    pub failure: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure_reason: Option<String>,
}

/// What a plant reports after advancing one control interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advance {
    pub reward: f64,
    /// The task finished successfully (e.g. fermentation reached its target).
    pub completed: bool,
}

impl Advance {
    pub fn reward(reward: f64) -> Self {
        Self { reward, completed: false }
    }
}

/// Descriptive facts about an environment beyond its episode settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvMetadata {
    pub name: String,
    pub a_dim: usize,
    pub o_dim: usize,
    pub max_steps: usize,
    pub error_reward: f64,
    /// Interval covered by one `step`, in the plant's time unit.
    pub step_duration: f64,
    pub time_unit: String,
    pub observation_names: Vec<String>,
    pub action_names: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// A simulated process: physics, observation map and reward.
pub trait Plant: Send {
    fn name(&self) -> &'static str;
    fn action_space(&self) -> &ContinuousSpace;
    fn observation_space(&self) -> &ContinuousSpace;
    fn max_steps(&self) -> usize;
    fn error_reward(&self) -> f64;
    /// Draws a fresh initial state from the plant's init box.
    fn reset(&mut self, rng: &mut ChaCha8Rng);
    /// Advances one control interval under `action`. `step` is the 1-based
    /// index of the step being taken.
    fn advance(&mut self, action: &[f64], step: usize) -> Result<Advance, SimError>;
    /// Whether the physical state lies inside its admissible box.
    fn state_admissible(&self) -> bool;
    fn observe(&self) -> Vec<f64>;
    /// Least possible per-step reward while the state stays admissible.
    fn min_step_reward(&self) -> f64;
    /// The nominal operating input (zero deviation).
    fn nominal_action(&self) -> Vec<f64>;
    fn state(&self) -> Vec<f64>;
    fn metadata(&self) -> EnvMetadata;
}

/// Object-safe episodic interface used by controllers, runners and the CLI.
pub trait Environment: Send {
    fn name(&self) -> &str;
    fn episode_config(&self) -> EpisodeConfig;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError>;
    fn min_step_reward(&self) -> f64;
    fn nominal_action(&self) -> Vec<f64>;
    fn state(&self) -> Vec<f64>;
    fn steps_taken(&self) -> usize;
    fn metadata(&self) -> EnvMetadata;

    fn action_space(&self) -> ContinuousSpace {
        self.episode_config().action_space
    }
    /// Checks the error-reward inequality for this environment.
    fn error_reward_consistent(&self) -> bool {
        validate_episode_config(&self.episode_config(), self.min_step_reward())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Fresh,
    Running,
    Finished,
}

/// Wraps a [`Plant`] with the shared episode semantics.
pub struct Episode<P> {
    plant: P,
    seed: u64,
    steps: usize,
    phase: Phase,
}

impl<P: Plant> Episode<P> {
    pub fn new(plant: P) -> Self {
        Self { plant, seed: 0, steps: 0, phase: Phase::Fresh }
    }

    pub fn plant(&self) -> &P {
        &self.plant
    }

    pub fn plant_mut(&mut self) -> &mut P {
        &mut self.plant
    }

    fn fail(&mut self, observation: Vec<f64>, reason: String) -> StepResult {
        self.phase = Phase::Finished;
        StepResult {
            observation,
            reward: self.plant.error_reward(),
            terminal: true,
            timeout: false,
            failure: true,
            failure_reason: Some(reason),
        }
    }
}

impl<P: Plant> Environment for Episode<P> {
    fn name(&self) -> &str {
        self.plant.name()
    }

    fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            max_steps: self.plant.max_steps(),
            error_reward: self.plant.error_reward(),
            action_space: self.plant.action_space().clone(),
            observation_space: self.plant.observation_space().clone(),
            seed: self.seed,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.seed = seed;
        self.steps = 0;
        self.phase = Phase::Running;
        self.plant.reset(&mut rng);
        self.plant.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        match self.phase {
            Phase::Fresh => return Err(EnvError::NotReset),
            Phase::Finished => return Err(EnvError::EpisodeFinished),
            Phase::Running => {}
        }
        let space = self.plant.action_space();
        if action.len() != space.dim() {
            return Err(EnvError::ActionDimension { expected: space.dim(), got: action.len() });
        }
        self.steps += 1;
        if !space.contains(action) {
            let obs = self.plant.observe();
            return Ok(self.fail(obs, "action outside the action space".into()));
        }

        let advanced = self.plant.advance(action, self.steps);
        let observation = self.plant.observe();
        let advance = match advanced {
            Ok(a) => a,
            Err(e) => return Ok(self.fail(observation, e.to_string())),
        };
        if !advance.reward.is_finite() || observation.iter().any(|v| !v.is_finite()) {
            return Ok(self.fail(observation, "non-finite state".into()));
        }
        if !self.plant.state_admissible() {
            return Ok(self.fail(observation, "state left its admissible box".into()));
        }

        let terminal = advance.completed;
        let timeout = !terminal && self.steps >= self.plant.max_steps();
        if terminal || timeout {
            self.phase = Phase::Finished;
        }
        Ok(StepResult {
            observation,
            reward: advance.reward,
            terminal,
            timeout,
            failure: false,
            failure_reason: None,
        })
    }

    fn min_step_reward(&self) -> f64 {
        self.plant.min_step_reward()
    }

    fn nominal_action(&self) -> Vec<f64> {
        self.plant.nominal_action()
    }

    fn state(&self) -> Vec<f64> {
        self.plant.state()
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn metadata(&self) -> EnvMetadata {
        self.plant.metadata()
    }
}

/// Deserialises a partial JSON override on top of `T::default()`.
pub(crate) fn config_from_json<T>(value: Option<&serde_json::Value>) -> Result<T, ConfigError>
where
    T: Default + for<'de> Deserialize<'de>,
{
    match value {
        None => Ok(T::default()),
        Some(v) => Ok(serde_json::from_value(v.clone())?),
    }
}
