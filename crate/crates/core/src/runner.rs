//! Episode loops shared by the command-line tool and the tests: closed-loop
//! rollouts, dataset generation (optionally in parallel) and the PenSim
//! Bayesian-optimisation pipeline.

use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::{pensim_input_box, BoConfig, BoError, BoState, ProfileController, PROFILE_SEGMENTS};
use crate::control::{build_controller, ControlError, Controller, ControllerConfig, ControllerKind};
use crate::dataset::{Dataset, DatasetError, Recorder, RecorderSpec, Transition};
use crate::env::{make_env, ConfigError, EnvError, EnvKind, Environment};
use crate::pensim::PenSimConfig;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("worker thread panicked")]
    Worker,
}

/// Contents of a run configuration file. Every section is optional.
///
/// ```json
/// { "env": { "max_steps": 20 }, "controller": { "mpc": { "horizon": 10 } }, "bo": { "seed": 3 } }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Partial override of the selected environment's config.
    pub env: Option<serde_json::Value>,
    pub controller: ControllerConfig,
    pub bo: BoConfig,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub env: EnvKind,
    pub controller: ControllerKind,
    pub episodes: usize,
    pub seed: u64,
    pub jobs: usize,
    pub config: RunConfig,
}

impl RunSpec {
    pub fn new(env: EnvKind, controller: ControllerKind, episodes: usize, seed: u64) -> Self {
        Self { env, controller, episodes, seed, jobs: 1, config: RunConfig::default() }
    }

    pub fn check(&self) -> Result<(), RunError> {
        if !self.controller.supports(self.env) {
            return Err(RunError::Usage(format!(
                "controller `{}` is not available for environment `{}`",
                self.controller, self.env
            )));
        }
        if self.jobs == 0 {
            return Err(RunError::Usage("--jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn episode_seed(&self, episode: usize) -> u64 {
        self.seed.wrapping_add(episode as u64)
    }

    fn make_env(&self) -> Result<Box<dyn Environment>, RunError> {
        Ok(make_env(self.env, self.config.env.as_ref())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode_id: usize,
    pub seed: u64,
    pub steps: usize,
    #[serde(rename = "return")]
    pub total_reward: f64,
    pub terminal: bool,
    pub timeout: bool,
    pub failure: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure_reason: Option<String>,
    pub final_observation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub env: String,
    pub controller: String,
    pub seed: u64,
    pub a_dim: usize,
    pub o_dim: usize,
    pub max_steps: usize,
    pub error_reward: f64,
    pub mean_return: f64,
    pub success_rate: f64,
    pub episodes: Vec<EpisodeSummary>,
}

/// Runs one episode to its end, optionally recording every transition.
pub fn run_episode(
    env: &mut dyn Environment,
    ctrl: &mut dyn Controller,
    episode_id: usize,
    seed: u64,
    mut recorder: Option<&mut Recorder>,
) -> Result<EpisodeSummary, RunError> {
    ctrl.reset(seed);
    let mut obs = env.reset(seed);
    let mut total = 0.0;
    let mut step = 0;
    loop {
        let action = ctrl.act(&obs);
        let r = env.step(&action)?;
        total += r.reward;
        if let Some(rec) = recorder.as_deref_mut() {
            rec.record(Transition {
                episode_id,
                step,
                observation: obs,
                action,
                reward: r.reward,
                terminal: r.terminal,
                timeout: r.timeout,
            })?;
        }
        step += 1;
        obs = r.observation;
        if r.terminal || r.timeout {
            return Ok(EpisodeSummary {
                episode_id,
                seed,
                steps: step,
                total_reward: total,
                terminal: r.terminal,
                timeout: r.timeout,
                failure: r.failure,
                failure_reason: r.failure_reason,
                final_observation: obs,
            });
        }
    }
}

/// Everything a generation run produced.
#[derive(Debug)]
pub struct Generated {
    pub dataset: Dataset,
    pub summaries: Vec<EpisodeSummary>,
    /// The optimiser state of a Bayesian-optimisation run.
    pub bo: Option<BoState>,
}

fn recorder_spec(spec: &RunSpec, env: &dyn Environment) -> RecorderSpec {
    let meta = env.metadata();
    RecorderSpec {
        env: spec.env.to_string(),
        baseline: spec.controller.to_string(),
        a_dim: meta.a_dim,
        o_dim: meta.o_dim,
        max_steps: meta.max_steps,
        error_reward: meta.error_reward,
        seed: spec.seed,
        error_reward_checked: env.error_reward_consistent(),
    }
}

/// Runs `spec.episodes` episodes, episode `i` seeded with `seed + i`, and
/// records them in episode order.
///
/// Feedback controllers split episodes into contiguous blocks across
/// `spec.jobs` threads, each with its own environment and controller, so the
/// output does not depend on the job count. Bayesian optimisation is
/// sequential by nature and ignores `jobs`.
pub fn generate(spec: &RunSpec) -> Result<Generated, RunError> {
    spec.check()?;
    if spec.controller == ControllerKind::Bo {
        return generate_bo(spec);
    }
    let probe = spec.make_env()?;
    let rspec = recorder_spec(spec, probe.as_ref());
    drop(probe);
    let jobs = spec.jobs.min(spec.episodes).max(1);
    let per = spec.episodes.div_ceil(jobs);
    let blocks: Vec<(usize, usize)> =
        (0..jobs).map(|j| (j * per, ((j + 1) * per).min(spec.episodes))).filter(|(a, b)| a < b).collect();

    let run_block = |(start, end): (usize, usize)| -> Result<(Recorder, Vec<EpisodeSummary>), RunError> {
        let mut env = spec.make_env()?;
        let mut ctrl = build_controller(spec.controller, spec.env, spec.config.env.as_ref(), &spec.config.controller)?;
        let mut rec = Recorder::new(rspec.clone());
        let mut sums = Vec::with_capacity(end - start);
        for (local, i) in (start..end).enumerate() {
            let mut s = run_episode(env.as_mut(), ctrl.as_mut(), local, spec.episode_seed(i), Some(&mut rec))?;
            s.episode_id = i;
            sums.push(s);
        }
        Ok((rec, sums))
    };

    let results: Vec<Result<(Recorder, Vec<EpisodeSummary>), RunError>> = if blocks.len() <= 1 {
        blocks.into_iter().map(run_block).collect()
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = blocks.into_iter().map(|b| scope.spawn(move || run_block(b))).collect();
            handles.into_iter().map(|h| h.join().unwrap_or(Err(RunError::Worker))).collect()
        })
    };

    let mut rec = Recorder::new(rspec);
    let mut summaries = Vec::with_capacity(spec.episodes);
    for r in results {
        let (part, sums) = r?;
        rec.append(part)?;
        summaries.extend(sums);
    }
    Ok(Generated { dataset: rec.finish()?, summaries, bo: None })
}

/// Random profiles for the first `bo.initial_random` episodes, then one
/// expected-improvement proposal per episode. The episode return is the
/// score.
fn generate_bo(spec: &RunSpec) -> Result<Generated, RunError> {
    let cfg = PenSimConfig::from_json(spec.config.env.as_ref())?;
    let (low, high) = pensim_input_box(&cfg);
    let (low, high) = ProfileController::search_box(&low, &high, PROFILE_SEGMENTS);
    let mut bo_cfg = spec.config.bo.clone();
    bo_cfg.seed ^= spec.seed;
    let mut bo = BoState::new(low, high, bo_cfg)?;
    let mut env = spec.make_env()?;
    let mut rec = Recorder::new(recorder_spec(spec, env.as_ref()));
    let mut summaries = Vec::with_capacity(spec.episodes);
    for i in 0..spec.episodes {
        let params = bo.next_point()?;
        let mut ctrl = ProfileController::new(params.clone(), cfg.action_low.len(), PROFILE_SEGMENTS, cfg.max_steps);
        let s = run_episode(env.as_mut(), &mut ctrl, i, spec.episode_seed(i), Some(&mut rec))?;
        bo.observe(params, s.total_reward)?;
        summaries.push(s);
    }
    Ok(Generated { dataset: rec.finish()?, summaries, bo: Some(bo) })
}

/// Generates episodes and summarises them without keeping transitions.
pub fn rollout(spec: &RunSpec) -> Result<RolloutReport, RunError> {
    let g = generate(spec)?;
    let meta = &g.dataset.meta;
    let n = g.summaries.len().max(1) as f64;
    Ok(RolloutReport {
        env: meta.env.clone(),
        controller: meta.baseline.clone(),
        seed: spec.seed,
        a_dim: meta.a_dim,
        o_dim: meta.o_dim,
        max_steps: meta.max_steps,
        error_reward: meta.error_reward,
        mean_return: g.summaries.iter().map(|s| s.total_reward).sum::<f64>() / n,
        success_rate: g.summaries.iter().filter(|s| !s.failure).count() as f64 / n,
        episodes: g.summaries,
    })
}

/// Replays episode 0 of an antibody-plant run and writes the downstream
/// column profiles after every step as long-format CSV.
pub fn write_mab_profiles<W: std::io::Write>(spec: &RunSpec, out: W) -> Result<W, RunError> {
    if spec.env != EnvKind::Mab {
        return Err(RunError::Usage("column profiles exist only for the mab environment".into()));
    }
    spec.check()?;
    let mut env = crate::mab::mab_env(crate::mab::MabConfig::from_json(spec.config.env.as_ref())?)?;
    let mut ctrl = build_controller(spec.controller, spec.env, spec.config.env.as_ref(), &spec.config.controller)?;
    let seed = spec.episode_seed(0);
    ctrl.reset(seed);
    let mut obs = env.reset(seed);
    let mut log = crate::mab::ProfileCsv::new(out).map_err(DatasetError::from)?;
    log.record(0, env.plant().downstream()).map_err(DatasetError::from)?;
    for step in 1.. {
        let r = env.step(&ctrl.act(&obs))?;
        log.record(step, env.plant().downstream()).map_err(DatasetError::from)?;
        obs = r.observation;
        if r.terminal || r.timeout {
            break;
        }
    }
    Ok(log.finish().map_err(DatasetError::from)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(env: EnvKind, ctrl: ControllerKind, episodes: usize, max_steps: usize) -> RunSpec {
        let mut s = RunSpec::new(env, ctrl, episodes, 40);
        s.config.env = Some(serde_json::json!({ "max_steps": max_steps }));
        s
    }

    #[test]
    fn job_count_does_not_change_output() {
        let mut spec = short(EnvKind::Reactor, ControllerKind::Random, 7, 15);
        let one = generate(&spec).unwrap();
        spec.jobs = 3;
        let three = generate(&spec).unwrap();
        assert_eq!(one.dataset, three.dataset);
        assert_eq!(one.summaries, three.summaries);
        assert_eq!(one.dataset.meta.trajectory_count, 7);
    }

    #[test]
    fn rollout_is_deterministic() {
        let spec = short(EnvKind::Beer, ControllerKind::Random, 2, 30);
        let a = serde_json::to_string(&rollout(&spec).unwrap()).unwrap();
        let b = serde_json::to_string(&rollout(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reactor_episode_fits_step_limit() {
        let spec = RunSpec::new(EnvKind::Reactor, ControllerKind::Zero, 1, 0);
        let g = generate(&spec).unwrap();
        assert!(g.dataset.rows.len() <= 100);
        assert_eq!(g.dataset.meta.max_steps, 100);
    }

    #[test]
    fn bo_pipeline_emits_configured_count() {
        let mut spec = short(EnvKind::Pensim, ControllerKind::Bo, 5, 40);
        spec.config.bo = BoConfig { initial_random: 3, candidates: 64, ..BoConfig::default() };
        spec.config.bo.fit.starts = 3;
        let g = generate(&spec).unwrap();
        assert_eq!(g.dataset.meta.trajectory_count, 5);
        assert_eq!(g.summaries.len(), 5);
        let bo = g.bo.unwrap();
        assert_eq!(bo.iteration(), 5);
        assert_eq!(bo.fits(), 4);
        for (s, score) in g.summaries.iter().zip(bo.scores()) {
            assert_eq!(s.total_reward, *score);
        }
    }

    #[test]
    fn mab_profiles_cover_every_step() {
        let spec = short(EnvKind::Mab, ControllerKind::Zero, 1, 2);
        let text = String::from_utf8(write_mab_profiles(&spec, Vec::new()).unwrap()).unwrap();
        let steps: std::collections::BTreeSet<&str> =
            text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(steps.into_iter().collect::<Vec<_>>(), vec!["0", "1", "2"]);
        assert!(write_mab_profiles(&short(EnvKind::Beer, ControllerKind::Zero, 1, 2), Vec::new()).is_err());
    }

    #[test]
    fn unsupported_pair_is_a_usage_error() {
        let spec = RunSpec::new(EnvKind::Beer, ControllerKind::Bo, 1, 0);
        assert!(matches!(generate(&spec), Err(RunError::Usage(_))));
    }
}
