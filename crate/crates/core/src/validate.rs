//! Invariant checks for one environment, and the steady operating point
//! each continuous plant is controlled around.

use serde::Serialize;

use crate::atropine::AtropineConfig;
use crate::control::policy::{atropine_target, mab_target};
use crate::control::{ControlError, ControllerConfig};
use crate::env::{make_env, ConfigError, EnvKind, Environment};
use crate::mab::MabConfig;
use crate::reactor::{ReactorConfig, ReactorPlant};
use crate::sim::solve_steady_state;

/// The published benchmark shape of an environment. `o_dim` is `None`
/// where this implementation's observation differs by design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub a_dim: usize,
    pub o_dim: Option<usize>,
    pub max_steps: usize,
    pub error_reward: f64,
}

pub fn reference_row(kind: EnvKind) -> ReferenceRow {
    let row = |a_dim, o_dim, max_steps, error_reward| ReferenceRow { a_dim, o_dim, max_steps, error_reward };
    match kind {
        EnvKind::Reactor => row(2, Some(3), 100, -1000.0),
        EnvKind::Atropine => row(4, None, 60, -100000.0),
        EnvKind::Mab => row(9, None, 200, -100.0),
        EnvKind::Pensim => row(6, Some(9), 1150, -100.0),
        EnvKind::Beer => row(1, Some(8), 200, -200.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub env: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// Steps taken by the short rollouts inside [`validate_env`].
pub const VALIDATION_STEPS: usize = 10;

fn nominal_trace(env: &mut dyn Environment, seed: u64, steps: usize) -> Vec<(Vec<f64>, f64, bool)> {
    let mut out = vec![(env.reset(seed), 0.0, false)];
    let a = env.nominal_action();
    for _ in 0..steps {
        match env.step(&a) {
            Ok(r) => {
                let done = r.terminal || r.timeout;
                out.push((r.observation, r.reward, r.failure));
                if done {
                    break;
                }
            }
            Err(_) => break,
        }
    }
    out
}

/// Runs the environment contract checks. `reference` compares against the
/// published shape and only makes sense for the default configuration.
pub fn validate_env(
    kind: EnvKind,
    config: Option<&serde_json::Value>,
    reference: bool,
) -> Result<ValidationReport, ConfigError> {
    let mut env = make_env(kind, config)?;
    let meta = env.metadata();
    let ec = env.episode_config();
    let mut checks = Vec::new();
    let mut check = |name, passed, detail: String| checks.push(Check { name, passed, detail });

    if reference {
        let r = reference_row(kind);
        let passed = meta.a_dim == r.a_dim
            && r.o_dim.is_none_or(|o| o == meta.o_dim)
            && meta.max_steps == r.max_steps
            && meta.error_reward == r.error_reward;
        check(
            "reference_row",
            passed,
            format!(
                "a_dim {} o_dim {} max_steps {} error_reward {} (reference {:?})",
                meta.a_dim, meta.o_dim, meta.max_steps, meta.error_reward, r
            ),
        );
    }

    let r_min = env.min_step_reward();
    check(
        "error_reward_bound",
        env.error_reward_consistent(),
        format!("error_reward {} vs r_min {} x max_steps {} = {}", ec.error_reward, r_min, ec.max_steps, r_min * ec.max_steps as f64),
    );

    let dims = ec.action_space.dim() == meta.a_dim && ec.observation_space.dim() == meta.o_dim;
    check("space_dims", dims, format!("action {} observation {}", ec.action_space.dim(), ec.observation_space.dim()));

    let a = nominal_trace(env.as_mut(), 11, VALIDATION_STEPS);
    let b = nominal_trace(env.as_mut(), 11, VALIDATION_STEPS);
    check("seeded_determinism", a == b, format!("{} steps replayed", a.len() - 1));

    let finite = a.iter().all(|(o, r, _)| o.len() == meta.o_dim && o.iter().all(|v| v.is_finite()) && r.is_finite());
    check("finite_observations", finite, "nominal rollout".into());

    let floor = a.iter().skip(1).filter(|(_, _, failed)| !failed).all(|(_, r, _)| *r >= r_min);
    check("reward_floor", floor, format!("per-step rewards >= {r_min}"));

    env.reset(3);
    let mut bad = ec.action_space.high().to_vec();
    bad[0] += 1.0 + bad[0].abs();
    let outside = match env.step(&bad) {
        Ok(r) => r.failure && r.terminal && r.reward == ec.error_reward,
        Err(_) => false,
    };
    check("out_of_bounds_action_fails", outside, "action above the upper bound".into());

    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport { env: kind.to_string(), passed, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub env: String,
    /// How the point was chosen.
    pub basis: &'static str,
    pub x_s: Vec<f64>,
    pub u_s: Vec<f64>,
    pub residual: f64,
}

/// The steady state the MPC baselines regulate around: the reactor's
/// Newton steady state at its nominal input, and the steady economic optima
/// of the atropine and antibody plants. Batch plants have none.
pub fn operating_point(
    kind: EnvKind,
    env_cfg: Option<&serde_json::Value>,
    ctrl: &ControllerConfig,
) -> Result<OperatingPoint, ControlError> {
    let (basis, x_s, u_s, residual) = match kind {
        EnvKind::Reactor => {
            let cfg = ReactorConfig::from_json(env_cfg)?;
            let plant = ReactorPlant::new(cfg.clone())?;
            let u = cfg.nominal_action.to_vec();
            let r = solve_steady_state(plant.model(), &u, plant.steady_state())?;
            if !r.converged {
                return Err(ControlError::NoFeasibleSteadyState);
            }
            ("newton_at_nominal_input", r.x_star, u, r.residual_norm)
        }
        EnvKind::Atropine => {
            let t = atropine_target(&AtropineConfig::from_json(env_cfg)?, ctrl)?;
            ("steady_economic_optimum", t.x_s, t.u_s, t.residual)
        }
        EnvKind::Mab => {
            let t = mab_target(&MabConfig::from_json(env_cfg)?, ctrl)?;
            ("steady_economic_optimum", t.x_s, t.u_s, t.residual)
        }
        EnvKind::Pensim | EnvKind::Beer => {
            return Err(ControlError::Unsupported { controller: "steady-state".into(), env: kind.to_string() })
        }
    };
    Ok(OperatingPoint { env: kind.to_string(), basis, x_s, u_s, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reactor_passes_all_checks() {
        let rep = validate_env(EnvKind::Reactor, None, true).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.checks.len(), 7);
    }

    #[test]
    fn reference_check_fails_on_override() {
        let cfg = serde_json::json!({ "max_steps": 50 });
        let rep = validate_env(EnvKind::Reactor, Some(&cfg), true).unwrap();
        assert!(!rep.passed);
        assert!(!rep.checks[0].passed);
        assert!(validate_env(EnvKind::Reactor, Some(&cfg), false).unwrap().passed);
    }

    #[test]
    fn reactor_operating_point_is_tight() {
        let p = operating_point(EnvKind::Reactor, None, &ControllerConfig::default()).unwrap();
        assert!(p.residual <= 1e-10);
        assert_eq!(p.u_s.len(), 2);
        assert!(operating_point(EnvKind::Beer, None, &ControllerConfig::default()).is_err());
    }
}
