//! Baseline controllers: PID, tracking MPC, economic MPC and the
//! steady-state economic optimiser that supplies MPC setpoints.
//!
//! MPC and EMPC share one direct-single-shooting solver ([`shooting`]);
//! [`policy`] turns them into closed-loop controllers for the bundled
//! environments.

pub mod pid;
pub mod policy;
pub mod shooting;
pub mod steady_opt;

pub use pid::{pid_step, PidGains, PidState};
pub use policy::{build_controller, Controller, ControllerConfig, ControllerKind};
pub use shooting::{
    shift_plan, shooting_cost, solve_empc, solve_mpc, spg_minimize, write_trace_csv, EmpcSpec, MpcSolution,
    MpcSpec, Predictor, Sampled, ShootingProblem, SolveStatus, SpgOptions,
};
pub use steady_opt::{solve_steady_state_optimum, SteadyOptOptions, SteadyOptimum};

use thiserror::Error;

use crate::env::ConfigError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid controller specification: {0}")]
    InvalidSpec(String),
    #[error("no feasible steady state found")]
    NoFeasibleSteadyState,
    #[error("controller `{controller}` is not available for environment `{env}`")]
    Unsupported { controller: String, env: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
