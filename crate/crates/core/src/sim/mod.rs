//! Deterministic numerical kernels shared by every plant model.
//!
//! Everything here is a pure function over value inputs: fixed-step RK4,
//! a damped Newton steady-state solver with finite-difference Jacobians,
//! and the 1-D finite-volume stencils used by the method-of-lines models.

mod ode;
mod steady;
mod stencil;

pub use ode::{integrate, integrate_nonnegative, rk4_step, FnSystem, OdeSystem, Rk4};
pub use steady::{
    fd_jacobian, solve_steady_state, solve_steady_state_with, NewtonOptions, SteadyStateResult,
};
pub use stencil::{
    central_dispersion, convect_disperse, danckwerts_face, upwind_convection, SpatialGrid,
};

use thiserror::Error;

/// Failures raised by integrators, solvers and model right-hand sides.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("non-finite state component at index {index}")]
    NonFiniteState { index: usize },
    #[error("singular Jacobian in Newton iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("Newton solver did not converge within {0} iterations")]
    MaxIterations(usize),
    #[error("reactor level {0} m is degenerate")]
    DegenerateLevel(f64),
    #[error("vessel volume {0} is degenerate")]
    DegenerateVolume(f64),
    #[error("recycle flow is zero while the separator sends flow to it")]
    ZeroRecycleFlow,
    #[error("temperature {0} degC is outside the validated [33, 37] range")]
    TemperatureOutOfRange(f64),
    #[error("modifier concentration {value} at node {node} is too small for the isotherm")]
    ZeroModifier { node: usize, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub(crate) fn check_finite(x: &[f64]) -> Result<(), SimError> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(SimError::NonFiniteState { index }),
        None => Ok(()),
    }
}

pub(crate) fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
