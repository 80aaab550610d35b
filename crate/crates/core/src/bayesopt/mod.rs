//! Gaussian-process Bayesian optimisation with expected improvement.
//!
//! [`gp`] holds the regression model, [`bo`] the ask/tell loop and
//! [`profile`] the PenSim baseline that searches piecewise-constant feed
//! profiles.

pub mod bo;
pub mod gp;
pub mod profile;

pub use bo::{candidates, expected_improvement, BoConfig, BoState};
pub use gp::{FitOptions, GpHyper, GpModel};
pub use profile::{pensim_input_box, ProfileController, PROFILE_SEGMENTS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoError {
    #[error("kernel matrix is not positive definite even with jitter")]
    IllConditionedKernel,
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("need at least {needed} observations, have {have}")]
    NotEnoughData { needed: usize, have: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
