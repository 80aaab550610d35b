//! Simulated manufacturing-process environments with baseline controllers.
//!
//! Five plants share one episodic contract ([`env::Environment`]):
//! a CSTR ([`reactor`]), a continuous atropine line ([`atropine`]), an
//! integrated antibody upstream/downstream train ([`mab`]), penicillin
//! fed-batch ([`pensim`]) and beer fermentation ([`beer`]). Baseline
//! policies live in [`control`] and [`bayesopt`]; [`dataset`] records and
//! summarises offline trajectories. [`runner`] drives episodes end to end and
//! [`validate`] checks an environment against its contract.

pub mod atropine;
pub mod bayesopt;
pub mod beer;
pub mod control;
pub mod dataset;
pub mod env;
pub mod mab;
pub mod pensim;
pub mod reactor;
pub mod runner;
pub mod sim;
pub mod validate;

pub use env::{
    make_env, ContinuousSpace, EnvError, EnvKind, EnvMetadata, Environment, Episode,
    EpisodeConfig, Plant, StepResult,
};
pub use control::{Controller, ControllerConfig, ControllerKind};
pub use dataset::{Dataset, DatasetMeta, Recorder, Stats, Transition};
pub use runner::{RolloutReport, RunConfig, RunError, RunSpec};
pub use sim::{SimError, SpatialGrid};
