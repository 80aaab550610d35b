//! Integrated monoclonal antibody plant: perfusion bioreactor and cell
//! separator upstream, twin Protein A capture columns and polishing train
//! downstream.
//!
//! One env step is one hour. The upstream model runs on fixed RK4
//! sub-steps; the downstream feed is the separator harvest concentration at
//! the start of the step (converted from mg/L to mg/mL) held for the step.
//! The reward is the harvest rate `mAb1·F_1 + mAb2·F_2` (mg/min) times 1e-3.

pub mod column;
pub mod downstream;
pub mod schedule;
pub mod upstream;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{config_from_json, sample_box, Advance, ConfigError, ContinuousSpace, EnvMetadata, Episode, Plant};
use crate::sim::{integrate_nonnegative, solve_steady_state, SimError};

pub use column::{AexParams, CaptureParams, CexParams, KineticColumn, LoopParams};
pub use downstream::{Downstream, DownstreamConfig};
pub use schedule::{ColumnRole, TwinColumnSchedule};
pub use upstream::{
    economic_objective, growth_rates, ph_of_ammonia, upstream_rhs, UpstreamModel, UpstreamParams, UPSTREAM_DIM,
    UPSTREAM_INPUTS,
};

use upstream::{TEMP, XT1, XT2, XV1, XV2};

pub const V_LOAD: usize = 7;
pub const V_PURIFY: usize = 8;
pub const ACTION_DIM: usize = 9;

/// Temperatures this far past the validated range still count as inside it.
const TEMPERATURE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MabConfig {
    pub upstream: UpstreamParams,
    pub downstream: DownstreamConfig,
    /// `F_in, F_r, F_1, F_2` (L/min), `T_c` (°C), `GLC_in, AMM_in` (mM),
    /// loading and purification velocities (cm/min).
    pub nominal_action: [f64; ACTION_DIM],
    pub action_low: [f64; ACTION_DIM],
    pub action_high: [f64; ACTION_DIM],
    /// Starting point of the settling run that defines the nominal state.
    pub initial_guess: [f64; UPSTREAM_DIM],
    /// Length of the settling run under the nominal action, minutes.
    pub settle_minutes: f64,
    pub state_low: [f64; UPSTREAM_DIM],
    pub state_high: [f64; UPSTREAM_DIM],
    /// Relative half-width of the init box around the nominal state.
    pub init_fraction: f64,
    /// Initial temperatures are drawn from `[T_nom − spread, T_nom]`.
    pub init_temperature_spread: f64,
    pub step_minutes: f64,
    pub substeps: usize,
    pub reward_scale: f64,
    pub max_steps: usize,
    pub error_reward: f64,
}

impl Default for MabConfig {
    fn default() -> Self {
        Self {
            upstream: UpstreamParams::default(),
            downstream: DownstreamConfig::default(),
            nominal_action: [0.07, 0.7, 0.77, 0.07, 36.5, 25.0, 0.0, 0.014, 0.1],
            action_low: [0.0, 0.05, 0.0, 0.0, 33.0, 0.0, 0.0, 0.0, 0.0],
            action_high: [0.2, 2.0, 2.5, 0.2, 37.0, 50.0, 5.0, 1.0, 1.0],
            initial_guess: [
                100.0, 4e9, 4.5e9, 10.0, 0.5, 20.0, 2.0, 6.0, 36.9, 10.0, 3e8, 3.5e8, 10.0, 0.5, 20.0, 2.0, 50.0,
            ],
            settle_minutes: 60.0 * 24.0 * 60.0,
            state_low: [20.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 33.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            state_high: [
                200.0, 1e11, 1e11, 1e3, 1e3, 1e3, 1e3, 1e5, 37.0, 50.0, 1e12, 1e12, 1e3, 1e3, 1e3, 1e3, 1e5,
            ],
            init_fraction: 0.1,
            init_temperature_spread: 1.0,
            step_minutes: 60.0,
            substeps: 240,
            reward_scale: 1e-3,
            max_steps: 200,
            error_reward: -100.0,
        }
    }
}

impl MabConfig {
    pub fn from_json(value: Option<&serde_json::Value>) -> Result<Self, ConfigError> {
        config_from_json(value)
    }
}

/// Nominal upstream state: settle under the nominal inputs, then polish with
/// Newton when it converges.
pub fn nominal_upstream_state(cfg: &MabConfig) -> Result<Vec<f64>, SimError> {
    let model = UpstreamModel { params: cfg.upstream };
    let u = &cfg.nominal_action[..UPSTREAM_INPUTS];
    let settled = integrate_nonnegative(&model, 0.0, &cfg.initial_guess, u, cfg.settle_minutes, 1.0, None)?;
    match solve_steady_state(&model, u, &settled) {
        Ok(r) if r.converged && r.x_star.iter().all(|v| *v >= 0.0) => Ok(r.x_star),
        _ => Ok(settled),
    }
}

pub struct MabPlant {
    cfg: MabConfig,
    model: UpstreamModel,
    action_space: ContinuousSpace,
    observation_space: ContinuousSpace,
    nominal: Vec<f64>,
    init_low: Vec<f64>,
    init_high: Vec<f64>,
    upstream: Vec<f64>,
    downstream: Downstream,
}

impl MabPlant {
    pub fn new(cfg: MabConfig) -> Result<Self, ConfigError> {
        cfg.upstream.validate()?;
        let downstream = Downstream::new(cfg.downstream)?;
        let action_space = ContinuousSpace::new(cfg.action_low.to_vec(), cfg.action_high.to_vec())?;
        if !action_space.contains(&cfg.nominal_action) {
            return Err(ConfigError::Invalid("nominal action lies outside the action bounds".into()));
        }
        if cfg.action_low[1] <= 0.0 {
            return Err(ConfigError::Invalid("recycle flow F_r needs a positive lower bound".into()));
        }
        let state_space = ContinuousSpace::new(cfg.state_low.to_vec(), cfg.state_high.to_vec())?;
        if !(cfg.step_minutes > 0.0 && cfg.substeps > 0 && cfg.max_steps > 0 && cfg.init_fraction >= 0.0) {
            return Err(ConfigError::Invalid("step length, substeps and max_steps must be positive".into()));
        }
        if !(cfg.reward_scale > 0.0 && cfg.init_temperature_spread >= 0.0 && cfg.settle_minutes >= 0.0) {
            return Err(ConfigError::Invalid("reward scale must be positive".into()));
        }
        let model = UpstreamModel { params: cfg.upstream };
        let nominal = nominal_upstream_state(&cfg)?;
        if !state_space.contains(&nominal) {
            return Err(ConfigError::Invalid("nominal state lies outside the admissible box".into()));
        }
        let (mut init_low, mut init_high) = crate::env::box_around(&nominal, cfg.init_fraction);
        init_low[TEMP] = (nominal[TEMP] - cfg.init_temperature_spread).max(upstream::T_MIN);
        init_high[TEMP] = nominal[TEMP].min(upstream::T_MAX);

        let mut low = cfg.state_low.to_vec();
        let mut high = cfg.state_high.to_vec();
        low.extend(std::iter::repeat(0.0).take(cfg.downstream.obs_len()));
        high.extend(std::iter::repeat(f64::INFINITY).take(cfg.downstream.obs_len() - 2));
        high.extend([1.0, 1.0]);
        let observation_space = ContinuousSpace::new(low, high)?;
        Ok(Self {
            upstream: nominal.clone(),
            cfg,
            model,
            action_space,
            observation_space,
            nominal,
            init_low,
            init_high,
            downstream,
        })
    }

    pub fn config(&self) -> &MabConfig {
        &self.cfg
    }

    pub fn model(&self) -> &UpstreamModel {
        &self.model
    }

    pub fn nominal_state(&self) -> &[f64] {
        &self.nominal
    }

    pub fn upstream_state(&self) -> &[f64] {
        &self.upstream
    }

    pub fn set_upstream_state(&mut self, x: &[f64]) {
        self.upstream = x.to_vec();
    }

    pub fn downstream(&self) -> &Downstream {
        &self.downstream
    }

    pub fn init_box(&self) -> (&[f64], &[f64]) {
        (&self.init_low, &self.init_high)
    }

    fn upstream_admissible(&self) -> bool {
        let x = &self.upstream;
        let (lo, hi) = (&self.cfg.state_low, &self.cfg.state_high);
        let in_box = (0..UPSTREAM_DIM).all(|i| {
            let slack = if i == TEMP { TEMPERATURE_SLACK } else { 0.0 };
            x[i] >= lo[i] - slack && x[i] <= hi[i] + slack
        });
        let ratio = |v: f64, t: f64| v <= t * (1.0 + 1e-9);
        in_box && ratio(x[XV1], x[XT1]) && ratio(x[XV2], x[XT2])
    }
}

impl Plant for MabPlant {
    fn name(&self) -> &'static str {
        "mab"
    }
    fn action_space(&self) -> &ContinuousSpace {
        &self.action_space
    }
    fn observation_space(&self) -> &ContinuousSpace {
        &self.observation_space
    }
    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }
    fn error_reward(&self) -> f64 {
        self.cfg.error_reward
    }
    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        let mut x = sample_box(rng, &self.init_low, &self.init_high);
        x[XV1] = x[XV1].min(x[XT1]);
        x[XV2] = x[XV2].min(x[XT2]);
        self.upstream = x;
        self.downstream.reset();
    }
    fn advance(&mut self, action: &[f64], _step: usize) -> Result<Advance, SimError> {
        let u = &action[..UPSTREAM_INPUTS];
        let c_feed = self.upstream[upstream::MAB2] * 1e-3;
        let h = self.cfg.step_minutes / self.cfg.substeps as f64;
        let next = integrate_nonnegative(&self.model, 0.0, &self.upstream, u, self.cfg.step_minutes, h, None)?;
        self.downstream.advance(self.cfg.step_minutes, action[V_LOAD], action[V_PURIFY], c_feed)?;
        self.upstream = next;
        Ok(Advance::reward(self.cfg.reward_scale * economic_objective(&self.upstream, u)))
    }
    fn state_admissible(&self) -> bool {
        self.upstream_admissible() && self.downstream.all_nonnegative()
    }
    fn observe(&self) -> Vec<f64> {
        let mut obs = self.upstream.clone();
        self.downstream.observe_into(&mut obs);
        obs
    }
    fn min_step_reward(&self) -> f64 {
        // Flows and concentrations are nonnegative on the admissible set.
        0.0
    }
    fn nominal_action(&self) -> Vec<f64> {
        self.cfg.nominal_action.to_vec()
    }
    fn state(&self) -> Vec<f64> {
        let mut x = self.upstream.clone();
        self.downstream.state_into(&mut x);
        x
    }
    fn metadata(&self) -> EnvMetadata {
        let mut observation_names: Vec<String> = upstream::STATE_NAMES.iter().map(|s| s.to_string()).collect();
        observation_names.extend(self.downstream.observation_names());
        let mut action_names: Vec<String> = upstream::INPUT_NAMES.iter().map(|s| s.to_string()).collect();
        action_names.extend(["v_load".to_string(), "v_purify".to_string()]);
        let p = &self.cfg.upstream;
        let d = &self.cfg.downstream;
        EnvMetadata {
            name: self.name().into(),
            a_dim: ACTION_DIM,
            o_dim: observation_names.len(),
            max_steps: self.cfg.max_steps,
            error_reward: self.cfg.error_reward,
            step_duration: self.cfg.step_minutes,
            time_unit: "min".into(),
            observation_names,
            action_names,
            notes: vec![
                format!(
                    "placeholder kinetics: n_death = {}, pH_opt = {}, omega_mAb = {}",
                    p.n_death, p.ph_opt, p.omega_mab
                ),
                format!(
                    "observation length depends on the grids: capture {}x{}, loops {}, CEX/AEX {}",
                    d.capture_axial, d.capture_radial, d.loop_axial, d.polish_axial
                ),
                format!("upstream state has {UPSTREAM_DIM} balances"),
                format!("literal glutamine recycle: {}", p.literal_gln_recycle),
                format!("literal elution sign: {}", d.capture.literal_elution_sign),
            ],
        }
    }
}

pub type MabEnv = Episode<MabPlant>;

pub fn mab_env(cfg: MabConfig) -> Result<MabEnv, ConfigError> {
    Ok(Episode::new(MabPlant::new(cfg)?))
}

/// Long-format CSV of downstream column profiles, one block of rows per
/// recorded step: `step,unit,field,node,value`.
pub struct ProfileCsv<W: std::io::Write> {
    out: csv::Writer<W>,
}

impl<W: std::io::Write> ProfileCsv<W> {
    pub fn new(out: W) -> Result<Self, csv::Error> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        out.write_record(["step", "unit", "field", "node", "value"])?;
        Ok(Self { out })
    }

    pub fn record(&mut self, step: usize, downstream: &Downstream) -> Result<(), csv::Error> {
        let step = step.to_string();
        for (unit, field, values) in downstream.profiles() {
            for (j, v) in values.iter().enumerate() {
                self.out.write_record([step.as_str(), &unit, field, &j.to_string(), &format!("{v:.16e}")])?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, csv::Error> {
        self.out.flush()?;
        self.out.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }
}
