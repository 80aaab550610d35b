//! Batch beer fermentation with the broth temperature as the only input.
//!
//! Seven component balances over active, latent and dead yeast, sugar,
//! ethanol, diacetyl and ethyl acetate (all g/L, time in hours). Rates come
//! from a pluggable [`BeerKinetics`]; the shipped [`DemoArrhenius`] closure
//! uses made-up reference rates and activation temperatures and is not a
//! validated brewing model.
//!
//! Sign convention: `mu_s` is a consumption rate and is nonpositive,
//! `mu_eth` a production rate and nonnegative. The dead-cell balance keeps
//! `+mu_sd·X_D`; the demo closure supplies a nonpositive `mu_sd` so the term
//! acts as settling.
//!
//! Every hour spent before the sugar falls to its target costs 1. The step
//! that reaches the target instead pays the number of unused steps and ends
//! the batch.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{config_from_json, sample_box, Advance, ConfigError, ContinuousSpace, EnvMetadata, Episode, Plant};
use crate::sim::{integrate_nonnegative, OdeSystem, SimError};

pub const STATE_DIM: usize = 7;
pub const OBS_DIM: usize = 8;
pub const STATE_NAMES: [&str; STATE_DIM] = ["X_A", "X_L", "X_D", "S", "EtOH", "DY", "EA"];

const KELVIN: f64 = 273.15;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BeerState {
    pub x_a: f64,
    pub x_l: f64,
    pub x_d: f64,
    pub s: f64,
    pub etoh: f64,
    pub dy: f64,
    pub ea: f64,
}

impl BeerState {
    pub fn from_slice(x: &[f64]) -> Self {
        Self { x_a: x[0], x_l: x[1], x_d: x[2], s: x[3], etoh: x[4], dy: x[5], ea: x[6] }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.x_a, self.x_l, self.x_d, self.s, self.etoh, self.dy, self.ea]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BeerRates {
    pub mu_x: f64,
    pub mu_dt: f64,
    pub mu_l: f64,
    pub mu_sd: f64,
    pub mu_s: f64,
    pub mu_eth: f64,
    /// Ethanol inhibition factor multiplying `mu_eth`.
    pub f: f64,
    pub mu_dy: f64,
    pub mu_ab: f64,
    pub y_ea: f64,
}

/// Time derivatives of `(X_A, X_L, X_D, S, EtOH, DY, EA)`.
pub fn beer_rhs(x: &BeerState, r: &BeerRates) -> [f64; STATE_DIM] {
    [
        r.mu_x * x.x_a - r.mu_dt * x.x_a + r.mu_l * x.x_l,
        -r.mu_l * x.x_l,
        r.mu_sd * x.x_d + r.mu_dt * x.x_a,
        r.mu_s * x.x_a,
        r.f * r.mu_eth * x.x_a,
        r.mu_dy * x.s * x.x_a - r.mu_ab * x.dy * x.etoh,
        r.y_ea * r.mu_x * x.x_a,
    ]
}

/// Reward of the step with 1-based index `step`, and whether the batch is
/// complete.
pub fn beer_reward(x: &BeerState, sugar_target: f64, step: usize, max_steps: usize) -> (f64, bool) {
    if x.s <= sugar_target {
        (max_steps.saturating_sub(step) as f64, true)
    } else {
        (-1.0, false)
    }
}

/// Rate laws as a function of the broth state and temperature (°C).
pub trait BeerKinetics: Send + Sync {
    fn rates(&self, x: &BeerState, temp_c: f64) -> BeerRates;
}

/// An Arrhenius factor `k_ref·exp(−θ·(1/T − 1/T_ref))`, with θ the
/// activation temperature in K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrhenius {
    pub k_ref: f64,
    pub theta: f64,
}

impl Arrhenius {
    pub fn at(&self, temp_k: f64, ref_k: f64) -> f64 {
        self.k_ref * (-self.theta * (1.0 / temp_k - 1.0 / ref_k)).exp()
    }
}

/// Demonstration kinetics: Arrhenius rate constants, Monod sugar limitation
/// of growth, uptake and ethanol production, and linear ethanol inhibition
/// `f = max(0, 1 − EtOH/(0.5·S0))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoArrhenius {
    pub ref_temp_c: f64,
    pub growth: Arrhenius,
    pub death: Arrhenius,
    pub lag: Arrhenius,
    pub settling: Arrhenius,
    pub uptake: Arrhenius,
    pub ethanol: Arrhenius,
    pub diacetyl: Arrhenius,
    pub diacetyl_uptake: Arrhenius,
    pub k_sugar: f64,
    pub initial_sugar: f64,
    pub ethyl_acetate_yield: f64,
}

impl Default for DemoArrhenius {
    fn default() -> Self {
        Self {
            ref_temp_c: 13.0,
            growth: Arrhenius { k_ref: 0.03, theta: 7200.0 },
            death: Arrhenius { k_ref: 0.002, theta: 8000.0 },
            lag: Arrhenius { k_ref: 0.05, theta: 5000.0 },
            settling: Arrhenius { k_ref: 0.01, theta: 3000.0 },
            uptake: Arrhenius { k_ref: 0.2, theta: 6000.0 },
            ethanol: Arrhenius { k_ref: 0.09, theta: 6000.0 },
            diacetyl: Arrhenius { k_ref: 2e-6, theta: 9000.0 },
            diacetyl_uptake: Arrhenius { k_ref: 1e-4, theta: 4000.0 },
            k_sugar: 10.0,
            initial_sugar: 130.0,
            ethyl_acetate_yield: 0.01,
        }
    }
}

impl DemoArrhenius {
    fn factors(&self) -> [Arrhenius; 8] {
        [
            self.growth, self.death, self.lag, self.settling, self.uptake, self.ethanol, self.diacetyl,
            self.diacetyl_uptake,
        ]
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let ok = self.factors().iter().all(|a| a.k_ref >= 0.0 && a.k_ref.is_finite() && a.theta.is_finite())
            && self.k_sugar > 0.0
            && self.initial_sugar > 0.0
            && self.ethyl_acetate_yield >= 0.0
            && self.ref_temp_c + KELVIN > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ConfigError::Invalid("beer kinetic constants must be nonnegative and finite".into()))
        }
    }
}

impl BeerKinetics for DemoArrhenius {
    fn rates(&self, x: &BeerState, temp_c: f64) -> BeerRates {
        let (t, t_ref) = (temp_c + KELVIN, self.ref_temp_c + KELVIN);
        let s = x.s.max(0.0);
        let monod = s / (self.k_sugar + s);
        BeerRates {
            mu_x: self.growth.at(t, t_ref) * monod,
            mu_dt: self.death.at(t, t_ref),
            mu_l: self.lag.at(t, t_ref),
            mu_sd: -self.settling.at(t, t_ref),
            mu_s: -self.uptake.at(t, t_ref) * monod,
            mu_eth: self.ethanol.at(t, t_ref) * monod,
            f: (1.0 - x.etoh / (0.5 * self.initial_sugar)).max(0.0),
            mu_dy: self.diacetyl.at(t, t_ref),
            mu_ab: self.diacetyl_uptake.at(t, t_ref),
            y_ea: self.ethyl_acetate_yield,
        }
    }
}

/// Kinetics selected by name in the config (`{"model": "demo_arrhenius", ...}`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum BeerKineticsConfig {
    DemoArrhenius(DemoArrhenius),
}

impl Default for BeerKineticsConfig {
    fn default() -> Self {
        BeerKineticsConfig::DemoArrhenius(DemoArrhenius::default())
    }
}

impl BeerKineticsConfig {
    pub fn build(&self) -> Box<dyn BeerKinetics> {
        match *self {
            BeerKineticsConfig::DemoArrhenius(k) => Box::new(k),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let BeerKineticsConfig::DemoArrhenius(k) = self;
        k.validate()
    }
}

/// The fermenter; the input vector is `[T °C]`.
pub struct BeerModel {
    pub kinetics: Box<dyn BeerKinetics>,
}

impl OdeSystem for BeerModel {
    fn dim(&self) -> usize {
        STATE_DIM
    }
    fn rhs(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        let st = BeerState::from_slice(x);
        dx.copy_from_slice(&beer_rhs(&st, &self.kinetics.rates(&st, u[0])));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeerConfig {
    pub kinetics: BeerKineticsConfig,
    pub initial_state: [f64; STATE_DIM],
    /// Relative half-width of the seeded jitter around `initial_state`.
    pub init_fraction: f64,
    pub temp_low: f64,
    pub temp_high: f64,
    pub nominal_temp: f64,
    pub sugar_target: f64,
    pub state_high: [f64; STATE_DIM],
    pub step_hours: f64,
    pub substeps: usize,
    pub max_steps: usize,
    pub error_reward: f64,
}

impl Default for BeerConfig {
    fn default() -> Self {
        Self {
            kinetics: BeerKineticsConfig::default(),
            initial_state: [0.0, 2.0, 0.0, 130.0, 0.0, 0.0, 0.0],
            init_fraction: 0.02,
            temp_low: 9.0,
            temp_high: 16.0,
            nominal_temp: 13.0,
            sugar_target: 0.5,
            state_high: [100.0, 100.0, 100.0, 300.0, 300.0, 10.0, 10.0],
            step_hours: 1.0,
            substeps: 10,
            max_steps: 200,
            error_reward: -200.0,
        }
    }
}

impl BeerConfig {
    pub fn from_json(value: Option<&serde_json::Value>) -> Result<Self, ConfigError> {
        config_from_json(value)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.kinetics.validate()?;
        if self.substeps == 0 || !(self.step_hours > 0.0) || self.max_steps == 0 {
            return Err(ConfigError::Invalid("beer stepping settings must be positive".into()));
        }
        if !(self.temp_low <= self.nominal_temp && self.nominal_temp <= self.temp_high) {
            return Err(ConfigError::Invalid("beer nominal temperature outside its bounds".into()));
        }
        if !(self.sugar_target >= 0.0) || !(self.init_fraction >= 0.0) {
            return Err(ConfigError::Invalid("beer sugar target and jitter must be nonnegative".into()));
        }
        if self.initial_state.iter().any(|v| !(*v >= 0.0)) {
            return Err(ConfigError::Invalid("beer initial concentrations must be nonnegative".into()));
        }
        Ok(())
    }
}

pub struct BeerPlant {
    cfg: BeerConfig,
    model: BeerModel,
    action_space: ContinuousSpace,
    state_space: ContinuousSpace,
    observation_space: ContinuousSpace,
    init_low: Vec<f64>,
    init_high: Vec<f64>,
    state: Vec<f64>,
    elapsed: f64,
}

impl BeerPlant {
    pub fn new(cfg: BeerConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let action_space = ContinuousSpace::new(vec![cfg.temp_low], vec![cfg.temp_high])?;
        let state_space = ContinuousSpace::new(vec![0.0; STATE_DIM], cfg.state_high.to_vec())?;
        let mut high = cfg.state_high.to_vec();
        high.push(1.0);
        let observation_space = ContinuousSpace::new(vec![0.0; OBS_DIM], high)?;
        let init_low: Vec<f64> = cfg.initial_state.iter().map(|v| v * (1.0 - cfg.init_fraction)).collect();
        let init_high: Vec<f64> = cfg.initial_state.iter().map(|v| v * (1.0 + cfg.init_fraction)).collect();
        if !state_space.contains(&init_high) {
            return Err(ConfigError::Invalid("beer init box leaves the state box".into()));
        }
        Ok(Self {
            model: BeerModel { kinetics: cfg.kinetics.build() },
            state: cfg.initial_state.to_vec(),
            elapsed: 0.0,
            cfg,
            action_space,
            state_space,
            observation_space,
            init_low,
            init_high,
        })
    }

    pub fn config(&self) -> &BeerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &BeerModel {
        &self.model
    }

    pub fn init_box(&self) -> (&[f64], &[f64]) {
        (&self.init_low, &self.init_high)
    }

    pub fn beer_state(&self) -> BeerState {
        BeerState::from_slice(&self.state)
    }

    /// Hours since the batch started.
    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }
}

impl Plant for BeerPlant {
    fn name(&self) -> &'static str {
        "beer"
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
        self.state = sample_box(rng, &self.init_low, &self.init_high);
        self.elapsed = 0.0;
    }
    fn advance(&mut self, action: &[f64], step: usize) -> Result<Advance, SimError> {
        let h = self.cfg.step_hours / self.cfg.substeps as f64;
        self.state = integrate_nonnegative(&self.model, self.elapsed, &self.state, action, self.cfg.step_hours, h, None)?;
        self.elapsed += self.cfg.step_hours;
        let (reward, completed) = beer_reward(&self.beer_state(), self.cfg.sugar_target, step, self.cfg.max_steps);
        Ok(Advance { reward, completed })
    }
    fn state_admissible(&self) -> bool {
        self.state_space.contains(&self.state)
    }
    fn observe(&self) -> Vec<f64> {
        let mut obs = self.state.clone();
        let horizon = self.cfg.step_hours * self.cfg.max_steps as f64;
        obs.push((self.elapsed / horizon).min(1.0));
        obs
    }
    fn min_step_reward(&self) -> f64 {
        -1.0
    }
    fn nominal_action(&self) -> Vec<f64> {
        vec![self.cfg.nominal_temp]
    }
    fn state(&self) -> Vec<f64> {
        self.state.clone()
    }
    fn metadata(&self) -> EnvMetadata {
        let mut observation_names: Vec<String> = STATE_NAMES.iter().map(|s| s.to_string()).collect();
        observation_names.push("batch_fraction".into());
        EnvMetadata {
            name: self.name().into(),
            a_dim: 1,
            o_dim: OBS_DIM,
            max_steps: self.cfg.max_steps,
            error_reward: self.cfg.error_reward,
            step_duration: self.cfg.step_hours,
            time_unit: "h".into(),
            observation_names,
            action_names: vec!["T".into()],
            notes: vec![
                "kinetics: demonstration closure, not a validated brewing model".into(),
                format!("batch completes when sugar <= {}", self.cfg.sugar_target),
            ],
        }
    }
}

pub type BeerEnv = Episode<BeerPlant>;

pub fn beer_env(cfg: BeerConfig) -> Result<BeerEnv, ConfigError> {
    Ok(Episode::new(BeerPlant::new(cfg)?))
}
