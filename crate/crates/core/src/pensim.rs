//! Penicillin fed-batch fermentation.
//!
//! Biomass is split into growing tips (`A0`), non-growing hyphae (`A1`),
//! degenerated (`A3`) and autolysed (`A4`) regions. Product `P` and the
//! combined oil/sugar substrate `s` are in g/L, the broth volume `V` in L and
//! time in hours. The region, product, substrate and volume balances are
//! fixed; the rate laws come from a pluggable [`PenKinetics`]. The shipped
//! [`DemoMonod`] closure is a demonstration model with made-up constants,
//! not a validated penicillin model. Oxygen and nitrogen balances are not
//! modelled.
//!
//! The non-growing balance carries a literal-reading switch: by default the
//! degeneration and dilution terms enter separately
//! (`... − r_deg − F_in·A1/V`); `literal_a1` multiplies them instead.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    box_around, config_from_json, sample_box, Advance, ConfigError, ContinuousSpace, EnvMetadata,
    Episode, Plant,
};
use crate::sim::{integrate_nonnegative, OdeSystem, SimError};

pub const STATE_DIM: usize = 7;
pub const ACTION_DIM: usize = 6;
pub const OBS_DIM: usize = 9;

pub const STATE_NAMES: [&str; STATE_DIM] = ["A0", "A1", "A3", "A4", "P", "s", "V"];
pub const ACTION_NAMES: [&str; ACTION_DIM] = ["F_s", "F_oil", "F_PAA", "F_ab", "F_w", "F_dis"];

const MIN_VOLUME: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenState {
    pub a0: f64,
    pub a1: f64,
    pub a3: f64,
    pub a4: f64,
    pub p: f64,
    pub s: f64,
    pub v: f64,
}

impl PenState {
    pub fn from_slice(x: &[f64]) -> Self {
        Self { a0: x[0], a1: x[1], a3: x[2], a4: x[3], p: x[4], s: x[5], v: x[6] }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.a0, self.a1, self.a3, self.a4, self.p, self.s, self.v]
    }

    pub fn biomass(&self) -> f64 {
        self.a0 + self.a1 + self.a3 + self.a4
    }

    /// Product mass in the broth, g.
    pub fn product_mass(&self) -> f64 {
        self.p * self.v
    }
}

/// Rates in g/(L·h), except `r_m` which is the biomass (g/L) subject to
/// maintenance and is multiplied by `m_s`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenRates {
    pub r_b: f64,
    pub r_diff: f64,
    pub r_e: f64,
    pub r_deg: f64,
    pub r_a: f64,
    pub r_p: f64,
    pub r_h: f64,
    pub r_m: f64,
}

/// Flows in L/h. `f_ab` is the combined acid and base addition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenAction {
    pub f_s: f64,
    pub f_oil: f64,
    pub f_paa: f64,
    pub f_ab: f64,
    pub f_w: f64,
    pub f_dis: f64,
}

impl PenAction {
    pub fn from_slice(a: &[f64]) -> Self {
        Self { f_s: a[0], f_oil: a[1], f_paa: a[2], f_ab: a[3], f_w: a[4], f_dis: a[5] }
    }

    /// Total inflow `F_in` (discharge excluded).
    pub fn inflow(&self) -> f64 {
        self.f_s + self.f_oil + self.f_paa + self.f_ab + self.f_w
    }
}

/// Substrate content of the sugar and oil feeds, g/L.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feeds {
    pub c_s: f64,
    pub c_oil: f64,
}

/// Yield and maintenance coefficients of the substrate balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Balance {
    pub y_sx: f64,
    pub y_sp: f64,
    pub m_s: f64,
    /// Use `r_deg·F_in·A1/V` in the non-growing balance.
    pub literal_a1: bool,
}

impl Default for Balance {
    fn default() -> Self {
        Self { y_sx: 1.85, y_sp: 0.9, m_s: 0.029, literal_a1: false }
    }
}

/// Time derivatives of `(A0, A1, A3, A4, P, s, V)`.
pub fn pensim_rhs(
    x: &PenState,
    r: &PenRates,
    a: &PenAction,
    feeds: Feeds,
    f_evp: f64,
    bal: &Balance,
) -> Result<[f64; STATE_DIM], SimError> {
    if !(x.v > MIN_VOLUME) {
        return Err(SimError::DegenerateVolume(x.v));
    }
    let dil = a.inflow() / x.v;
    let a1_loss = if bal.literal_a1 { r.r_deg * dil * x.a1 } else { r.r_deg + dil * x.a1 };
    Ok([
        r.r_b - r.r_diff - dil * x.a0,
        r.r_e - r.r_b + r.r_diff - a1_loss,
        r.r_deg - r.r_a - dil * x.a3,
        r.r_a - dil * x.a4,
        r.r_p - r.r_h - dil * x.p,
        -bal.y_sx * r.r_e - bal.y_sx * r.r_b - bal.m_s * r.r_m - bal.y_sp * r.r_p
            + (a.f_s * feeds.c_s + a.f_oil * feeds.c_oil) / x.v,
        a.inflow() - f_evp - a.f_dis,
    ])
}

/// Product mass gained over the step in kg, minus `lambda·‖a − a_prev‖²`.
pub fn pensim_reward(prev: &PenState, next: &PenState, a: &[f64], a_prev: &[f64], lambda: f64) -> f64 {
    let jump: f64 = a.iter().zip(a_prev).map(|(u, w)| (u - w) * (u - w)).sum();
    (next.product_mass() - prev.product_mass()) * 1e-3 - lambda * jump
}

/// Rate laws as a function of the broth state.
pub trait PenKinetics: Send + Sync {
    fn rates(&self, x: &PenState) -> PenRates;
}

/// Monod-type demonstration kinetics (h⁻¹ and g/L).
///
/// Extension feeds the hyphae from the tips, branching turns hyphae into new
/// tips, and both are substrate limited. Production by the hyphae follows
/// Haldane substrate inhibition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoMonod {
    pub mu_e: f64,
    pub k_b: f64,
    pub k_diff: f64,
    pub k_deg: f64,
    pub k_a: f64,
    pub k_s: f64,
    pub k_p: f64,
    pub k_p_sat: f64,
    pub k_p_inhib: f64,
    pub k_h: f64,
    pub k_m: f64,
}

impl Default for DemoMonod {
    fn default() -> Self {
        Self {
            mu_e: 0.06,
            k_b: 0.02,
            k_diff: 0.01,
            k_deg: 0.003,
            k_a: 0.002,
            k_s: 0.5,
            k_p: 0.005,
            k_p_sat: 0.1,
            k_p_inhib: 2.0,
            k_h: 4e-4,
            k_m: 0.1,
        }
    }
}

impl PenKinetics for DemoMonod {
    fn rates(&self, x: &PenState) -> PenRates {
        let s = x.s.max(0.0);
        let monod = s / (self.k_s + s);
        PenRates {
            r_b: self.k_b * monod * x.a1,
            r_diff: self.k_diff * x.a0,
            r_e: self.mu_e * monod * x.a0,
            r_deg: self.k_deg * x.a1,
            r_a: self.k_a * x.a3,
            r_p: self.k_p * x.a1 * s / (self.k_p_sat + s + s * s / self.k_p_inhib),
            r_h: self.k_h * x.p,
            r_m: (x.a0 + x.a1) * s / (self.k_m + s),
        }
    }
}

/// Kinetics selected by name in the config (`{"model": "demo_monod", ...}`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum KineticsConfig {
    DemoMonod(DemoMonod),
}

impl Default for KineticsConfig {
    fn default() -> Self {
        KineticsConfig::DemoMonod(DemoMonod::default())
    }
}

impl KineticsConfig {
    pub fn build(&self) -> Box<dyn PenKinetics> {
        match *self {
            KineticsConfig::DemoMonod(k) => Box::new(k),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let KineticsConfig::DemoMonod(k) = self;
        let all = [
            k.mu_e, k.k_b, k.k_diff, k.k_deg, k.k_a, k.k_s, k.k_p, k.k_p_sat, k.k_p_inhib, k.k_h, k.k_m,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) && k.k_s > 0.0 && k.k_p_inhib > 0.0 {
            Ok(())
        } else {
            Err(ConfigError::Invalid("kinetic constants must be nonnegative and finite".into()))
        }
    }
}

/// The fermenter under a pluggable kinetics.
pub struct PenSimModel {
    pub kinetics: Box<dyn PenKinetics>,
    pub balance: Balance,
    pub feeds: Feeds,
    /// Evaporation per unit broth volume, 1/h.
    pub evaporation: f64,
}

impl PenSimModel {
    pub fn evaporation_rate(&self, x: &PenState) -> f64 {
        self.evaporation * x.v
    }
}

impl OdeSystem for PenSimModel {
    fn dim(&self) -> usize {
        STATE_DIM
    }
    fn rhs(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        let st = PenState::from_slice(x);
        let rates = self.kinetics.rates(&st);
        let d = pensim_rhs(&st, &rates, &PenAction::from_slice(u), self.feeds, self.evaporation_rate(&st), &self.balance)?;
        dx.copy_from_slice(&d);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenSimConfig {
    pub kinetics: KineticsConfig,
    pub balance: Balance,
    pub feeds: Feeds,
    pub evaporation: f64,
    pub initial_state: [f64; STATE_DIM],
    /// Relative half-width of the init box around `initial_state`.
    pub init_fraction: f64,
    pub nominal_action: [f64; ACTION_DIM],
    pub action_low: [f64; ACTION_DIM],
    pub action_high: [f64; ACTION_DIM],
    pub state_low: [f64; STATE_DIM],
    pub state_high: [f64; STATE_DIM],
    pub smoothness_weight: f64,
    pub step_hours: f64,
    pub substeps: usize,
    pub max_steps: usize,
    pub error_reward: f64,
}

impl Default for PenSimConfig {
    fn default() -> Self {
        Self {
            kinetics: KineticsConfig::default(),
            balance: Balance::default(),
            feeds: Feeds { c_s: 400.0, c_oil: 800.0 },
            evaporation: 1e-4,
            initial_state: [0.5, 1.5, 0.0, 0.0, 0.0, 5.0, 100.0],
            init_fraction: 0.1,
            nominal_action: [0.25, 0.03, 0.02, 0.02, 0.0, 0.25],
            action_low: [0.0; ACTION_DIM],
            action_high: [1.0, 0.2, 0.2, 0.2, 0.5, 0.5],
            state_low: [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 20.0],
            state_high: [200.0, 200.0, 200.0, 200.0, 80.0, 200.0, 300.0],
            smoothness_weight: 0.01,
            step_hours: 1.0,
            substeps: 30,
            max_steps: 1150,
            error_reward: -100.0,
        }
    }
}

impl PenSimConfig {
    pub fn from_json(value: Option<&serde_json::Value>) -> Result<Self, ConfigError> {
        config_from_json(value)
    }

    /// Lower bound on the per-step reward while the state stays in its box.
    ///
    /// Product mass only falls through hydrolysis and through evaporation and
    /// discharge carrying broth away, so the worst step combines the largest
    /// of those at the upper state corner with the largest action jump. The
    /// hydrolysis rate is assumed non-decreasing in the state.
    pub fn reward_floor(&self) -> f64 {
        let hi = PenState::from_slice(&self.state_high);
        let kin = self.kinetics.build();
        let loss_rate = hi.v * kin.rates(&hi).r_h
            + hi.p * (self.evaporation * hi.v + self.action_high[5]);
        let jump: f64 = self.action_low.iter().zip(&self.action_high).map(|(l, h)| (h - l) * (h - l)).sum();
        -(loss_rate * self.step_hours * 1e-3) - self.smoothness_weight * jump
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.kinetics.validate()?;
        let scalars = [
            self.feeds.c_s, self.feeds.c_oil, self.evaporation, self.init_fraction, self.smoothness_weight,
            self.balance.y_sx, self.balance.y_sp, self.balance.m_s,
        ];
        if !scalars.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(ConfigError::Invalid("pensim coefficients must be nonnegative and finite".into()));
        }
        if self.substeps == 0 || !(self.step_hours > 0.0) || self.max_steps == 0 {
            return Err(ConfigError::Invalid("pensim stepping settings must be positive".into()));
        }
        if self.action_low.iter().any(|v| *v < 0.0) {
            return Err(ConfigError::Invalid("pensim flows must be nonnegative".into()));
        }
        if !(self.state_low[6] > MIN_VOLUME) {
            return Err(ConfigError::Invalid("pensim volume lower bound must be positive".into()));
        }
        let floor = self.reward_floor();
        if self.error_reward > floor * self.max_steps as f64 {
            return Err(ConfigError::Invalid(format!(
                "error reward {} exceeds the worst episode return {} (floor {floor} per step)",
                self.error_reward,
                floor * self.max_steps as f64
            )));
        }
        Ok(())
    }
}

pub struct PenSimPlant {
    cfg: PenSimConfig,
    model: PenSimModel,
    action_space: ContinuousSpace,
    state_space: ContinuousSpace,
    observation_space: ContinuousSpace,
    init_low: Vec<f64>,
    init_high: Vec<f64>,
    state: Vec<f64>,
    prev_action: Vec<f64>,
    steps: usize,
}

impl PenSimPlant {
    pub fn new(cfg: PenSimConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let action_space = ContinuousSpace::new(cfg.action_low.to_vec(), cfg.action_high.to_vec())?;
        let state_space = ContinuousSpace::new(cfg.state_low.to_vec(), cfg.state_high.to_vec())?;
        if !state_space.contains(&cfg.initial_state) {
            return Err(ConfigError::Invalid("pensim initial state lies outside the state box".into()));
        }
        let mut obs_low = cfg.state_low.to_vec();
        let mut obs_high = cfg.state_high.to_vec();
        obs_low.extend([cfg.state_low[..4].iter().sum(), 0.0]);
        obs_high.extend([cfg.state_high[..4].iter().sum(), 1.0]);
        let observation_space = ContinuousSpace::new(obs_low, obs_high)?;
        let (mut init_low, mut init_high) = box_around(&cfg.initial_state, cfg.init_fraction);
        for i in 0..STATE_DIM {
            init_low[i] = init_low[i].max(cfg.state_low[i]);
            init_high[i] = init_high[i].min(cfg.state_high[i]);
        }
        let model = PenSimModel {
            kinetics: cfg.kinetics.build(),
            balance: cfg.balance,
            feeds: cfg.feeds,
            evaporation: cfg.evaporation,
        };
        Ok(Self {
            state: cfg.initial_state.to_vec(),
            prev_action: cfg.nominal_action.to_vec(),
            steps: 0,
            cfg,
            model,
            action_space,
            state_space,
            observation_space,
            init_low,
            init_high,
        })
    }

    pub fn config(&self) -> &PenSimConfig {
        &self.cfg
    }

    pub fn model(&self) -> &PenSimModel {
        &self.model
    }

    pub fn init_box(&self) -> (&[f64], &[f64]) {
        (&self.init_low, &self.init_high)
    }

    pub fn pen_state(&self) -> PenState {
        PenState::from_slice(&self.state)
    }

    pub fn set_state(&mut self, state: &[f64]) {
        self.state = state.to_vec();
    }
}

impl Plant for PenSimPlant {
    fn name(&self) -> &'static str {
        "pensim"
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
        self.prev_action = self.cfg.nominal_action.to_vec();
        self.steps = 0;
    }
    fn advance(&mut self, action: &[f64], step: usize) -> Result<Advance, SimError> {
        let prev = self.pen_state();
        let h = self.cfg.step_hours / self.cfg.substeps as f64;
        self.state = integrate_nonnegative(&self.model, 0.0, &self.state, action, self.cfg.step_hours, h, None)?;
        let reward = pensim_reward(&prev, &self.pen_state(), action, &self.prev_action, self.cfg.smoothness_weight);
        self.prev_action = action.to_vec();
        self.steps = step;
        Ok(Advance::reward(reward))
    }
    fn state_admissible(&self) -> bool {
        self.state_space.contains(&self.state)
    }
    fn observe(&self) -> Vec<f64> {
        let mut obs = self.state.clone();
        obs.push(self.pen_state().biomass());
        obs.push((self.steps as f64 / self.cfg.max_steps as f64).min(1.0));
        obs
    }
    fn min_step_reward(&self) -> f64 {
        self.cfg.reward_floor()
    }
    fn nominal_action(&self) -> Vec<f64> {
        self.cfg.nominal_action.to_vec()
    }
    fn state(&self) -> Vec<f64> {
        self.state.clone()
    }
    fn metadata(&self) -> EnvMetadata {
        let mut observation_names: Vec<String> = STATE_NAMES.iter().map(|s| s.to_string()).collect();
        observation_names.extend(["biomass".to_string(), "batch_fraction".to_string()]);
        EnvMetadata {
            name: self.name().into(),
            a_dim: ACTION_DIM,
            o_dim: OBS_DIM,
            max_steps: self.cfg.max_steps,
            error_reward: self.cfg.error_reward,
            step_duration: self.cfg.step_hours,
            time_unit: "h".into(),
            observation_names,
            action_names: ACTION_NAMES.iter().map(|s| s.to_string()).collect(),
            notes: vec![
                "kinetics: demonstration closure, not a validated penicillin model".into(),
                "yield and maintenance coefficients are placeholders".into(),
                "oxygen and nitrogen balances are not modelled".into(),
                format!("per-step reward floor {}", self.cfg.reward_floor()),
            ],
        }
    }
}

pub type PenSimEnv = Episode<PenSimPlant>;

pub fn pensim_env(cfg: PenSimConfig) -> Result<PenSimEnv, ConfigError> {
    Ok(Episode::new(PenSimPlant::new(cfg)?))
}
