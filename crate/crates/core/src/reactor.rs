//! Exothermic A → B continuous stirred tank reactor with a cooling jacket.
//!
//! States are `(c_A [kmol/m³], T [K], h [m])`, inputs `(q_out [m³/min], T_c [K])`,
//! time in minutes.
//!
//! Units: `U` is taken as 5·10⁴ J/(min·m²·K) and `−ΔH` as 5·10⁴ kJ/kmol, so
//! with `c_p` in kJ/(kg·K) the jacket coefficient `2U/(rρc_p)` is
//! 1.91 min⁻¹ and the heat-release factor `−ΔH/(ρc_p)` is 209.2 K·m³/kmol.
//! The `jacket_scale` config field multiplies the jacket coefficient if the
//! literal kJ reading is wanted (`1000.0`).

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    config_from_json, sample_box, Advance, ConfigError, ContinuousSpace, EnvMetadata,
    Episode, Plant,
};
use crate::sim::{integrate, solve_steady_state, OdeSystem, SimError};

pub const C_A: usize = 0;
pub const TEMP: usize = 1;
pub const LEVEL: usize = 2;

/// Physical constants of the reactor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CstrParams {
    pub q_in: f64,
    pub r: f64,
    pub c_af: f64,
    pub t_f: f64,
    pub e_over_r: f64,
    pub k0: f64,
    /// Heat of reaction magnitude, J/mol (= kJ/kmol).
    pub minus_dh: f64,
    /// Heat transfer coefficient, J/(min·m²·K).
    pub u: f64,
    pub c_p: f64,
    pub rho: f64,
    /// Multiplier on `U` when forming the jacket coefficient.
    pub jacket_scale: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            q_in: 0.1,
            r: 0.219,
            c_af: 1.0,
            t_f: 350.0,
            e_over_r: 8750.0,
            k0: 7.2e10,
            minus_dh: 5.0e4,
            u: 5.0e4,
            c_p: 0.239,
            rho: 1000.0,
            jacket_scale: 1.0,
        }
    }
}

impl CstrParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [
            self.q_in, self.r, self.c_af, self.t_f, self.e_over_r, self.k0, self.minus_dh, self.u,
            self.c_p, self.rho, self.jacket_scale,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(ConfigError::Invalid("reactor parameters must be positive and finite".into()))
        }
    }

    /// `2U/(rρc_p)` in 1/min, with `U` converted from J to kJ.
    pub fn jacket_coefficient(&self) -> f64 {
        2.0 * self.u * 1e-3 * self.jacket_scale / (self.r * self.rho * self.c_p)
    }

    /// `−ΔH/(ρc_p)` in K·m³/kmol.
    pub fn heat_release(&self) -> f64 {
        self.minus_dh / (self.rho * self.c_p)
    }

    pub fn area(&self) -> f64 {
        PI * self.r * self.r
    }
}

/// Time derivative `(dc_A/dt, dT/dt, dh/dt)` of the reactor.
pub fn cstr_rhs(state: &[f64], action: &[f64], p: &CstrParams) -> Result<[f64; 3], SimError> {
    let (c_a, t, h) = (state[C_A], state[TEMP], state[LEVEL]);
    let (q_out, t_c) = (action[0], action[1]);
    if !(h > 1e-6) {
        return Err(SimError::DegenerateLevel(h));
    }
    let dilution = p.q_in / (p.area() * h);
    let rate = p.k0 * (-p.e_over_r / t).exp() * c_a;
    Ok([
        dilution * (p.c_af - c_a) - rate,
        dilution * (p.t_f - t) + p.heat_release() * rate + p.jacket_coefficient() * (t_c - t),
        (p.q_in - q_out) / p.area(),
    ])
}

/// Negative sum of squared relative errors in `c_A` and `h`.
pub fn reactor_reward(state: &[f64], setpoint: (f64, f64)) -> f64 {
    let (c_sp, h_sp) = setpoint;
    let ec = (state[C_A] - c_sp) / c_sp;
    let eh = (state[LEVEL] - h_sp) / h_sp;
    -(ec * ec + eh * eh)
}

/// The reactor is fully measured.
pub fn reactor_observe(state: &[f64]) -> Vec<f64> {
    state.to_vec()
}

/// [`cstr_rhs`] as an ODE system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstrModel {
    pub params: CstrParams,
}

impl OdeSystem for CstrModel {
    fn dim(&self) -> usize {
        3
    }
    fn rhs(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        dx.copy_from_slice(&cstr_rhs(x, u, &self.params)?);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReactorConfig {
    pub params: CstrParams,
    /// `(q_out, T_c)` at the nominal operating point.
    pub nominal_action: [f64; 2],
    /// Starting point for the nominal steady-state solve.
    pub steady_guess: [f64; 3],
    /// `(c_A, h)` setpoint; defaults to the nominal steady state.
    pub setpoint: Option<[f64; 2]>,
    pub action_low: [f64; 2],
    pub action_high: [f64; 2],
    pub state_low: [f64; 3],
    pub state_high: [f64; 3],
    /// Half-width of the init box as a fraction of each steady-state
    /// component. The temperature band is narrow because the open-loop
    /// steady state is unstable and hot starts run away faster than the
    /// jacket can cool.
    pub init_fraction: [f64; 3],
    /// Explicit init box, overriding `init_fraction`.
    pub init_low: Option<[f64; 3]>,
    pub init_high: Option<[f64; 3]>,
    pub step_minutes: f64,
    pub substeps: usize,
    pub max_steps: usize,
    pub error_reward: f64,
}

impl Default for ReactorConfig {
    fn default() -> Self {
        Self {
            params: CstrParams::default(),
            nominal_action: [0.1, 300.0],
            steady_guess: [0.878, 324.5, 0.659],
            setpoint: None,
            action_low: [0.0, 290.0],
            action_high: [0.3, 340.0],
            state_low: [0.0, 280.0, 0.05],
            state_high: [2.0, 450.0, 1.0],
            init_fraction: [0.1, 0.015, 0.1],
            init_low: None,
            init_high: None,
            step_minutes: 1.0,
            substeps: 10,
            max_steps: 100,
            error_reward: -1000.0,
        }
    }
}

impl ReactorConfig {
    pub fn from_json(value: Option<&serde_json::Value>) -> Result<Self, ConfigError> {
        config_from_json(value)
    }
}

pub struct ReactorPlant {
    cfg: ReactorConfig,
    model: CstrModel,
    steady_state: Vec<f64>,
    setpoint: (f64, f64),
    init_low: Vec<f64>,
    init_high: Vec<f64>,
    action_space: ContinuousSpace,
    state_space: ContinuousSpace,
    state: Vec<f64>,
}

impl ReactorPlant {
    pub fn new(cfg: ReactorConfig) -> Result<Self, ConfigError> {
        cfg.params.validate()?;
        if cfg.init_fraction.iter().any(|f| !(*f >= 0.0)) {
            return Err(ConfigError::Invalid("init fractions must be nonnegative".into()));
        }
        if cfg.substeps == 0 || !(cfg.step_minutes > 0.0) || cfg.max_steps == 0 {
            return Err(ConfigError::Invalid("reactor stepping settings must be positive".into()));
        }
        let model = CstrModel { params: cfg.params };
        let ss = solve_steady_state(&model, &cfg.nominal_action, &cfg.steady_guess)?;
        let setpoint = match cfg.setpoint {
            Some([c, h]) => (c, h),
            None => (ss.x_star[C_A], ss.x_star[LEVEL]),
        };
        if !(setpoint.0 > 0.0 && setpoint.1 > 0.0) {
            return Err(ConfigError::Invalid("reactor setpoint must be positive".into()));
        }
        let (init_low, init_high) = match (cfg.init_low, cfg.init_high) {
            (Some(l), Some(h)) => (l.to_vec(), h.to_vec()),
            _ => {
                let low = (0..3).map(|i| ss.x_star[i] - cfg.init_fraction[i] * ss.x_star[i].abs()).collect();
                let high = (0..3).map(|i| ss.x_star[i] + cfg.init_fraction[i] * ss.x_star[i].abs()).collect();
                (low, high)
            }
        };
        let action_space = ContinuousSpace::new(cfg.action_low.to_vec(), cfg.action_high.to_vec())?;
        let state_space = ContinuousSpace::new(cfg.state_low.to_vec(), cfg.state_high.to_vec())?;
        Ok(Self {
            state: ss.x_star.clone(),
            steady_state: ss.x_star,
            cfg,
            model,
            setpoint,
            init_low,
            init_high,
            action_space,
            state_space,
        })
    }

    pub fn model(&self) -> &CstrModel {
        &self.model
    }

    pub fn config(&self) -> &ReactorConfig {
        &self.cfg
    }

    pub fn steady_state(&self) -> &[f64] {
        &self.steady_state
    }

    pub fn setpoint(&self) -> (f64, f64) {
        self.setpoint
    }

    pub fn init_box(&self) -> (&[f64], &[f64]) {
        (&self.init_low, &self.init_high)
    }

    pub fn set_state(&mut self, state: &[f64]) {
        self.state = state.to_vec();
    }

    pub fn substep(&self) -> f64 {
        self.cfg.step_minutes / self.cfg.substeps as f64
    }
}

impl Plant for ReactorPlant {
    fn name(&self) -> &'static str {
        "reactor"
    }
    fn action_space(&self) -> &ContinuousSpace {
        &self.action_space
    }
    fn observation_space(&self) -> &ContinuousSpace {
        &self.state_space
    }
    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }
    fn error_reward(&self) -> f64 {
        self.cfg.error_reward
    }
    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        self.state = sample_box(rng, &self.init_low, &self.init_high);
    }
    fn advance(&mut self, action: &[f64], _step: usize) -> Result<Advance, SimError> {
        self.state = integrate(&self.model, 0.0, &self.state, action, self.cfg.step_minutes, self.substep())?;
        Ok(Advance::reward(reactor_reward(&self.state, self.setpoint)))
    }
    fn state_admissible(&self) -> bool {
        self.state_space.contains(&self.state)
    }
    fn observe(&self) -> Vec<f64> {
        reactor_observe(&self.state)
    }
    fn min_step_reward(&self) -> f64 {
        // The reward is concave, so its minimum over the box sits at a corner.
        let (lo, hi) = (self.state_space.low(), self.state_space.high());
        let mut worst = f64::INFINITY;
        for c in [lo[C_A], hi[C_A]] {
            for h in [lo[LEVEL], hi[LEVEL]] {
                worst = worst.min(reactor_reward(&[c, 0.0, h], self.setpoint));
            }
        }
        worst
    }
    fn nominal_action(&self) -> Vec<f64> {
        self.cfg.nominal_action.to_vec()
    }
    fn state(&self) -> Vec<f64> {
        self.state.clone()
    }
    fn metadata(&self) -> EnvMetadata {
        EnvMetadata {
            name: self.name().into(),
            a_dim: 2,
            o_dim: 3,
            max_steps: self.cfg.max_steps,
            error_reward: self.cfg.error_reward,
            step_duration: self.cfg.step_minutes,
            time_unit: "min".into(),
            observation_names: vec!["c_A".into(), "T".into(), "h".into()],
            action_names: vec!["q_out".into(), "T_c".into()],
            notes: vec![format!("setpoint c_A = {}, h = {}", self.setpoint.0, self.setpoint.1)],
        }
    }
}

pub type ReactorEnv = Episode<ReactorPlant>;

pub fn reactor_env(cfg: ReactorConfig) -> Result<ReactorEnv, ConfigError> {
    Ok(Episode::new(ReactorPlant::new(cfg)?))
}
