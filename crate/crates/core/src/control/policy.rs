//! Closed-loop controllers for the bundled environments.
//!
//! Model-based controllers read the plant state from the leading entries of
//! the observation: the full state for the reactor, the filtered deviation
//! state for atropine and the upstream states for the antibody plant. For
//! the antibody plant only the seven upstream inputs are optimised; the two
//! chromatography velocities stay at their nominal values.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pid::{pid_step, PidGains, PidState};
use super::shooting::{shift_plan, solve_empc, solve_mpc, EmpcSpec, MpcSolution, MpcSpec, Predictor, Sampled, SpgOptions};
use super::steady_opt::{solve_steady_state_optimum, SteadyOptOptions, SteadyOptimum};
use super::ControlError;
use crate::atropine::{AtropineConfig, LinearPlantModel};
use crate::env::{make_env, ContinuousSpace, EnvKind};
use crate::mab::upstream::{self, UpstreamModel, UPSTREAM_DIM, UPSTREAM_INPUTS};
use crate::mab::{economic_objective, MabConfig, MabPlant};
use crate::reactor::{CstrModel, ReactorConfig, ReactorPlant};
use crate::sim::{OdeSystem, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Pid,
    Mpc,
    Empc,
    Bo,
    Zero,
    Random,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 6] = [
        ControllerKind::Pid,
        ControllerKind::Mpc,
        ControllerKind::Empc,
        ControllerKind::Bo,
        ControllerKind::Zero,
        ControllerKind::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Pid => "pid",
            ControllerKind::Mpc => "mpc",
            ControllerKind::Empc => "empc",
            ControllerKind::Bo => "bo",
            ControllerKind::Zero => "zero",
            ControllerKind::Random => "random",
        }
    }

    /// Whether this controller is offered for `env`.
    pub fn supports(self, env: EnvKind) -> bool {
        match self {
            ControllerKind::Zero | ControllerKind::Random => true,
            ControllerKind::Pid => env == EnvKind::Reactor,
            ControllerKind::Mpc => matches!(env, EnvKind::Reactor | EnvKind::Atropine | EnvKind::Mab),
            ControllerKind::Empc => env == EnvKind::Mab,
            ControllerKind::Bo => env == EnvKind::Pensim,
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = ControlError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ControlError::InvalidSpec(format!("unknown controller `{s}`")))
    }
}

/// A feedback policy mapping observations to actions.
pub trait Controller: Send {
    fn name(&self) -> &str;
    /// Clears warm starts, integrators and random streams for a new episode.
    fn reset(&mut self, seed: u64);
    fn act(&mut self, observation: &[f64]) -> Vec<f64>;
    /// Diagnostics of the most recent optimisation, for optimising policies.
    fn last_solution(&self) -> Option<&MpcSolution> {
        None
    }
}

/// Optional overrides of the per-environment MPC defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcTuning {
    pub horizon: Option<usize>,
    pub block: Option<usize>,
    /// RK4 steps per prediction sample.
    pub substeps: Option<usize>,
    pub q: Option<Vec<f64>>,
    pub r: Option<Vec<f64>>,
    pub state_penalty: Option<f64>,
    pub solver: Option<SpgOptions>,
}

/// Gains of the two reactor loops: level by outflow, concentration by
/// coolant temperature. The bias of each loop is replaced by the nominal
/// input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReactorPidTuning {
    pub level: PidGains,
    pub concentration: PidGains,
}

impl Default for ReactorPidTuning {
    fn default() -> Self {
        Self {
            level: PidGains { k_p: -0.1, k_i: -0.005, k_d: 0.0, u_min: 0.0, u_max: 0.3, bias: 0.0, anti_windup: true },
            concentration: PidGains {
                k_p: -30.0,
                k_i: -3.0,
                k_d: 0.0,
                u_min: 290.0,
                u_max: 340.0,
                bias: 0.0,
                anti_windup: true,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub mpc: MpcTuning,
    pub empc: MpcTuning,
    pub pid: ReactorPidTuning,
    pub steady: SteadyOptOptions,
    /// E-factor the atropine MPC steers to.
    pub atropine_e_target: f64,
    /// Weight of the normalised input-move regulariser in the atropine
    /// steady-state problem.
    pub atropine_move_weight: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            mpc: MpcTuning::default(),
            empc: MpcTuning::default(),
            pid: ReactorPidTuning::default(),
            steady: SteadyOptOptions::default(),
            atropine_e_target: 12.0,
            atropine_move_weight: 1e-3,
        }
    }
}

impl ControllerConfig {
    pub fn from_json(value: Option<&serde_json::Value>) -> Result<Self, ControlError> {
        Ok(match value {
            None => Self::default(),
            Some(v) => serde_json::from_value(v.clone())?,
        })
    }
}

/// Holds the nominal action ("zero" deviation).
pub struct NominalController {
    action: Vec<f64>,
}

impl Controller for NominalController {
    fn name(&self) -> &str {
        "zero"
    }
    fn reset(&mut self, _seed: u64) {}
    fn act(&mut self, _observation: &[f64]) -> Vec<f64> {
        self.action.clone()
    }
}

/// Uniform random actions from a per-episode seeded stream.
pub struct RandomController {
    space: ContinuousSpace,
    rng: ChaCha8Rng,
}

impl Controller for RandomController {
    fn name(&self) -> &str {
        "random"
    }
    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_AC71_0000_0000);
    }
    fn act(&mut self, _observation: &[f64]) -> Vec<f64> {
        let (lo, hi) = (self.space.low(), self.space.high());
        (0..lo.len()).map(|i| lo[i] + (hi[i] - lo[i]) * self.rng.random::<f64>()).collect()
    }
}

/// Two decoupled PID loops on the reactor.
pub struct ReactorPid {
    tuning: ReactorPidTuning,
    setpoint: (f64, f64),
    dt: f64,
    level: PidState,
    conc: PidState,
}

impl Controller for ReactorPid {
    fn name(&self) -> &str {
        "pid"
    }
    fn reset(&mut self, _seed: u64) {
        self.level = PidState::default();
        self.conc = PidState::default();
    }
    fn act(&mut self, obs: &[f64]) -> Vec<f64> {
        use crate::reactor::{C_A, LEVEL};
        let (q, s1) = pid_step(&self.tuning.level, self.setpoint.1, obs[LEVEL], self.level, self.dt);
        let (tc, s2) = pid_step(&self.tuning.concentration, self.setpoint.0, obs[C_A], self.conc, self.dt);
        self.level = s1;
        self.conc = s2;
        vec![q, tc]
    }
}

enum Mode {
    Tracking(MpcSpec),
    Economic(EmpcSpec, Box<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>),
}

/// Receding-horizon controller around [`solve_mpc`] or [`solve_empc`].
pub struct MpcController {
    name: &'static str,
    predictor: Box<dyn Predictor>,
    mode: Mode,
    /// Action components appended after the optimised inputs.
    tail: Vec<f64>,
    warm: Option<Vec<Vec<f64>>>,
    last: Option<MpcSolution>,
    /// Setpoint used by the tracking mode.
    pub target: Option<SteadyOptimum>,
}

impl MpcController {
    fn fallback(&self) -> Vec<f64> {
        match &self.mode {
            Mode::Tracking(s) => s.u_s.clone(),
            Mode::Economic(s, _) => s.u_s.clone(),
        }
    }
}

impl Controller for MpcController {
    fn name(&self) -> &str {
        self.name
    }
    fn reset(&mut self, _seed: u64) {
        self.warm = None;
        self.last = None;
    }
    fn act(&mut self, obs: &[f64]) -> Vec<f64> {
        let x0 = &obs[..self.predictor.state_dim()];
        let warm = self.warm.as_deref();
        let solved = match &self.mode {
            Mode::Tracking(spec) => solve_mpc(spec, self.predictor.as_ref(), x0, warm),
            Mode::Economic(spec, obj) => solve_empc(spec, self.predictor.as_ref(), obj.as_ref(), x0, warm),
        };
        let mut action = match solved {
            Ok(sol) => {
                let u0 = sol.u0.clone();
                self.warm = Some(shift_plan(&sol.plan));
                self.last = Some(sol);
                u0
            }
            Err(_) => self.fallback(),
        };
        action.extend_from_slice(&self.tail);
        action
    }
    fn last_solution(&self) -> Option<&MpcSolution> {
        self.last.as_ref()
    }
}

/// The identified atropine model on absolute flows.
#[derive(Debug, Clone)]
pub struct AtropinePredictor {
    pub model: LinearPlantModel,
    pub q_ss: [f64; 4],
}

impl Predictor for AtropinePredictor {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        4
    }
    fn predict(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SimError> {
        let du = [u[0] - self.q_ss[0], u[1] - self.q_ss[1], u[2] - self.q_ss[2], u[3] - self.q_ss[3]];
        Ok(self.model.lin_step(&[x[0], x[1]], &du).to_vec())
    }
}

/// Fixed points of a sampled map as roots of `predict(x, u) − x`.
pub struct FixedPoint<'a>(pub &'a dyn Predictor);

impl OdeSystem for FixedPoint<'_> {
    fn dim(&self) -> usize {
        self.0.state_dim()
    }
    fn rhs(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        let next = self.0.predict(x, u)?;
        for i in 0..dx.len() {
            dx[i] = next[i] - x[i];
        }
        Ok(())
    }
}

/// Upstream model with flow-balanced inputs `(F_in, F_r, T_c, GLC_in, AMM_in)`:
/// `F_1 = F_in + F_r` and `F_2 = F_in`, so both volumes can be steady.
///
/// Balanced flows leave the volumes neutrally stable, which makes every
/// volume a steady state. The volume equations are therefore replaced by a
/// pull towards the given reference volumes, singling out one point of that
/// family.
pub struct BalancedUpstream {
    pub model: UpstreamModel,
    pub volumes: (f64, f64),
}

impl BalancedUpstream {
    pub fn expand(r: &[f64]) -> Vec<f64> {
        vec![r[0], r[1], r[0] + r[1], r[0], r[2], r[3], r[4]]
    }
}

impl OdeSystem for BalancedUpstream {
    fn dim(&self) -> usize {
        UPSTREAM_DIM
    }
    fn rhs(&self, t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        self.model.rhs(t, x, &Self::expand(u), dx)?;
        dx[upstream::V1] = self.volumes.0 - x[upstream::V1];
        dx[upstream::V2] = self.volumes.1 - x[upstream::V2];
        Ok(())
    }
}

/// An ODE in rescaled coordinates `x = scale ⊙ y`, so that absolute
/// residual tolerances mean the same thing for cell counts near 1e9 and
/// concentrations near 1.
pub struct Rescaled<S> {
    pub sys: S,
    pub scale: Vec<f64>,
}

impl<S> Rescaled<S> {
    /// Scales taken from the magnitudes of `x`, floored at 1.
    pub fn around(sys: S, x: &[f64]) -> Self {
        Self { sys, scale: x.iter().map(|v| v.abs().max(1.0)).collect() }
    }

    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.scale).map(|(v, s)| v / s).collect()
    }

    pub fn to_physical(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.scale).map(|(v, s)| v * s).collect()
    }
}

impl<S: OdeSystem> OdeSystem for Rescaled<S> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }
    fn rhs(&self, t: f64, y: &[f64], u: &[f64], dy: &mut [f64]) -> Result<(), SimError> {
        self.sys.rhs(t, &self.to_physical(y), u, dy)?;
        for (d, s) in dy.iter_mut().zip(&self.scale) {
            *d /= s;
        }
        Ok(())
    }
}

fn pick<T: Clone>(over: &Option<T>, default: T) -> T {
    over.clone().unwrap_or(default)
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<(), ControlError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(ControlError::InvalidSpec(format!("{name} needs {n} entries, got {}", v.len())))
    }
}

fn input_weights(low: &[f64], high: &[f64], scale: f64) -> Vec<f64> {
    low.iter().zip(high).map(|(l, h)| if h > l { scale / (h - l).powi(2) } else { 0.0 }).collect()
}

fn reactor_mpc(env_cfg: Option<&serde_json::Value>, tuning: &MpcTuning) -> Result<MpcController, ControlError> {
    let cfg = ReactorConfig::from_json(env_cfg)?;
    let plant = ReactorPlant::new(cfg.clone())?;
    let (c_sp, h_sp) = plant.setpoint();
    let q = pick(&tuning.q, vec![1.0 / (c_sp * c_sp), 0.0, 1.0 / (h_sp * h_sp)]);
    let r = pick(&tuning.r, input_weights(&cfg.action_low, &cfg.action_high, 1e-3));
    check_len("reactor Q", &q, 3)?;
    check_len("reactor R", &r, 2)?;
    let mut x_s = plant.steady_state().to_vec();
    x_s[crate::reactor::C_A] = c_sp;
    x_s[crate::reactor::LEVEL] = h_sp;
    let spec = MpcSpec {
        horizon: pick(&tuning.horizon, 20),
        q,
        r,
        x_s,
        u_s: cfg.nominal_action.to_vec(),
        u_low: cfg.action_low.to_vec(),
        u_high: cfg.action_high.to_vec(),
        state_box: Some(ContinuousSpace::new(cfg.state_low.to_vec(), cfg.state_high.to_vec())?),
        block: pick(&tuning.block, 2),
        state_penalty: pick(&tuning.state_penalty, 1e4),
        solver: pick(&tuning.solver, SpgOptions::default()),
    };
    let predictor = Sampled {
        sys: CstrModel { params: cfg.params },
        input_dim: 2,
        dt: cfg.step_minutes,
        substeps: pick(&tuning.substeps, 5),
        nonnegative: false,
    };
    spec.validate(3, 2)?;
    Ok(MpcController {
        name: "mpc",
        predictor: Box::new(predictor),
        mode: Mode::Tracking(spec),
        tail: vec![],
        warm: None,
        last: None,
        target: None,
    })
}

/// Steady operating point of the atropine model closest (in normalised
/// input moves) to the target E-factor.
pub fn atropine_target(cfg: &AtropineConfig, ctrl: &ControllerConfig) -> Result<SteadyOptimum, ControlError> {
    let pred = AtropinePredictor { model: cfg.model, q_ss: cfg.q_ss };
    let (c, y_ss, target, w) = (cfg.model.c, cfg.y_ss, ctrl.atropine_e_target, ctrl.atropine_move_weight);
    let (q_ss, lo, hi) = (cfg.q_ss, cfg.q_low, cfg.q_high);
    let objective = move |x: &[f64], u: &[f64]| {
        let e = y_ss + c[0] * x[0] + c[1] * x[1];
        let moves: f64 = (0..4).map(|i| ((u[i] - q_ss[i]) / (hi[i] - lo[i])).powi(2)).sum();
        -(e - target).powi(2) - w * moves
    };
    solve_steady_state_optimum(&FixedPoint(&pred), &objective, &cfg.q_low, &cfg.q_high, &[0.0, 0.0], &ctrl.steady)
}

fn atropine_mpc(env_cfg: Option<&serde_json::Value>, ctrl: &ControllerConfig) -> Result<MpcController, ControlError> {
    let cfg = AtropineConfig::from_json(env_cfg)?;
    let tuning = &ctrl.mpc;
    let target = atropine_target(&cfg, ctrl)?;
    let c = cfg.model.c;
    let q = pick(&tuning.q, vec![c[0] * c[0], c[1] * c[1]]);
    let r = pick(&tuning.r, input_weights(&cfg.q_low, &cfg.q_high, 1e-2));
    check_len("atropine Q", &q, 2)?;
    check_len("atropine R", &r, 4)?;
    let spec = MpcSpec {
        horizon: pick(&tuning.horizon, 20),
        q,
        r,
        x_s: target.x_s.clone(),
        u_s: target.u_s.clone(),
        u_low: cfg.q_low.to_vec(),
        u_high: cfg.q_high.to_vec(),
        state_box: Some(ContinuousSpace::new(cfg.state_low.to_vec(), cfg.state_high.to_vec())?),
        block: pick(&tuning.block, 1),
        state_penalty: pick(&tuning.state_penalty, 1e4),
        solver: pick(&tuning.solver, SpgOptions::default()),
    };
    spec.validate(2, 4)?;
    Ok(MpcController {
        name: "mpc",
        predictor: Box::new(AtropinePredictor { model: cfg.model, q_ss: cfg.q_ss }),
        mode: Mode::Tracking(spec),
        tail: vec![],
        warm: None,
        last: None,
        target: Some(target),
    })
}

/// Highest coolant temperature the antibody controllers request. Growth
/// peaks at the top of the validated temperature range, so without a margin
/// the optimum sits where any perturbation leaves the model's domain.
pub const COOLANT_CEILING: f64 = upstream::T_MAX - 0.1;

/// Best flow-balanced steady state of the upstream plant for the harvest
/// objective. Falls back to the nominal operating point if no start
/// converges.
pub fn mab_target(cfg: &MabConfig, ctrl: &ControllerConfig) -> Result<SteadyOptimum, ControlError> {
    let plant = MabPlant::new(cfg.clone())?;
    let nominal = plant.nominal_state().to_vec();
    let (lo, hi) = (&cfg.action_low, &cfg.action_high);
    let reduce = |v: &[f64]| vec![v[upstream::F_IN], v[upstream::F_R], v[upstream::T_C], v[upstream::GLC_IN], v[upstream::AMM_IN]];
    let (mut r_lo, mut r_hi) = (reduce(lo), reduce(hi));
    // Keep the derived F_1 and F_2 inside their own bounds.
    r_hi[0] = r_hi[0].min(hi[upstream::F_2]);
    r_lo[0] = r_lo[0].max(lo[upstream::F_2]);
    r_hi[1] = r_hi[1].min(hi[upstream::F_1] - r_hi[0]);
    r_hi[2] = r_hi[2].min(COOLANT_CEILING);
    let balanced = BalancedUpstream {
        model: UpstreamModel { params: cfg.upstream },
        volumes: (nominal[upstream::V1], nominal[upstream::V2]),
    };
    let sys = Rescaled::around(balanced, &nominal);
    let mut steady = ctrl.steady.clone();
    let state_box = match steady.state_box.take() {
        Some(b) => b,
        None => ContinuousSpace::new(cfg.state_low.to_vec(), cfg.state_high.to_vec())?,
    };
    steady.state_box = Some(ContinuousSpace::new(sys.to_scaled(state_box.low()), sys.to_scaled(state_box.high()))?);
    let objective = |y: &[f64], r: &[f64]| economic_objective(&sys.to_physical(y), &BalancedUpstream::expand(r));
    match solve_steady_state_optimum(&sys, &objective, &r_lo, &r_hi, &sys.to_scaled(&nominal), &steady) {
        Ok(opt) => Ok(SteadyOptimum {
            x_s: sys.to_physical(&opt.x_s),
            u_s: BalancedUpstream::expand(&opt.u_s),
            ..opt
        }),
        Err(ControlError::NoFeasibleSteadyState) => {
            let u = cfg.nominal_action[..UPSTREAM_INPUTS].to_vec();
            let mut g = vec![0.0; UPSTREAM_DIM];
            sys.sys.model.rhs(0.0, &nominal, &u, &mut g)?;
            let residual = g.iter().zip(&sys.scale).fold(0.0_f64, |m, (v, s)| m.max((v / s).abs()));
            Ok(SteadyOptimum { value: economic_objective(&nominal, &u), x_s: nominal, u_s: u, residual })
        }
        Err(e) => Err(e),
    }
}

fn mab_controller(
    env_cfg: Option<&serde_json::Value>,
    ctrl: &ControllerConfig,
    economic: bool,
) -> Result<MpcController, ControlError> {
    let cfg = MabConfig::from_json(env_cfg)?;
    let tuning = if economic { &ctrl.empc } else { &ctrl.mpc };
    let target = mab_target(&cfg, ctrl)?;
    let u_low = cfg.action_low[..UPSTREAM_INPUTS].to_vec();
    let mut u_high = cfg.action_high[..UPSTREAM_INPUTS].to_vec();
    u_high[upstream::T_C] = u_high[upstream::T_C].min(COOLANT_CEILING);
    let state_box = Some(ContinuousSpace::new(cfg.state_low.to_vec(), cfg.state_high.to_vec())?);
    let predictor = Sampled {
        sys: UpstreamModel { params: cfg.upstream },
        input_dim: UPSTREAM_INPUTS,
        dt: cfg.step_minutes,
        substeps: pick(&tuning.substeps, cfg.substeps),
        nonnegative: true,
    };
    let horizon = pick(&tuning.horizon, 100);
    let block = pick(&tuning.block, 20);
    let penalty = pick(&tuning.state_penalty, 1e4);
    let solver = pick(&tuning.solver, SpgOptions::default());
    let mode = if economic {
        let spec = EmpcSpec { horizon, u_low, u_high, u_s: target.u_s.clone(), state_box, block, state_penalty: penalty, solver };
        spec.validate(UPSTREAM_DIM, UPSTREAM_INPUTS)?;
        Mode::Economic(spec, Box::new(economic_objective))
    } else {
        let q = pick(&tuning.q, vec![1.0; UPSTREAM_DIM]);
        let r = pick(&tuning.r, vec![1.0; UPSTREAM_INPUTS]);
        let spec = MpcSpec {
            horizon,
            q,
            r,
            x_s: target.x_s.clone(),
            u_s: target.u_s.clone(),
            u_low,
            u_high,
            state_box,
            block,
            state_penalty: penalty,
            solver,
        };
        spec.validate(UPSTREAM_DIM, UPSTREAM_INPUTS)?;
        Mode::Tracking(spec)
    };
    Ok(MpcController {
        name: if economic { "empc" } else { "mpc" },
        predictor: Box::new(predictor),
        mode,
        tail: cfg.nominal_action[UPSTREAM_INPUTS..].to_vec(),
        warm: None,
        last: None,
        target: Some(target),
    })
}

/// Builds the controller `kind` for environment `env`, both configured from
/// optional JSON overrides.
pub fn build_controller(
    kind: ControllerKind,
    env: EnvKind,
    env_cfg: Option<&serde_json::Value>,
    ctrl: &ControllerConfig,
) -> Result<Box<dyn Controller>, ControlError> {
    let unsupported = || ControlError::Unsupported { controller: kind.to_string(), env: env.to_string() };
    if !kind.supports(env) {
        return Err(unsupported());
    }
    Ok(match (kind, env) {
        (ControllerKind::Zero, _) => {
            let e = make_env(env, env_cfg)?;
            Box::new(NominalController { action: e.nominal_action() })
        }
        (ControllerKind::Random, _) => {
            let e = make_env(env, env_cfg)?;
            Box::new(RandomController { space: e.action_space(), rng: ChaCha8Rng::seed_from_u64(0) })
        }
        (ControllerKind::Pid, EnvKind::Reactor) => {
            let cfg = ReactorConfig::from_json(env_cfg)?;
            let plant = ReactorPlant::new(cfg.clone())?;
            let mut tuning = ctrl.pid;
            tuning.level.bias = cfg.nominal_action[0];
            tuning.concentration.bias = cfg.nominal_action[1];
            if !(tuning.level.valid() && tuning.concentration.valid()) {
                return Err(ControlError::InvalidSpec("PID limits must satisfy u_min < u_max".into()));
            }
            Box::new(ReactorPid {
                tuning,
                setpoint: plant.setpoint(),
                dt: cfg.step_minutes,
                level: PidState::default(),
                conc: PidState::default(),
            })
        }
        (ControllerKind::Mpc, EnvKind::Reactor) => Box::new(reactor_mpc(env_cfg, &ctrl.mpc)?),
        (ControllerKind::Mpc, EnvKind::Atropine) => Box::new(atropine_mpc(env_cfg, ctrl)?),
        (ControllerKind::Mpc, EnvKind::Mab) => Box::new(mab_controller(env_cfg, ctrl, false)?),
        (ControllerKind::Empc, EnvKind::Mab) => Box::new(mab_controller(env_cfg, ctrl, true)?),
        _ => return Err(unsupported()),
    })
}

/// The reactor MPC with the given overrides, as a concrete type.
pub fn reactor_mpc_controller(
    env_cfg: Option<&serde_json::Value>,
    tuning: &MpcTuning,
) -> Result<MpcController, ControlError> {
    reactor_mpc(env_cfg, tuning)
}
