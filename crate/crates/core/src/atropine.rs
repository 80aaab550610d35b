//! Continuous atropine production, represented by its identified discrete-time
//! linear model around the nominal operating point.
//!
//! The plant state `x` is a 2-vector deviation state. Actions are the absolute
//! flow rates of the four reagent streams (mL/min); internally they become
//! deviations from the nominal flows. The output is the E-factor deviation
//! `y = C x`, so the absolute E-factor is `13.057 + C x`.
//!
//! Observations are the Kalman estimate `x̂`, the measured E-factor, the
//! E-factor implied by `x̂`, and the previous flows (8 values).
//!
//! The mixer and tubular-reactor transport equations of the full process are
//! provided as standalone building blocks ([`mixer_balance`],
//! [`tubular_mol_rhs`]).

use nalgebra::{Matrix2, Matrix2x4, RowVector2, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    config_from_json, sample_box, Advance, ConfigError, ContinuousSpace, EnvMetadata, Episode,
    Plant,
};
use crate::sim::SimError;

/// `x' = A x + B u`, `y = C x`, with steady-state Kalman gain `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearPlantModel {
    pub a: [[f64; 2]; 2],
    pub b: [[f64; 4]; 2],
    pub c: [f64; 2],
    pub k: [f64; 2],
}

impl Default for LinearPlantModel {
    fn default() -> Self {
        Self {
            a: [[0.8543, -0.1164], [0.0195, 0.8576]],
            b: [[-0.0382, -0.0547, 0.0103, 0.1290], [-0.0051, 0.0072, 0.0020, 0.0078]],
            c: [-148.6124, -46.8132],
            k: [-0.0093, 0.0115],
        }
    }
}

impl LinearPlantModel {
    pub fn a_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.a[0][0], self.a[0][1], self.a[1][0], self.a[1][1])
    }

    pub fn b_matrix(&self) -> Matrix2x4<f64> {
        Matrix2x4::from_row_slice(&[self.b[0], self.b[1]].concat())
    }

    pub fn c_row(&self) -> RowVector2<f64> {
        RowVector2::new(self.c[0], self.c[1])
    }

    pub fn k_vector(&self) -> Vector2<f64> {
        Vector2::new(self.k[0], self.k[1])
    }

    /// `A x + B u`.
    pub fn lin_step(&self, x: &[f64; 2], u: &[f64; 4]) -> [f64; 2] {
        let next = self.a_matrix() * Vector2::from(*x) + self.b_matrix() * Vector4::from(*u);
        [next[0], next[1]]
    }

    /// E-factor deviation `C x`.
    pub fn lin_output(&self, x: &[f64; 2]) -> f64 {
        self.c[0] * x[0] + self.c[1] * x[1]
    }

    /// Combined predict-correct update `A x̂ + B u + K (y − C x̂)`.
    pub fn kalman_update(&self, x_hat: &[f64; 2], u: &[f64; 4], y_meas: f64) -> [f64; 2] {
        let innovation = y_meas - self.lin_output(x_hat);
        let pred = self.lin_step(x_hat, u);
        [pred[0] + self.k[0] * innovation, pred[1] + self.k[1] * innovation]
    }

    pub fn spectral_radius(m: &Matrix2<f64>) -> f64 {
        m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `A − K C`, the estimation-error transition matrix.
    pub fn estimator_matrix(&self) -> Matrix2<f64> {
        self.a_matrix() - self.k_vector() * self.c_row()
    }
}

/// Negative absolute E-factor.
pub fn atropine_reward(e_abs: f64) -> f64 {
    -e_abs
}

/// Per-species mass flow rates of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixerStream {
    pub flows: Vec<f64>,
}

/// Instantaneous mixer: the outlet carries the per-species sum of the inlets.
pub fn mixer_balance(inlets: &[MixerStream]) -> Result<MixerStream, SimError> {
    let first = inlets
        .first()
        .ok_or_else(|| SimError::InvalidArgument("mixer needs at least one inlet".into()))?;
    let n = first.flows.len();
    let mut out = vec![0.0; n];
    for s in inlets {
        if s.flows.len() != n {
            return Err(SimError::InvalidArgument("inlets carry different species sets".into()));
        }
        for (o, f) in out.iter_mut().zip(&s.flows) {
            *o += f;
        }
    }
    Ok(MixerStream { flows: out })
}

/// Reaction rates at one axial node of a tubular reactor.
pub trait ReactionRate {
    /// Writes the rate of each species at `node` given its concentrations.
    fn rates(&self, node: usize, c: &[f64], out: &mut [f64]);
}

/// No reaction: pure plug-flow transport.
#[derive(Debug, Clone, Copy, Default)]
pub struct Inert;

impl ReactionRate for Inert {
    fn rates(&self, _node: usize, _c: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Method-of-lines plug-flow reactor with backward differences in volume.
///
/// `c` is node-major: `c[j * n_species + i]` is species `i` at node `j`;
/// node `-1` is the `inlet`. Returns the derivative in the same layout.
pub fn tubular_mol_rhs<R: ReactionRate + ?Sized>(
    c: &[f64],
    inlet: &[f64],
    q_tot: f64,
    dv: f64,
    rate: &R,
) -> Result<Vec<f64>, SimError> {
    let ns = inlet.len();
    if !(dv > 0.0) {
        return Err(SimError::InvalidArgument(format!("segment volume {dv} must be positive")));
    }
    if ns == 0 || c.len() % ns != 0 {
        return Err(SimError::InvalidArgument("field length is not a multiple of species".into()));
    }
    let mut out = vec![0.0; c.len()];
    let mut r = vec![0.0; ns];
    for (j, (node, d)) in c.chunks(ns).zip(out.chunks_mut(ns)).enumerate() {
        let upstream = if j == 0 { inlet } else { &c[(j - 1) * ns..j * ns] };
        rate.rates(j, node, &mut r);
        for i in 0..ns {
            d[i] = -q_tot * (node[i] - upstream[i]) / dv + r[i];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtropineConfig {
    pub model: LinearPlantModel,
    /// Nominal flows of streams S1-S4, mL/min.
    pub q_ss: [f64; 4],
    /// Nominal E-factor.
    pub y_ss: f64,
    pub q_low: [f64; 4],
    pub q_high: [f64; 4],
    /// Init box of the deviation state.
    pub init_low: [f64; 2],
    pub init_high: [f64; 2],
    /// Admissible box of the deviation state.
    pub state_low: [f64; 2],
    pub state_high: [f64; 2],
    /// Half-width of a uniform per-step disturbance on `x` (0 disables it).
    pub disturbance: f64,
    pub max_steps: usize,
    pub error_reward: f64,
}

impl Default for AtropineConfig {
    fn default() -> Self {
        Self {
            model: LinearPlantModel::default(),
            q_ss: [0.4078, 0.1089, 0.3888, 0.2126],
            y_ss: 13.057,
            q_low: [0.0; 4],
            q_high: [5.0; 4],
            init_low: [-0.05; 2],
            init_high: [0.05; 2],
            state_low: [-5.0; 2],
            state_high: [5.0; 2],
            disturbance: 0.0,
            max_steps: 60,
            error_reward: -100_000.0,
        }
    }
}

impl AtropineConfig {
    pub fn from_json(value: Option<&serde_json::Value>) -> Result<Self, ConfigError> {
        config_from_json(value)
    }
}

pub const OBS_DIM: usize = 8;

pub struct AtropinePlant {
    cfg: AtropineConfig,
    action_space: ContinuousSpace,
    observation_space: ContinuousSpace,
    state_space: ContinuousSpace,
    x: [f64; 2],
    x_hat: [f64; 2],
    last_q: [f64; 4],
    noise: ChaCha8Rng,
}

impl AtropinePlant {
    pub fn new(cfg: AtropineConfig) -> Result<Self, ConfigError> {
        let action_space = ContinuousSpace::new(cfg.q_low.to_vec(), cfg.q_high.to_vec())?;
        if !action_space.contains(&cfg.q_ss) {
            return Err(ConfigError::Invalid("nominal flows lie outside the flow bounds".into()));
        }
        let state_space = ContinuousSpace::new(cfg.state_low.to_vec(), cfg.state_high.to_vec())?;
        ContinuousSpace::new(cfg.init_low.to_vec(), cfg.init_high.to_vec())?;
        if !(cfg.disturbance >= 0.0) || cfg.max_steps == 0 {
            return Err(ConfigError::Invalid("disturbance and max_steps must be nonnegative/positive".into()));
        }
        let (e_lo, e_hi) = e_factor_range(&cfg);
        let mut low = vec![f64::NEG_INFINITY, f64::NEG_INFINITY, e_lo, f64::NEG_INFINITY];
        let mut high = vec![f64::INFINITY, f64::INFINITY, e_hi, f64::INFINITY];
        low.extend(cfg.q_low);
        high.extend(cfg.q_high);
        let observation_space = ContinuousSpace::new(low, high)?;
        Ok(Self {
            x: [0.0; 2],
            x_hat: [0.0; 2],
            last_q: cfg.q_ss,
            noise: ChaCha8Rng::seed_from_u64(0),
            cfg,
            action_space,
            observation_space,
            state_space,
        })
    }

    pub fn config(&self) -> &AtropineConfig {
        &self.cfg
    }

    pub fn model(&self) -> &LinearPlantModel {
        &self.cfg.model
    }

    pub fn set_state(&mut self, x: [f64; 2]) {
        self.x = x;
    }

    pub fn e_factor(&self) -> f64 {
        self.cfg.y_ss + self.cfg.model.lin_output(&self.x)
    }
}

/// E-factor extremes over the state box (the output is linear in `x`).
fn e_factor_range(cfg: &AtropineConfig) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x0 in [cfg.state_low[0], cfg.state_high[0]] {
        for x1 in [cfg.state_low[1], cfg.state_high[1]] {
            let e = cfg.y_ss + cfg.model.lin_output(&[x0, x1]);
            lo = lo.min(e);
            hi = hi.max(e);
        }
    }
    (lo, hi)
}

impl Plant for AtropinePlant {
    fn name(&self) -> &'static str {
        "atropine"
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
        let x = sample_box(rng, &self.cfg.init_low, &self.cfg.init_high);
        self.x = [x[0], x[1]];
        self.x_hat = [0.0; 2];
        self.last_q = self.cfg.q_ss;
        self.noise = ChaCha8Rng::seed_from_u64(rng.random());
    }
    fn advance(&mut self, action: &[f64], _step: usize) -> Result<Advance, SimError> {
        let m = &self.cfg.model;
        let mut du = [0.0; 4];
        for i in 0..4 {
            du[i] = action[i] - self.cfg.q_ss[i];
        }
        let y_meas = m.lin_output(&self.x);
        self.x_hat = m.kalman_update(&self.x_hat, &du, y_meas);
        self.x = m.lin_step(&self.x, &du);
        if self.cfg.disturbance > 0.0 {
            let w = self.cfg.disturbance;
            for xi in &mut self.x {
                *xi += self.noise.random_range(-w..=w);
            }
        }
        self.last_q.copy_from_slice(action);
        Ok(Advance::reward(atropine_reward(self.e_factor())))
    }
    fn state_admissible(&self) -> bool {
        self.state_space.contains(&self.x)
    }
    fn observe(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(OBS_DIM);
        obs.extend(self.x_hat);
        obs.push(self.e_factor());
        obs.push(self.cfg.y_ss + self.cfg.model.lin_output(&self.x_hat));
        obs.extend(self.last_q);
        obs
    }
    fn min_step_reward(&self) -> f64 {
        atropine_reward(e_factor_range(&self.cfg).1)
    }
    fn nominal_action(&self) -> Vec<f64> {
        self.cfg.q_ss.to_vec()
    }
    fn state(&self) -> Vec<f64> {
        self.x.to_vec()
    }
    fn metadata(&self) -> EnvMetadata {
        EnvMetadata {
            name: self.name().into(),
            a_dim: 4,
            o_dim: OBS_DIM,
            max_steps: self.cfg.max_steps,
            error_reward: self.cfg.error_reward,
            step_duration: 1.0,
            time_unit: "sample".into(),
            observation_names: ["x_hat_0", "x_hat_1", "e_factor", "e_factor_estimate", "q1_prev", "q2_prev", "q3_prev", "q4_prev"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            action_names: ["q1", "q2", "q3", "q4"].iter().map(|s| s.to_string()).collect(),
            notes: vec![
                "observation: filtered state, measured and estimated E-factor, previous flows".into(),
            ],
        }
    }
}

pub type AtropineEnv = Episode<AtropinePlant>;

pub fn atropine_env(cfg: AtropineConfig) -> Result<AtropineEnv, ConfigError> {
    Ok(Episode::new(AtropinePlant::new(cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;
    use proptest::prelude::*;

    #[test]
    fn model_matrix_products() {
        let m = LinearPlantModel::default();
        assert_eq!(m.lin_step(&[0.0; 2], &[0.0; 4]), [0.0, 0.0]);
        let x = m.lin_step(&[1.0, 0.0], &[0.0; 4]);
        assert!((x[0] - 0.8543).abs() < 1e-12 && (x[1] - 0.0195).abs() < 1e-12);
        let x = m.lin_step(&[0.0; 2], &[1.0, 0.0, 0.0, 0.0]);
        assert!((x[0] + 0.0382).abs() < 1e-12 && (x[1] + 0.0051).abs() < 1e-12);
        assert!((m.lin_output(&[1.0, 0.0]) + 148.6124).abs() < 1e-12);
        assert!((m.lin_output(&[0.0, -1.0]) - 46.8132).abs() < 1e-12);
    }

    #[test]
    fn kalman_gain_examples() {
        let m = LinearPlantModel::default();
        assert_eq!(m.kalman_update(&[0.0; 2], &[0.0; 4], 0.0), [0.0, 0.0]);
        let x = m.kalman_update(&[0.0; 2], &[0.0; 4], 1.0);
        assert!((x[0] + 0.0093).abs() < 1e-12 && (x[1] - 0.0115).abs() < 1e-12);
    }

    #[test]
    fn model_and_estimator_are_stable() {
        let m = LinearPlantModel::default();
        assert!(LinearPlantModel::spectral_radius(&m.a_matrix()) < 1.0);
        assert!(LinearPlantModel::spectral_radius(&m.estimator_matrix()) < 1.0);
    }

    #[test]
    fn filter_error_shrinks_tenfold() {
        let m = LinearPlantModel::default();
        let mut x = [0.3f64, -0.2];
        let mut x_hat = [0.0, 0.0];
        let e0 = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let u = [0.1, -0.05, 0.02, 0.0];
        for _ in 0..40 {
            x_hat = m.kalman_update(&x_hat, &u, m.lin_output(&x));
            x = m.lin_step(&x, &u);
        }
        let e = ((x[0] - x_hat[0]).powi(2) + (x[1] - x_hat[1]).powi(2)).sqrt();
        assert!(e * 10.0 <= e0, "error {e} from {e0}");
    }

    #[test]
    fn reward_examples() {
        assert_eq!(atropine_reward(13.057), -13.057);
        assert_eq!(atropine_reward(0.0), 0.0);
    }

    #[test]
    fn mixer_examples() {
        let a = MixerStream { flows: vec![1.0, 2.0] };
        let b = MixerStream { flows: vec![3.0, 4.0] };
        assert_eq!(mixer_balance(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(mixer_balance(&[a, b]).unwrap().flows, vec![4.0, 6.0]);
        assert!(mixer_balance(&[]).is_err());
    }

    #[test]
    fn tubular_transport() {
        let inlet = [2.0, 1.0];
        let uniform = [2.0, 1.0, 2.0, 1.0, 2.0, 1.0];
        let d = tubular_mol_rhs(&uniform, &inlet, 0.7, 0.5, &Inert).unwrap();
        assert!(d.iter().all(|v| *v == 0.0));

        // A pulse at node 1 drains node 1 and feeds node 2 only.
        let pulse = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let d = tubular_mol_rhs(&pulse, &[0.0], 1.0, 0.5, &Inert).unwrap();
        assert_eq!(d, vec![0.0, -2.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        // Linear profile c = s·j: derivative is -Q·s/ΔV everywhere.
        let lin: Vec<f64> = (0..6).map(|j| 0.3 * (j + 1) as f64).collect();
        let d = tubular_mol_rhs(&lin, &[0.0], 2.0, 0.25, &Inert).unwrap();
        for v in d {
            assert!((v + 2.0 * 0.3 / 0.25).abs() < 1e-12);
        }
        assert!(tubular_mol_rhs(&lin, &[0.0], 2.0, 0.0, &Inert).is_err());
    }

    #[test]
    fn nominal_operation_is_an_equilibrium() {
        let cfg = AtropineConfig { init_low: [0.0; 2], init_high: [0.0; 2], ..Default::default() };
        let mut env = atropine_env(cfg).unwrap();
        let obs = env.reset(11);
        assert!((obs[2] - 13.057).abs() < 1e-12);
        let q = env.nominal_action();
        for k in 0..60 {
            let r = env.step(&q).unwrap();
            assert_eq!(env.state(), vec![0.0, 0.0]);
            assert!((r.reward + 13.057).abs() < 1e-12);
            assert_eq!(r.timeout, k == 59);
        }
    }

    #[test]
    fn flow_bounds_are_enforced() {
        let mut env = atropine_env(AtropineConfig::default()).unwrap();
        env.reset(0);
        let r = env.step(&[0.4, 0.1, 5.01, 0.2]).unwrap();
        assert!(r.failure);
        assert_eq!(r.reward, -100_000.0);
    }

    #[test]
    fn error_reward_inequality_holds() {
        let env = atropine_env(AtropineConfig::default()).unwrap();
        assert!(env.error_reward_consistent());
        assert_eq!(env.metadata().o_dim, env.plant().observe().len());
    }

    proptest! {
        #[test]
        fn mixer_matches_fold(streams in proptest::collection::vec(
            proptest::collection::vec(0.0f64..10.0, 3), 1..8)) {
            let inlets: Vec<MixerStream> =
                streams.iter().map(|f| MixerStream { flows: f.clone() }).collect();
            let out = mixer_balance(&inlets).unwrap();
            for i in 0..3 {
                let want = streams.iter().fold(0.0, |acc, f| acc + f[i]);
                prop_assert!((out.flows[i] - want).abs() <= 1e-12);
            }
        }

        #[test]
        fn lower_e_factor_is_better(a in -100.0f64..100.0, b in -100.0f64..100.0) {
            prop_assume!(a < b);
            prop_assert!(atropine_reward(a) > atropine_reward(b));
        }
    }
}
