//! Direct single shooting with piecewise-constant inputs.
//!
//! Decision variables are the inputs of each move block, rescaled to the unit
//! box, so one projected-gradient solver serves every plant regardless of
//! input units. The stage cost is charged at the state reached at the end of
//! each sample, and predicted states outside the state box pay a linear
//! penalty.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::env::ContinuousSpace;
use crate::sim::{integrate, integrate_nonnegative, OdeSystem, SimError};

/// One-sample-ahead model used inside the horizon.
pub trait Predictor: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn predict(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SimError>;
}

/// An ODE sampled with zero-order-hold inputs: `substeps` RK4 steps per
/// sample of length `dt`.
#[derive(Debug, Clone)]
pub struct Sampled<S> {
    pub sys: S,
    pub input_dim: usize,
    pub dt: f64,
    pub substeps: usize,
    /// Integrate with the nonnegativity guard.
    pub nonnegative: bool,
}

impl<S: OdeSystem + Send + Sync> Predictor for Sampled<S> {
    fn state_dim(&self) -> usize {
        self.sys.dim()
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn predict(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SimError> {
        let h = self.dt / self.substeps as f64;
        if self.nonnegative {
            integrate_nonnegative(&self.sys, 0.0, x, u, self.dt, h, None)
        } else {
            integrate(&self.sys, 0.0, x, u, self.dt, h)
        }
    }
}

/// Settings of the projected spectral-gradient solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpgOptions {
    pub max_iterations: usize,
    /// Stop when `‖P(z − ∇f) − z‖∞` falls to this value.
    pub tolerance: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
    /// Finite-difference step in unit-box coordinates.
    pub fd_step: f64,
}

impl Default for SpgOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            armijo: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
            max_backtracks: 50,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    /// The line search failed or the start was infeasible; the best iterate
    /// is returned.
    Stalled,
}

/// A smooth objective over the unit box.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&mut self, z: &[f64]) -> f64;
    fn gradient(&mut self, z: &[f64], fz: f64, step: f64) -> Vec<f64>;
}

/// Forward-difference gradient of a closure; components at the upper face
/// use a backward difference so no evaluation leaves the box.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, z: &[f64], fz: f64, step: f64) -> Vec<f64> {
    let mut zp = z.to_vec();
    (0..z.len())
        .map(|j| {
            let h = if z[j] + step <= 1.0 { step } else { -step };
            zp[j] = z[j] + h;
            let fp = f(&zp);
            zp[j] = z[j];
            if fp.is_finite() {
                (fp - fz) / h
            } else {
                0.0
            }
        })
        .collect()
}

/// Central-difference gradient, one-sided at the faces of the unit box.
pub fn central_gradient(f: &mut dyn FnMut(&[f64]) -> f64, z: &[f64], fz: f64, step: f64) -> Vec<f64> {
    let mut zp = z.to_vec();
    (0..z.len())
        .map(|j| {
            let (lo, hi) = ((z[j] - step).max(0.0), (z[j] + step).min(1.0));
            zp[j] = hi;
            let fh = if hi > z[j] { f(&zp) } else { fz };
            zp[j] = lo;
            let fl = if lo < z[j] { f(&zp) } else { fz };
            zp[j] = z[j];
            if fh.is_finite() && fl.is_finite() && hi > lo {
                (fh - fl) / (hi - lo)
            } else {
                0.0
            }
        })
        .collect()
}

/// An [`Objective`] defined by a closure with a finite-difference gradient.
pub struct FnObjective<F> {
    pub dim: usize,
    pub f: F,
    pub central: bool,
}

impl<F: FnMut(&[f64]) -> f64> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&mut self, z: &[f64]) -> f64 {
        (self.f)(z)
    }
    fn gradient(&mut self, z: &[f64], fz: f64, step: f64) -> Vec<f64> {
        if self.central {
            central_gradient(&mut self.f, z, fz, step)
        } else {
            fd_gradient(&mut self.f, z, fz, step)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpgOutcome {
    pub z: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Objective value at the start and after every accepted iteration.
    pub trace: Vec<f64>,
}

fn project(z: &mut [f64]) {
    for v in z {
        *v = v.clamp(0.0, 1.0);
    }
}

fn projected_gradient_norm(z: &[f64], g: &[f64]) -> f64 {
    z.iter().zip(g).fold(0.0_f64, |m, (zi, gi)| m.max(((zi - gi).clamp(0.0, 1.0) - zi).abs()))
}

/// Monotone spectral projected gradient on `[0, 1]^n`.
///
/// The trial step length is the Barzilai-Borwein ratio `sᵀs/sᵀy` (the
/// configured initial step on the first iteration) and the search direction
/// is backtracked until the Armijo condition holds.
pub fn spg_minimize(obj: &mut dyn Objective, z0: &[f64], opts: &SpgOptions) -> SpgOutcome {
    let mut z = z0.to_vec();
    project(&mut z);
    let mut f = obj.value(&z);
    let mut trace = vec![f];
    if !f.is_finite() {
        return SpgOutcome { z, value: f, iterations: 0, status: SolveStatus::Stalled, trace };
    }
    let mut g = obj.gradient(&z, f, opts.fd_step);
    let mut alpha = opts.initial_step;
    for it in 0..opts.max_iterations {
        if projected_gradient_norm(&z, &g) <= opts.tolerance {
            return SpgOutcome { z, value: f, iterations: it, status: SolveStatus::Converged, trace };
        }
        let mut d: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| (zi - alpha * gi).clamp(0.0, 1.0) - zi).collect();
        let mut slope: f64 = d.iter().zip(&g).map(|(di, gi)| di * gi).sum();
        if !(slope < 0.0) {
            // A poor spectral step can point uphill after projection; fall
            // back to a unit steepest-descent trial.
            d = z.iter().zip(&g).map(|(zi, gi)| (zi - gi).clamp(0.0, 1.0) - zi).collect();
            slope = d.iter().zip(&g).map(|(di, gi)| di * gi).sum();
        }
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = z.iter().zip(&d).map(|(zi, di)| (zi + lambda * di).clamp(0.0, 1.0)).collect();
            let ft = obj.value(&trial);
            if ft.is_finite() && ft <= f + opts.armijo * lambda * slope {
                accepted = Some((trial, ft));
                break;
            }
            lambda *= opts.shrink;
        }
        let Some((z_new, f_new)) = accepted else {
            return SpgOutcome { z, value: f, iterations: it, status: SolveStatus::Stalled, trace };
        };
        let g_new = obj.gradient(&z_new, f_new, opts.fd_step);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..z.len() {
            let s = z_new[i] - z[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { 1e10 };
        z = z_new;
        f = f_new;
        g = g_new;
        trace.push(f);
    }
    let status = if projected_gradient_norm(&z, &g) <= opts.tolerance {
        SolveStatus::Converged
    } else {
        SolveStatus::IterationLimit
    };
    SpgOutcome { z, value: f, iterations: opts.max_iterations, status, trace }
}

/// Writes a solver trace as `iteration,cost` CSV.
pub fn write_trace_csv<W: Write>(writer: W, trace: &[f64]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "cost"])?;
    for (i, c) in trace.iter().enumerate() {
        w.write_record([i.to_string(), format!("{c:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

fn default_block() -> usize {
    1
}

fn default_penalty() -> f64 {
    1e4
}

/// Setpoint-tracking MPC problem. The sample length lives in the predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSpec {
    pub horizon: usize,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub x_s: Vec<f64>,
    pub u_s: Vec<f64>,
    pub u_low: Vec<f64>,
    pub u_high: Vec<f64>,
    #[serde(default)]
    pub state_box: Option<ContinuousSpace>,
    /// Samples per move block; inputs are held constant within a block.
    #[serde(default = "default_block")]
    pub block: usize,
    /// Cost per unit of predicted state-box violation.
    #[serde(default = "default_penalty")]
    pub state_penalty: f64,
    #[serde(default)]
    pub solver: SpgOptions,
}

impl MpcSpec {
    pub fn validate(&self, nx: usize, nu: usize) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::InvalidSpec(m.into()));
        if self.horizon == 0 || self.block == 0 {
            return bad("horizon and block length must be at least 1");
        }
        if self.q.len() != nx || self.x_s.len() != nx {
            return bad("Q and x_s must match the state dimension");
        }
        if self.r.len() != nu || self.u_s.len() != nu || self.u_low.len() != nu || self.u_high.len() != nu {
            return bad("R, u_s and input bounds must match the input dimension");
        }
        if self.q.iter().chain(&self.r).any(|w| !(*w >= 0.0)) {
            return bad("weights must be nonnegative");
        }
        check_bounds(&self.u_low, &self.u_high)?;
        check_state_box(&self.state_box, nx)
    }

    /// Quadratic tracking cost of one sample.
    pub fn stage_cost(&self, x_next: &[f64], u: &[f64]) -> f64 {
        let sx: f64 = (0..x_next.len()).map(|i| self.q[i] * (x_next[i] - self.x_s[i]).powi(2)).sum();
        let su: f64 = (0..u.len()).map(|i| self.r[i] * (u[i] - self.u_s[i]).powi(2)).sum();
        sx + su
    }
}

/// Economic MPC problem; the stage objective `ℓ_e(x, u)` is maximised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpcSpec {
    pub horizon: usize,
    pub u_low: Vec<f64>,
    pub u_high: Vec<f64>,
    /// Input held when no warm start is given, and the dominance reference.
    pub u_s: Vec<f64>,
    #[serde(default)]
    pub state_box: Option<ContinuousSpace>,
    #[serde(default = "default_block")]
    pub block: usize,
    #[serde(default = "default_penalty")]
    pub state_penalty: f64,
    #[serde(default)]
    pub solver: SpgOptions,
}

impl EmpcSpec {
    pub fn validate(&self, nx: usize, nu: usize) -> Result<(), ControlError> {
        if self.horizon == 0 || self.block == 0 {
            return Err(ControlError::InvalidSpec("horizon and block length must be at least 1".into()));
        }
        if self.u_low.len() != nu || self.u_high.len() != nu || self.u_s.len() != nu {
            return Err(ControlError::InvalidSpec("input bounds must match the input dimension".into()));
        }
        check_bounds(&self.u_low, &self.u_high)?;
        check_state_box(&self.state_box, nx)
    }
}

fn check_bounds(low: &[f64], high: &[f64]) -> Result<(), ControlError> {
    if low.iter().zip(high).all(|(l, h)| l.is_finite() && h.is_finite() && l <= h) {
        Ok(())
    } else {
        Err(ControlError::InvalidSpec("input bounds must be finite with low <= high".into()))
    }
}

fn check_state_box(b: &Option<ContinuousSpace>, nx: usize) -> Result<(), ControlError> {
    match b {
        Some(s) if s.dim() != nx => Err(ControlError::InvalidSpec("state box must match the state dimension".into())),
        _ => Ok(()),
    }
}

/// Total box violation of `x`.
fn violation(b: Option<&ContinuousSpace>, x: &[f64]) -> f64 {
    let Some(b) = b else { return 0.0 };
    x.iter()
        .zip(b.low().iter().zip(b.high()))
        .map(|(v, (l, h))| (l - v).max(0.0) + (v - h).max(0.0))
        .sum()
}

/// Shooting objective over block inputs scaled to the unit box.
///
/// The gradient re-simulates only from the first sample a decision
/// influences, reusing the cached prefix of states and costs.
pub struct ShootingProblem<'a> {
    pub predictor: &'a dyn Predictor,
    pub x0: &'a [f64],
    pub horizon: usize,
    pub block: usize,
    pub u_low: &'a [f64],
    pub u_high: &'a [f64],
    pub stage: &'a dyn Fn(&[f64], &[f64]) -> f64,
    pub state_box: Option<&'a ContinuousSpace>,
    pub penalty: f64,
}

impl ShootingProblem<'_> {
    pub fn n_blocks(&self) -> usize {
        self.horizon.div_ceil(self.block)
    }

    fn nu(&self) -> usize {
        self.u_low.len()
    }

    /// Input applied at sample `k` under decision vector `z`.
    pub fn input_at(&self, z: &[f64], k: usize) -> Vec<f64> {
        let b = k / self.block;
        let m = self.nu();
        (0..m).map(|i| self.u_low[i] + z[b * m + i] * (self.u_high[i] - self.u_low[i])).collect()
    }

    pub fn plan(&self, z: &[f64]) -> Vec<Vec<f64>> {
        (0..self.horizon).map(|k| self.input_at(z, k)).collect()
    }

    /// Unit-box coordinates of a per-sample plan (first sample of each block).
    pub fn encode(&self, plan: &[Vec<f64>]) -> Vec<f64> {
        let m = self.nu();
        let mut z = Vec::with_capacity(self.n_blocks() * m);
        for b in 0..self.n_blocks() {
            let u = &plan[(b * self.block).min(plan.len() - 1)];
            for i in 0..m {
                let span = self.u_high[i] - self.u_low[i];
                z.push(if span > 0.0 { ((u[i] - self.u_low[i]) / span).clamp(0.0, 1.0) } else { 0.0 });
            }
        }
        z
    }

    fn stage_total(&self, x_next: &[f64], u: &[f64]) -> f64 {
        (self.stage)(x_next, u) + self.penalty * violation(self.state_box, x_next)
    }

    /// Cost of samples `k0..N` from state `x`.
    fn tail(&self, z: &[f64], k0: usize, x: &[f64]) -> f64 {
        let mut x = x.to_vec();
        let mut cost = 0.0;
        for k in k0..self.horizon {
            let u = self.input_at(z, k);
            x = match self.predictor.predict(&x, &u) {
                Ok(v) => v,
                Err(_) => return f64::INFINITY,
            };
            cost += self.stage_total(&x, &u);
        }
        if cost.is_finite() {
            cost
        } else {
            f64::INFINITY
        }
    }

    /// States `x_0..x_N` and cumulative costs before each sample, or `None`
    /// if the prediction fails.
    fn rollout(&self, z: &[f64]) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut states = vec![self.x0.to_vec()];
        let mut cum = vec![0.0];
        for k in 0..self.horizon {
            let u = self.input_at(z, k);
            let next = self.predictor.predict(&states[k], &u).ok()?;
            let c = cum[k] + self.stage_total(&next, &u);
            states.push(next);
            cum.push(c);
        }
        cum[self.horizon].is_finite().then_some((states, cum))
    }

    /// Predicted states `x_1..x_N` under `z`.
    pub fn predicted_states(&self, z: &[f64]) -> Option<Vec<Vec<f64>>> {
        self.rollout(z).map(|(s, _)| s[1..].to_vec())
    }
}

impl Objective for ShootingProblem<'_> {
    fn dim(&self) -> usize {
        self.n_blocks() * self.nu()
    }

    fn value(&mut self, z: &[f64]) -> f64 {
        self.tail(z, 0, self.x0)
    }

    fn gradient(&mut self, z: &[f64], fz: f64, step: f64) -> Vec<f64> {
        let Some((states, cum)) = self.rollout(z) else {
            return vec![0.0; z.len()];
        };
        let m = self.nu();
        let mut zp = z.to_vec();
        (0..z.len())
            .map(|j| {
                let k0 = (j / m) * self.block;
                let h = if z[j] + step <= 1.0 { step } else { -step };
                zp[j] = z[j] + h;
                let fp = cum[k0] + self.tail(&zp, k0, &states[k0]);
                zp[j] = z[j];
                if fp.is_finite() {
                    (fp - fz) / h
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Result of one receding-horizon solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    /// Input to apply now.
    pub u0: Vec<f64>,
    /// Optimal per-sample input sequence.
    pub plan: Vec<Vec<f64>>,
    pub cost: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub trace: Vec<f64>,
}

/// Previous solution shifted by one sample, last input repeated.
pub fn shift_plan(plan: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut next: Vec<Vec<f64>> = plan.iter().skip(1).cloned().collect();
    if let Some(last) = plan.last() {
        next.push(last.clone());
    }
    next
}

/// Tracking cost of the input sequence `u_seq` from `x0`; `+∞` if the
/// prediction fails.
pub fn shooting_cost(spec: &MpcSpec, predictor: &dyn Predictor, x0: &[f64], u_seq: &[Vec<f64>]) -> f64 {
    assert_eq!(u_seq.len(), spec.horizon, "input sequence length must equal the horizon");
    let mut x = x0.to_vec();
    let mut cost = 0.0;
    for u in u_seq {
        x = match predictor.predict(&x, u) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        cost += spec.stage_cost(&x, u) + spec.state_penalty * violation(spec.state_box.as_ref(), &x);
    }
    if cost.is_finite() {
        cost
    } else {
        f64::INFINITY
    }
}

/// Minimises the shooting objective from the better of the warm start and
/// the constant reference input.
fn solve_shooting(
    problem: &mut ShootingProblem<'_>,
    reference: &[f64],
    warm: Option<&[Vec<f64>]>,
    opts: &SpgOptions,
) -> MpcSolution {
    let hold = vec![reference.to_vec(); problem.horizon];
    let z_ref = problem.encode(&hold);
    let mut z0 = z_ref.clone();
    if let Some(w) = warm.filter(|w| !w.is_empty()) {
        let z_warm = problem.encode(w);
        if problem.value(&z_warm) <= problem.value(&z_ref) {
            z0 = z_warm;
        }
    }
    let out = spg_minimize(problem, &z0, opts);
    let plan = problem.plan(&out.z);
    MpcSolution {
        u0: plan[0].clone(),
        plan,
        cost: out.value,
        iterations: out.iterations,
        status: out.status,
        trace: out.trace,
    }
}

/// Setpoint-tracking MPC by single shooting.
pub fn solve_mpc(
    spec: &MpcSpec,
    predictor: &dyn Predictor,
    x0: &[f64],
    warm: Option<&[Vec<f64>]>,
) -> Result<MpcSolution, ControlError> {
    spec.validate(predictor.state_dim(), predictor.input_dim())?;
    let stage = |x: &[f64], u: &[f64]| spec.stage_cost(x, u);
    let mut problem = ShootingProblem {
        predictor,
        x0,
        horizon: spec.horizon,
        block: spec.block,
        u_low: &spec.u_low,
        u_high: &spec.u_high,
        stage: &stage,
        state_box: spec.state_box.as_ref(),
        penalty: spec.state_penalty,
    };
    Ok(solve_shooting(&mut problem, &spec.u_s, warm, &spec.solver))
}

/// Economic MPC: maximises the summed `ℓ_e` over the horizon. The reported
/// cost is the minimised `−Σℓ_e` plus state penalties.
pub fn solve_empc(
    spec: &EmpcSpec,
    predictor: &dyn Predictor,
    objective: &dyn Fn(&[f64], &[f64]) -> f64,
    x0: &[f64],
    warm: Option<&[Vec<f64>]>,
) -> Result<MpcSolution, ControlError> {
    spec.validate(predictor.state_dim(), predictor.input_dim())?;
    let stage = |x: &[f64], u: &[f64]| -objective(x, u);
    let mut problem = ShootingProblem {
        predictor,
        x0,
        horizon: spec.horizon,
        block: spec.block,
        u_low: &spec.u_low,
        u_high: &spec.u_high,
        stage: &stage,
        state_box: spec.state_box.as_ref(),
        penalty: spec.state_penalty,
    };
    Ok(solve_shooting(&mut problem, &spec.u_s, warm, &spec.solver))
}
