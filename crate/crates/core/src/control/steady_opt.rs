use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shooting::{spg_minimize, FnObjective, SpgOptions};
use super::ControlError;
use crate::env::ContinuousSpace;
use crate::sim::{solve_steady_state, OdeSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyOptOptions {
    pub starts: usize,
    pub seed: u64,
    /// Steady states outside this box are infeasible.
    pub state_box: Option<ContinuousSpace>,
    pub solver: SpgOptions,
}

impl Default for SteadyOptOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            seed: 0,
            state_box: None,
            solver: SpgOptions { fd_step: 1e-5, ..SpgOptions::default() },
        }
    }
}

/// The best steady operating point found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyOptimum {
    pub x_s: Vec<f64>,
    pub u_s: Vec<f64>,
    /// `ℓ_e(x_s, u_s)`
    pub value: f64,
    /// `‖f(x_s, u_s)‖∞`
    pub residual: f64,
}

const TIE: f64 = 1e-12;

/// Maximises `ℓ_e(x, u)` over steady states `f(x, u) = 0` with `u` in the
/// box.
///
/// Each seeded start in the input box is refined by projected gradient on
/// `u ↦ ℓ_e(x_s(u), u)`, where `x_s(u)` is the Newton steady state reached
/// from the start's own steady state. Values within a relative 1e-12 count
/// as ties, broken by the lexicographically smallest input.
pub fn solve_steady_state_optimum(
    sys: &dyn OdeSystem,
    objective: &dyn Fn(&[f64], &[f64]) -> f64,
    u_low: &[f64],
    u_high: &[f64],
    x_guess: &[f64],
    opts: &SteadyOptOptions,
) -> Result<SteadyOptimum, ControlError> {
    if u_low.len() != u_high.len() || u_low.iter().zip(u_high).any(|(l, h)| !(l <= h) || !(h - l).is_finite()) {
        return Err(ControlError::InvalidSpec("steady-state input bounds must be finite and ordered".into()));
    }
    if opts.starts == 0 {
        return Err(ControlError::InvalidSpec("need at least one start".into()));
    }
    let to_u = |z: &[f64]| -> Vec<f64> { (0..z.len()).map(|i| u_low[i] + z[i] * (u_high[i] - u_low[i])).collect() };
    let settle = |u: &[f64], guess: &[f64]| -> Option<(Vec<f64>, f64)> {
        let r = solve_steady_state(sys, u, guess).ok()?;
        let inside = opts.state_box.as_ref().is_none_or(|b| b.contains(&r.x_star));
        (r.converged && inside).then_some((r.x_star, r.residual_norm))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<SteadyOptimum> = None;
    for _ in 0..opts.starts {
        let z0: Vec<f64> = (0..u_low.len()).map(|_| rng.random::<f64>()).collect();
        let Some((x_start, _)) = settle(&to_u(&z0), x_guess) else { continue };
        let mut obj = FnObjective {
            dim: z0.len(),
            f: |z: &[f64]| {
                let u = to_u(z);
                match settle(&u, &x_start) {
                    Some((x, _)) => -objective(&x, &u),
                    None => f64::INFINITY,
                }
            },
            central: true,
        };
        let out = spg_minimize(&mut obj, &z0, &opts.solver);
        let u = to_u(&out.z);
        let Some((x, residual)) = settle(&u, &x_start) else { continue };
        let value = objective(&x, &u);
        if !value.is_finite() {
            continue;
        }
        let candidate = SteadyOptimum { x_s: x, u_s: u, value, residual };
        best = Some(match best {
            None => candidate,
            Some(b) => {
                let tie = (candidate.value - b.value).abs() <= TIE * b.value.abs().max(1.0);
                let better = if tie { lexicographically_less(&candidate.u_s, &b.u_s) } else { candidate.value > b.value };
                if better {
                    candidate
                } else {
                    b
                }
            }
        });
    }
    best.ok_or(ControlError::NoFeasibleSteadyState)
}

fn lexicographically_less(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::FnSystem;

    fn relax() -> FnSystem<impl Fn(f64, &[f64], &[f64], &mut [f64])> {
        FnSystem::new(1, |_t, x: &[f64], u: &[f64], dx: &mut [f64]| dx[0] = u[0] - x[0])
    }

    #[test]
    fn concave_objective_on_manifold() {
        let sys = relax();
        let obj = |x: &[f64], _u: &[f64]| x[0] - 0.5 * x[0] * x[0];
        let opt = solve_steady_state_optimum(&sys, &obj, &[0.0], &[2.0], &[0.0], &SteadyOptOptions::default()).unwrap();
        assert!((opt.u_s[0] - 1.0).abs() < 1e-6, "{:?}", opt);
        assert!((opt.x_s[0] - 1.0).abs() < 1e-6);
        assert!(opt.residual <= 1e-10);
    }

    #[test]
    fn constant_objective_breaks_ties_lexicographically() {
        let sys = FnSystem::new(2, |_t, x: &[f64], u: &[f64], dx: &mut [f64]| {
            dx[0] = u[0] - x[0];
            dx[1] = u[1] - x[1];
        });
        let obj = |_x: &[f64], _u: &[f64]| 3.0;
        let opts = SteadyOptOptions::default();
        let opt = solve_steady_state_optimum(&sys, &obj, &[0.0, 0.0], &[1.0, 1.0], &[0.5, 0.5], &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let starts: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let lowest = starts.iter().min_by(|a, b| a.partial_cmp(b).unwrap()).unwrap();
        assert_eq!(&opt.u_s, lowest);
        assert_eq!(opt.value, 3.0);
    }

    #[test]
    fn infeasible_box_errors() {
        let sys = relax();
        let obj = |x: &[f64], _u: &[f64]| x[0];
        let opts = SteadyOptOptions {
            state_box: Some(ContinuousSpace::new(vec![5.0], vec![6.0]).unwrap()),
            ..SteadyOptOptions::default()
        };
        let err = solve_steady_state_optimum(&sys, &obj, &[0.0], &[2.0], &[0.0], &opts);
        assert!(matches!(err, Err(ControlError::NoFeasibleSteadyState)));
    }

    #[test]
    fn linear_objective_hits_bound() {
        let sys = relax();
        let obj = |x: &[f64], _u: &[f64]| x[0];
        let opt = solve_steady_state_optimum(&sys, &obj, &[0.0], &[2.0], &[0.0], &SteadyOptOptions::default()).unwrap();
        assert_eq!(opt.u_s[0], 2.0);
    }
}
