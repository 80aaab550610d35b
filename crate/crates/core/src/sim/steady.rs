use nalgebra::{DMatrix, DVector};

use super::{check_finite, inf_norm, OdeSystem, SimError};

/// Outcome of a steady-state solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateResult {
    pub x_star: Vec<f64>,
    /// `‖f(x_star, u)‖∞`
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Tuning knobs for the damped Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: u32,
    pub fd_relative: f64,
    pub fd_absolute: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100,
            max_halvings: 20,
            fd_relative: 1e-7,
            fd_absolute: 1e-9,
        }
    }
}

fn eval<S: OdeSystem + ?Sized>(sys: &S, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SimError> {
    let mut f = vec![0.0; sys.dim()];
    sys.rhs(0.0, x, u, &mut f)?;
    Ok(f)
}

/// Forward-difference Jacobian of `f(·, u)` at `x`.
///
/// The perturbation of component `j` is `max(rel·|x_j|, abs)`.
pub fn fd_jacobian<S: OdeSystem + ?Sized>(
    sys: &S,
    x: &[f64],
    u: &[f64],
    f0: &[f64],
    rel: f64,
    abs: f64,
) -> Result<DMatrix<f64>, SimError> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    for j in 0..n {
        let h = (rel * x[j].abs()).max(abs);
        xp[j] = x[j] + h;
        sys.rhs(0.0, &xp, u, &mut fp)?;
        for i in 0..n {
            jac[(i, j)] = (fp[i] - f0[i]) / h;
        }
        xp[j] = x[j];
    }
    Ok(jac)
}

/// Minimum-norm Newton step `-J⁺ f`, tolerant of rank-deficient Jacobians
/// such as the free level of a reactor whose outflow equals its inflow.
fn newton_step(jac: DMatrix<f64>, f: &[f64], iteration: usize) -> Result<Vec<f64>, SimError> {
    let svd = jac.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(SimError::SingularJacobian { iteration });
    }
    let rhs = DVector::from_iterator(f.len(), f.iter().map(|v| -v));
    let step = svd
        .solve(&rhs, smax * 1e-12)
        .map_err(|_| SimError::SingularJacobian { iteration })?;
    Ok(step.iter().copied().collect())
}

/// Finds `x*` with `f(x*, u) = 0` by damped Newton from `x_guess` using default options.
pub fn solve_steady_state<S: OdeSystem + ?Sized>(
    sys: &S,
    u: &[f64],
    x_guess: &[f64],
) -> Result<SteadyStateResult, SimError> {
    solve_steady_state_with(sys, u, x_guess, &NewtonOptions::default())
}

pub fn solve_steady_state_with<S: OdeSystem + ?Sized>(
    sys: &S,
    u: &[f64],
    x_guess: &[f64],
    opts: &NewtonOptions,
) -> Result<SteadyStateResult, SimError> {
    check_finite(x_guess)?;
    let mut x = x_guess.to_vec();
    let mut f = eval(sys, &x, u)?;
    let mut norm = inf_norm(&f);

    for iteration in 0..opts.max_iterations {
        if norm <= opts.tolerance {
            return Ok(SteadyStateResult {
                x_star: x,
                residual_norm: norm,
                converged: true,
                iterations: iteration,
            });
        }
        let jac = fd_jacobian(sys, &x, u, &f, opts.fd_relative, opts.fd_absolute)?;
        let step = newton_step(jac, &f, iteration)?;

        let mut lambda = 1.0;
        let mut accepted = None;
        let mut fallback = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(xi, si)| xi + lambda * si).collect();
            if let Ok(ft) = eval(sys, &trial, u) {
                let nt = inf_norm(&ft);
                if nt.is_finite() {
                    if nt < norm {
                        accepted = Some((trial, ft, nt));
                        break;
                    }
                    fallback = Some((trial, ft, nt));
                }
            }
            lambda *= 0.5;
        }
        // No decrease after all halvings: take the shortest finite trial and
        // let the iteration budget decide.
        match accepted.or(fallback) {
            Some((xt, ft, nt)) => {
                x = xt;
                f = ft;
                norm = nt;
            }
            None => return Err(SimError::SingularJacobian { iteration }),
        }
    }
    if norm <= opts.tolerance {
        return Ok(SteadyStateResult {
            x_star: x,
            residual_norm: norm,
            converged: true,
            iterations: opts.max_iterations,
        });
    }
    Err(SimError::MaxIterations(opts.max_iterations))
}
