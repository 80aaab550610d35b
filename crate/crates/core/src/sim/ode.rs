use super::{check_finite, SimError};

/// A first-order system `dx/dt = f(t, x, u)` with a fixed state dimension.
///
/// Implementations must be pure: the same `(t, x, u)` always yields the same
/// derivative. `dx` has length `dim()` and is fully overwritten.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError>;
}

impl<S: OdeSystem + ?Sized> OdeSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn rhs(&self, t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        (**self).rhs(t, x, u, dx)
    }
}

/// Adapts a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]),
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        (self.f)(t, x, u, dx);
        Ok(())
    }
}

/// Classical fourth-order Runge-Kutta stepper with reusable stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    fn resize(&mut self, dim: usize) {
        if self.k1.len() != dim {
            *self = Self::new(dim);
        }
    }

    /// Advances `x` in place by one step of size `h`.
    pub fn step<S: OdeSystem + ?Sized>(
        &mut self,
        sys: &S,
        t: f64,
        x: &mut [f64],
        u: &[f64],
        h: f64,
    ) -> Result<(), SimError> {
        let n = sys.dim();
        if x.len() != n {
            return Err(SimError::InvalidArgument(format!(
                "state length {} does not match system dimension {n}",
                x.len()
            )));
        }
        self.resize(n);
        let half = 0.5 * h;

        sys.rhs(t, x, u, &mut self.k1)?;
        for i in 0..n {
            self.tmp[i] = x[i] + half * self.k1[i];
        }
        sys.rhs(t + half, &self.tmp, u, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = x[i] + half * self.k2[i];
        }
        sys.rhs(t + half, &self.tmp, u, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        sys.rhs(t + h, &self.tmp, u, &mut self.k4)?;

        let sixth = h / 6.0;
        for i in 0..n {
            x[i] += sixth * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
        check_finite(x)
    }
}

/// One RK4 step from `x` with step `h`; returns the new state.
pub fn rk4_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    x: &[f64],
    u: &[f64],
    h: f64,
) -> Result<Vec<f64>, SimError> {
    if !(h > 0.0) {
        return Err(SimError::InvalidArgument(format!("step size {h} must be positive")));
    }
    check_finite(x)?;
    let mut out = x.to_vec();
    Rk4::new(sys.dim()).step(sys, t, &mut out, u, h)?;
    Ok(out)
}

/// Splits `duration` into steps of `h` with a shorter final step.
fn step_plan(duration: f64, h: f64) -> (usize, f64) {
    let n = (duration / h).ceil() as usize;
    if n == 0 {
        return (0, 0.0);
    }
    let last = duration - (n - 1) as f64 * h;
    if last <= 1e-12 * h {
        (n - 1, h)
    } else {
        (n, last)
    }
}

/// Integrates over `duration` with constant input `u` using fixed RK4 steps of `h`.
///
/// The final step is shortened so the end time is hit exactly. A zero
/// duration returns `x0` unchanged.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    u: &[f64],
    duration: f64,
    h: f64,
) -> Result<Vec<f64>, SimError> {
    if !(h > 0.0) || !(duration >= 0.0) {
        return Err(SimError::InvalidArgument(format!(
            "need h > 0 and duration >= 0, got h = {h}, duration = {duration}"
        )));
    }
    check_finite(x0)?;
    let mut x = x0.to_vec();
    let (n, last) = step_plan(duration, h);
    let mut rk = Rk4::new(sys.dim());
    let mut t = t0;
    for i in 0..n {
        let dt = if i + 1 == n { last } else { h };
        rk.step(sys, t, &mut x, u, dt)?;
        t += dt;
    }
    Ok(x)
}

/// RK4 integration that keeps selected components nonnegative.
///
/// Whenever a step would drive a masked component below zero the step is
/// replaced by two half steps, recursively, up to ten halvings. After the
/// tenth halving the step is taken and negative components are floored at 0.
/// `mask = None` guards every component.
pub fn integrate_nonnegative<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    u: &[f64],
    duration: f64,
    h: f64,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>, SimError> {
    if !(h > 0.0) || !(duration >= 0.0) {
        return Err(SimError::InvalidArgument(format!(
            "need h > 0 and duration >= 0, got h = {h}, duration = {duration}"
        )));
    }
    check_finite(x0)?;
    let mut x = x0.to_vec();
    let (n, last) = step_plan(duration, h);
    let mut rk = Rk4::new(sys.dim());
    let mut trial = vec![0.0; x.len()];
    let mut t = t0;
    for i in 0..n {
        let dt = if i + 1 == n { last } else { h };
        guarded_step(sys, &mut rk, t, &mut x, &mut trial, u, dt, mask, 0)?;
        t += dt;
    }
    Ok(x)
}

const MAX_HALVINGS: u32 = 10;

#[allow(clippy::too_many_arguments)]
fn guarded_step<S: OdeSystem + ?Sized>(
    sys: &S,
    rk: &mut Rk4,
    t: f64,
    x: &mut Vec<f64>,
    trial: &mut Vec<f64>,
    u: &[f64],
    h: f64,
    mask: Option<&[bool]>,
    depth: u32,
) -> Result<(), SimError> {
    trial.clear();
    trial.extend_from_slice(x);
    rk.step(sys, t, trial, u, h)?;
    let guarded = |i: usize| mask.map_or(true, |m| m[i]);
    let crosses = trial.iter().enumerate().any(|(i, v)| *v < 0.0 && guarded(i));
    if !crosses {
        std::mem::swap(x, trial);
        return Ok(());
    }
    if depth >= MAX_HALVINGS {
        for (i, v) in trial.iter_mut().enumerate() {
            if *v < 0.0 && guarded(i) {
                *v = 0.0;
            }
        }
        std::mem::swap(x, trial);
        return Ok(());
    }
    let half = 0.5 * h;
    guarded_step(sys, rk, t, x, trial, u, half, mask, depth + 1)?;
    guarded_step(sys, rk, t + half, x, trial, u, half, mask, depth + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn growth() -> FnSystem<impl Fn(f64, &[f64], &[f64], &mut [f64])> {
        FnSystem::new(1, |_t, x, _u, dx| dx[0] = x[0])
    }

    #[test]
    fn zero_rhs_is_identity() {
        let sys = FnSystem::new(3, |_t, _x, _u, dx: &mut [f64]| dx.fill(0.0));
        let x = rk4_step(&sys, 0.0, &[1.0, 2.0, 3.0], &[], 0.1).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn exponential_single_step() {
        let x = rk4_step(&growth(), 0.0, &[1.0], &[], 0.1).unwrap();
        assert!((x[0] - 0.1_f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn constant_derivative_is_exact() {
        let c = 2.5;
        let sys = FnSystem::new(1, move |_t, _x, _u, dx: &mut [f64]| dx[0] = c);
        let x = rk4_step(&sys, 0.0, &[0.0], &[], 0.3).unwrap();
        assert!((x[0] - c * 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_duration_returns_initial_state() {
        let x = integrate(&growth(), 0.0, &[4.2], &[], 0.0, 0.1).unwrap();
        assert_eq!(x, vec![4.2]);
    }

    #[test]
    fn exponential_over_unit_interval() {
        let x = integrate(&growth(), 0.0, &[1.0], &[], 1.0, 0.01).unwrap();
        assert!((x[0] - std::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn partial_final_step_lands_on_end_time() {
        // dx/dt = 1 integrates exactly, so the end value is the duration.
        let sys = FnSystem::new(1, |_t, _x, _u, dx: &mut [f64]| dx[0] = 1.0);
        let x = integrate(&sys, 0.0, &[0.0], &[], 0.35, 0.1).unwrap();
        assert!((x[0] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn halving_step_cuts_error_by_order_four() {
        let err = |h: f64| {
            let x = integrate(&growth(), 0.0, &[1.0], &[], 1.0, h).unwrap();
            (x[0] - std::f64::consts::E).abs()
        };
        let (e1, e2, e3) = (err(0.1), err(0.05), err(0.025));
        assert!(e1 / e2 >= 8.0 && e2 / e3 >= 8.0);
        let order = ((e1 / e2).log2() + (e2 / e3).log2()) / 2.0;
        assert!(order >= 3.9, "measured order {order}");
    }

    #[test]
    fn non_finite_state_is_reported() {
        let sys = FnSystem::new(2, |_t, _x, _u, dx: &mut [f64]| {
            dx[0] = 0.0;
            dx[1] = f64::INFINITY;
        });
        let err = rk4_step(&sys, 0.0, &[1.0, 1.0], &[], 0.1).unwrap_err();
        assert_eq!(err, SimError::NonFiniteState { index: 1 });
    }

    #[test]
    fn bad_step_is_rejected() {
        assert!(rk4_step(&growth(), 0.0, &[1.0], &[], 0.0).is_err());
        assert!(integrate(&growth(), 0.0, &[1.0], &[], -1.0, 0.1).is_err());
    }

    #[test]
    fn nonnegative_integration_floors_fast_decay() {
        // dx/dt = -50 with h = 1 would overshoot far below zero.
        let sys = FnSystem::new(2, |_t, _x, _u, dx: &mut [f64]| {
            dx[0] = -50.0;
            dx[1] = -50.0;
        });
        let mask = [true, false];
        let x = integrate_nonnegative(&sys, 0.0, &[1.0, 1.0], &[], 1.0, 1.0, Some(&mask)).unwrap();
        assert_eq!(x[0], 0.0);
        assert!((x[1] + 49.0).abs() < 1e-12);
    }

    #[test]
    fn nonnegative_integration_matches_plain_when_positive() {
        let sys = FnSystem::new(1, |_t, x, _u, dx: &mut [f64]| dx[0] = -x[0]);
        let a = integrate(&sys, 0.0, &[1.0], &[], 2.0, 0.1).unwrap();
        let b = integrate_nonnegative(&sys, 0.0, &[1.0], &[], 2.0, 0.1, None).unwrap();
        assert_eq!(a, b);
    }
}
