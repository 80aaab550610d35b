use serde::{Deserialize, Serialize};

/// Gains and actuator limits of one PID loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Output at zero error and zero integral.
    #[serde(default)]
    pub bias: f64,
    /// Freeze the integral while the output is saturated.
    #[serde(default = "yes")]
    pub anti_windup: bool,
}

fn yes() -> bool {
    true
}

impl PidGains {
    pub fn valid(&self) -> bool {
        self.u_min < self.u_max && [self.k_p, self.k_i, self.k_d, self.bias].iter().all(|v| v.is_finite())
    }
}

/// Integrator and derivative memory of a PID loop.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// One PID update with error `setpoint − measurement`.
///
/// The integral uses the rectangle rule including the current error; the
/// derivative is a backward difference and is zero on the first call.
pub fn pid_step(g: &PidGains, setpoint: f64, measurement: f64, state: PidState, dt: f64) -> (f64, PidState) {
    assert!(dt > 0.0, "PID sample time must be positive");
    let e = setpoint - measurement;
    let derivative = state.prev_error.map_or(0.0, |p| (e - p) / dt);
    let integral = state.integral + e * dt;
    let raw = g.bias + g.k_p * e + g.k_i * integral + g.k_d * derivative;
    let u = raw.clamp(g.u_min, g.u_max);
    let saturated = u != raw;
    let integral = if saturated && g.anti_windup { state.integral } else { integral };
    (u, PidState { integral, prev_error: Some(e) })
}
