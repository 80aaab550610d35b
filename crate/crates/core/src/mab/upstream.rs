//! Perfusion bioreactor with a hollow-fibre cell separator (time in minutes).

use serde::{Deserialize, Serialize};

use crate::sim::{OdeSystem, SimError};

pub const V1: usize = 0;
pub const XV1: usize = 1;
pub const XT1: usize = 2;
pub const GLC1: usize = 3;
pub const GLN1: usize = 4;
pub const LAC1: usize = 5;
pub const AMM1: usize = 6;
pub const MAB1: usize = 7;
pub const TEMP: usize = 8;
pub const V2: usize = 9;
pub const XV2: usize = 10;
pub const XT2: usize = 11;
pub const GLC2: usize = 12;
pub const GLN2: usize = 13;
pub const LAC2: usize = 14;
pub const AMM2: usize = 15;
pub const MAB2: usize = 16;
pub const UPSTREAM_DIM: usize = 17;

pub const STATE_NAMES: [&str; UPSTREAM_DIM] = [
    "V1", "Xv1", "Xt1", "GLC1", "GLN1", "LAC1", "AMM1", "mAb1", "T", "V2", "Xv2", "Xt2", "GLC2",
    "GLN2", "LAC2", "AMM2", "mAb2",
];

pub const F_IN: usize = 0;
pub const F_R: usize = 1;
pub const F_1: usize = 2;
pub const F_2: usize = 3;
pub const T_C: usize = 4;
pub const GLC_IN: usize = 5;
pub const AMM_IN: usize = 6;
pub const UPSTREAM_INPUTS: usize = 7;

pub const INPUT_NAMES: [&str; UPSTREAM_INPUTS] = ["F_in", "F_r", "F_1", "F_2", "T_c", "GLC_in", "AMM_in"];

const AVOGADRO: f64 = 6.022_140_76e23;

/// Kinetic, thermal and separation constants of the upstream model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpstreamParams {
    pub k_d_amm: f64,
    pub k_d_gln: f64,
    pub k_glc: f64,
    pub k_gln: f64,
    pub ki_amm: f64,
    pub ki_lac: f64,
    pub m_glc: f64,
    pub q_mab_max: f64,
    pub y_amm_gln: f64,
    pub y_lac_glc: f64,
    pub y_x_glc: f64,
    pub y_x_gln: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub minus_dh: f64,
    pub rho: f64,
    pub c_p: f64,
    /// Jacket heat transfer coefficient, J/(h·°C).
    pub u: f64,
    pub t_in: f64,
    pub eta_rec: f64,
    pub eta_ret: f64,
    /// Death-law exponent, must exceed 1.
    pub n_death: f64,
    pub ph_opt: f64,
    pub omega_mab: f64,
    /// Glutamine concentration of the fresh media, mM.
    pub gln_in: f64,
    /// Use the literal glutamine recycle term `−F_r/V1·([GLC]_1 − [GLN]_1)`
    /// instead of the recycle form shared by the other solutes.
    pub literal_gln_recycle: bool,
}

impl Default for UpstreamParams {
    fn default() -> Self {
        Self {
            k_d_amm: 1.76,
            k_d_gln: 0.00016,
            k_glc: 0.75,
            k_gln: 0.038,
            ki_amm: 28.48,
            ki_lac: 171.76,
            m_glc: 8.2e-16,
            q_mab_max: 1.1e-11,
            y_amm_gln: 0.45,
            y_lac_glc: 2.0,
            y_x_glc: 2.6e8,
            y_x_gln: 8.0e8,
            alpha1: 5.7e-15,
            alpha2: 4.0,
            minus_dh: 5.0e5,
            rho: 1560.0,
            c_p: 1.244,
            u: 4.0e2,
            t_in: 37.0,
            eta_rec: 0.92,
            eta_ret: 0.20,
            n_death: 2.0,
            ph_opt: 7.1,
            omega_mab: 0.2,
            gln_in: 4.0,
            literal_gln_recycle: false,
        }
    }
}

impl UpstreamParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            self.k_d_amm, self.k_d_gln, self.k_glc, self.k_gln, self.ki_amm, self.ki_lac,
            self.m_glc, self.q_mab_max, self.y_amm_gln, self.y_lac_glc, self.y_x_glc,
            self.y_x_gln, self.alpha1, self.alpha2, self.minus_dh, self.rho, self.c_p, self.u,
            self.t_in, self.eta_rec, self.eta_ret, self.ph_opt, self.omega_mab,
        ];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(SimError::InvalidArgument("upstream parameters must be positive".into()));
        }
        if !(self.n_death > 1.0) {
            return Err(SimError::InvalidArgument("death-law exponent must exceed 1".into()));
        }
        if !(self.gln_in >= 0.0) {
            return Err(SimError::InvalidArgument("media glutamine must be nonnegative".into()));
        }
        Ok(())
    }
}

pub const T_MIN: f64 = 33.0;
pub const T_MAX: f64 = 37.0;
/// Slack on the validated temperature range for rounding at the edges.
const T_SLACK: f64 = 1e-9;

/// Maximum specific growth rate at temperature `t` (°C), 1/min.
pub fn mu_max(t: f64) -> f64 {
    0.0016 * t - 0.0308
}

/// Maximum specific death rate at temperature `t` (°C), 1/min.
pub fn mu_d_max(t: f64) -> f64 {
    -0.0045 * t + 0.1682
}

/// Specific growth and death rates `(μ, μ_d)`.
pub fn growth_rates(
    glc: f64,
    gln: f64,
    lac: f64,
    amm: f64,
    t: f64,
    p: &UpstreamParams,
) -> Result<(f64, f64), SimError> {
    if !(T_MIN - T_SLACK..=T_MAX + T_SLACK).contains(&t) {
        return Err(SimError::TemperatureOutOfRange(t));
    }
    let t = t.clamp(T_MIN, T_MAX);
    let f_lim = glc / (p.k_glc + glc) * (gln / (p.k_gln + gln));
    let f_inh = p.ki_lac / (p.ki_lac + lac) * (p.ki_amm / (p.ki_amm + amm));
    let mu = mu_max(t) * f_lim * f_inh;
    let mu_d = if amm > 0.0 {
        mu_d_max(t) / (1.0 + (p.k_d_amm / amm).powf(p.n_death))
    } else {
        0.0
    };
    Ok((mu, mu_d))
}

/// Culture pH as a function of ammonia (mM).
pub fn ph_of_ammonia(amm: f64) -> f64 {
    7.1697 - (0.074028 * amm + 0.968385).log10()
}

/// Specific mAb productivity at the given ammonia level, mg/(cell·min).
pub fn mab_productivity(amm: f64, p: &UpstreamParams) -> f64 {
    let z = (ph_of_ammonia(amm) - p.ph_opt) / p.omega_mab;
    p.q_mab_max * (-0.5 * z * z).exp()
}

/// Harvest value of the objective: mAb leaving the bioreactor plus mAb
/// leaving the separator, mg/min.
pub fn economic_objective(state: &[f64], action: &[f64]) -> f64 {
    state[MAB1] * action[F_1] + state[MAB2] * action[F_2]
}

/// Time derivative of the 17 upstream states.
///
/// Recycle-stream concentrations follow the retention laws
/// `S_r = η·S_1·F_1/F_r`; the balances only need `F_r·S_r = η·S_1·F_1`, so
/// the recycle terms are formed from that product.
pub fn upstream_rhs(
    x: &[f64],
    a: &[f64],
    p: &UpstreamParams,
    out: &mut [f64],
) -> Result<(), SimError> {
    let (v1, v2) = (x[V1], x[V2]);
    if !(v1 > 1e-6) {
        return Err(SimError::DegenerateVolume(v1));
    }
    if !(v2 > 1e-6) {
        return Err(SimError::DegenerateVolume(v2));
    }
    let (f_in, f_r, f_1, f_2) = (a[F_IN], a[F_R], a[F_1], a[F_2]);
    if f_r == 0.0 && f_1 != 0.0 {
        return Err(SimError::ZeroRecycleFlow);
    }

    let (xv1, xt1, glc1, gln1, lac1, amm1, mab1, t) =
        (x[XV1], x[XT1], x[GLC1], x[GLN1], x[LAC1], x[AMM1], x[MAB1], x[TEMP]);
    let (mu, mu_d) = growth_rates(glc1, gln1, lac1, amm1, t, p)?;

    let d1 = f_in / v1;
    // Net recycle contribution (F_r·S_r − F_r·S_1)/V1 for retention factor `eta`.
    let recycle = |eta: f64, s1: f64| (eta * s1 * f_1 - f_r * s1) / v1;

    out[V1] = f_in + f_r - f_1;
    out[XV1] = (mu - mu_d) * xv1 - d1 * xv1 + recycle(p.eta_rec, xv1);
    out[XT1] = mu * xv1 - d1 * xt1 + recycle(p.eta_rec, xt1);

    let rho_cp = p.rho * p.c_p;
    let growth_heat = p.minus_dh / rho_cp * (mu * xv1 / AVOGADRO);
    let jacket = p.u / 60.0 / (v1 * rho_cp) * (a[T_C] - t);
    out[TEMP] = d1 * (p.t_in - t) + growth_heat + jacket;

    let q_glc = mu / p.y_x_glc + p.m_glc;
    out[GLC1] = -q_glc * xv1 + d1 * (a[GLC_IN] - glc1) + recycle(p.eta_ret, glc1);

    let m_gln = p.alpha1 * gln1 / (p.alpha2 + gln1);
    let q_gln = mu / p.y_x_gln + m_gln;
    let gln_recycle = if p.literal_gln_recycle {
        -f_r / v1 * (glc1 - gln1)
    } else {
        recycle(p.eta_ret, gln1)
    };
    out[GLN1] = -q_gln * xv1 - p.k_d_gln * gln1 + d1 * (p.gln_in - gln1) + gln_recycle;

    let q_lac = p.y_lac_glc * q_glc;
    out[LAC1] = q_lac * xv1 - d1 * lac1 + recycle(p.eta_ret, lac1);

    let q_amm = p.y_amm_gln * q_gln;
    out[AMM1] = q_amm * xv1 + p.k_d_gln * gln1 + d1 * (a[AMM_IN] - amm1) + recycle(p.eta_ret, amm1);

    out[MAB1] = xv1 * mab_productivity(amm1, p) - d1 * mab1 + recycle(p.eta_ret, mab1);

    out[V2] = f_1 - f_2 - f_r;
    // Separator: F_1/V2·(S_1 − S_2) − F_r/V2·(S_r − S_2).
    let separator = |eta: f64, s1: f64, s2: f64| (f_1 * (s1 - s2) - (eta * s1 * f_1 - f_r * s2)) / v2;
    out[XV2] = separator(p.eta_rec, xv1, x[XV2]);
    out[XT2] = separator(p.eta_rec, xt1, x[XT2]);
    out[GLC2] = separator(p.eta_ret, glc1, x[GLC2]);
    out[GLN2] = separator(p.eta_ret, gln1, x[GLN2]);
    out[LAC2] = separator(p.eta_ret, lac1, x[LAC2]);
    out[AMM2] = separator(p.eta_ret, amm1, x[AMM2]);
    out[MAB2] = separator(p.eta_ret, mab1, x[MAB2]);
    Ok(())
}

/// [`upstream_rhs`] as an ODE system over the first 7 inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpstreamModel {
    pub params: UpstreamParams,
}

impl OdeSystem for UpstreamModel {
    fn dim(&self) -> usize {
        UPSTREAM_DIM
    }
    fn rhs(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        upstream_rhs(x, u, &self.params, dx)
    }
}
