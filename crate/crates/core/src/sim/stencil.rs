use serde::{Deserialize, Serialize};

use super::SimError;

/// Uniform cell-centred axial grid, optionally with spherical particle shells.
///
/// Cell `j` is centred at `(j + 1/2)·dz`. `n_radial = 0` means no particle grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub n_axial: usize,
    pub length: f64,
    pub n_radial: usize,
    /// Total unit volume; `cell_volume = volume / n_axial`.
    pub volume: f64,
}

impl SpatialGrid {
    pub fn new(n_axial: usize, length: f64, n_radial: usize, volume: f64) -> Result<Self, SimError> {
        let grid = Self { n_axial, length, n_radial, volume };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_axial < 3 {
            return Err(SimError::InvalidArgument(format!(
                "n_axial must be at least 3, got {}",
                self.n_axial
            )));
        }
        if self.n_radial == 1 {
            return Err(SimError::InvalidArgument(
                "n_radial must be 0 (unused) or at least 2".into(),
            ));
        }
        if !(self.length > 0.0) || !(self.volume > 0.0) {
            return Err(SimError::InvalidArgument(format!(
                "length and volume must be positive, got {} and {}",
                self.length, self.volume
            )));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> f64 {
        self.length / self.n_axial as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.volume / self.n_axial as f64
    }

    pub fn cross_section(&self) -> f64 {
        self.volume / self.length
    }

    /// Cell-centre coordinates.
    pub fn centers(&self) -> Vec<f64> {
        let dz = self.cell_size();
        (0..self.n_axial).map(|j| (j as f64 + 0.5) * dz).collect()
    }
}

/// First-order upwind approximation of `-u ∂c/∂z` for `u >= 0`.
///
/// The upstream neighbour of cell 0 is `inlet_value`; inlet boundary
/// physics is left to the caller.
pub fn upwind_convection(grid: &SpatialGrid, c: &[f64], velocity: f64, inlet_value: f64) -> Vec<f64> {
    let dz = grid.cell_size();
    let mut out = vec![0.0; c.len()];
    if velocity == 0.0 {
        return out;
    }
    let mut upstream = inlet_value;
    for (o, &cj) in out.iter_mut().zip(c) {
        *o = -velocity * (cj - upstream) / dz;
        upstream = cj;
    }
    out
}

/// Second-order central approximation of `D ∂²c/∂z²`.
///
/// Both ends use a mirrored ghost node (zero gradient); callers needing a
/// different inlet condition handle cell 0 themselves.
pub fn central_dispersion(grid: &SpatialGrid, c: &[f64], d_ax: f64) -> Vec<f64> {
    let n = c.len();
    let mut out = vec![0.0; n];
    if d_ax == 0.0 || n == 0 {
        return out;
    }
    let k = d_ax / (grid.cell_size() * grid.cell_size());
    for j in 0..n {
        let left = if j == 0 { c[0] } else { c[j - 1] };
        let right = if j + 1 == n { c[n - 1] } else { c[j + 1] };
        out[j] = k * (left - 2.0 * c[j] + right);
    }
    out
}

/// Solves the Danckwerts (Robin) inlet condition
/// `D (c0 - g)/dz = u ((c0 + g)/2 - c_feed)` for the ghost value `g`.
///
/// Returns `(ghost, face)` where `face = (c0 + g)/2` is the inlet face value.
pub fn danckwerts_face(c0: f64, c_feed: f64, velocity: f64, d_ax: f64, dz: f64) -> (f64, f64) {
    let a = d_ax / dz;
    let denom = a + 0.5 * velocity;
    if denom == 0.0 {
        return (c0, c0);
    }
    let ghost = (c0 * (a - 0.5 * velocity) + velocity * c_feed) / denom;
    (ghost, 0.5 * (c0 + ghost))
}

/// Finite-volume convection-dispersion `D c_zz - u c_z` with a Danckwerts
/// inlet at `z = 0` and zero-gradient outlet at `z = L`.
///
/// Interior faces use upwind convection and central dispersion. At the inlet
/// face the Robin ghost value is used for the dispersive flux and the face
/// value for the convective flux, which makes the inlet flux exactly
/// `u·c_feed`. The outlet flux is `u·c[n-1]`.
pub fn convect_disperse(
    grid: &SpatialGrid,
    c: &[f64],
    velocity: f64,
    d_ax: f64,
    c_feed: f64,
    out: &mut [f64],
) {
    let n = c.len();
    let dz = grid.cell_size();
    let inv_dz = 1.0 / dz;
    let (ghost, face) = danckwerts_face(c[0], c_feed, velocity, d_ax, dz);
    let mut flux_in = velocity * face - d_ax * (c[0] - ghost) * inv_dz;
    for j in 0..n {
        let flux_out = if j + 1 == n {
            velocity * c[j]
        } else {
            velocity * c[j] - d_ax * (c[j + 1] - c[j]) * inv_dz
        };
        out[j] = (flux_in - flux_out) * inv_dz;
        flux_in = flux_out;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> SpatialGrid {
        SpatialGrid::new(n, 1.0, 0, 1.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(SpatialGrid::new(2, 1.0, 0, 1.0).is_err());
        assert!(SpatialGrid::new(3, 1.0, 1, 1.0).is_err());
        assert!(SpatialGrid::new(3, 0.0, 0, 1.0).is_err());
        let g = SpatialGrid::new(40, 20.0, 8, 1e5).unwrap();
        assert!((g.cell_size() * g.n_axial as f64 - g.length).abs() < 1e-12);
        assert!((g.cell_volume() * 40.0 - 1e5).abs() < 1e-9);
    }

    #[test]
    fn upwind_flat_profile_is_zero_inside() {
        let g = grid(10);
        let out = upwind_convection(&g, &[3.0; 10], 2.0, 0.0);
        assert!(out[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn upwind_linear_profile_matches_slope() {
        let g = grid(20);
        let c: Vec<f64> = g.centers().iter().map(|z| 2.0 * z).collect();
        let out = upwind_convection(&g, &c, 1.0, 0.0);
        for v in &out[1..] {
            assert!((v + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn upwind_zero_velocity() {
        let g = grid(5);
        let out = upwind_convection(&g, &[1.0, 5.0, 2.0, 0.0, 9.0], 0.0, 4.0);
        assert_eq!(out, vec![0.0; 5]);
    }

    #[test]
    fn dispersion_of_linear_and_quadratic() {
        let g = grid(16);
        let z = g.centers();
        let lin: Vec<f64> = z.iter().map(|z| 3.0 * z + 1.0).collect();
        let out = central_dispersion(&g, &lin, 1.0);
        assert!(out[1..15].iter().all(|v| v.abs() < 1e-9));
        let quad: Vec<f64> = z.iter().map(|z| z * z).collect();
        let out = central_dispersion(&g, &quad, 1.0);
        assert!(out[1..15].iter().all(|v| (v - 2.0).abs() < 1e-8));
        assert_eq!(central_dispersion(&g, &quad, 0.0), vec![0.0; 16]);
    }

    fn interior_error(n: usize, upwind: bool) -> f64 {
        let g = grid(n);
        let z = g.centers();
        let c: Vec<f64> = z.iter().map(|z| (2.0 * z).sin()).collect();
        let (approx, exact): (Vec<f64>, Vec<f64>) = if upwind {
            let a = upwind_convection(&g, &c, 1.0, 0.0);
            (a, z.iter().map(|z| -2.0 * (2.0 * z).cos()).collect())
        } else {
            let a = central_dispersion(&g, &c, 1.0);
            (a, z.iter().map(|z| -4.0 * (2.0 * z).sin()).collect())
        };
        (1..n - 1).map(|j| (approx[j] - exact[j]).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn refinement_rates() {
        let up = interior_error(40, true) / interior_error(80, true);
        let cd = interior_error(40, false) / interior_error(80, false);
        assert!(up >= 1.9, "upwind ratio {up}");
        assert!(cd >= 3.8, "central ratio {cd}");
    }

    #[test]
    fn danckwerts_limits() {
        // No dispersion: the face takes the feed value.
        let (_, face) = danckwerts_face(0.3, 1.0, 2.0, 0.0, 0.1);
        assert!((face - 1.0).abs() < 1e-15);
        // No flow: zero-gradient.
        let (ghost, _) = danckwerts_face(0.3, 1.0, 0.0, 1.0, 0.1);
        assert_eq!(ghost, 0.3);
    }

    #[test]
    fn convect_disperse_conserves_mass() {
        let g = SpatialGrid::new(25, 2.0, 0, 1.0).unwrap();
        let c: Vec<f64> = (0..25).map(|j| (j as f64 * 0.37).cos().abs()).collect();
        let mut out = vec![0.0; 25];
        let (u, feed) = (1.3, 0.8);
        convect_disperse(&g, &c, u, 0.4, feed, &mut out);
        let accumulation: f64 = out.iter().sum::<f64>() * g.cell_size();
        let net_flux = u * feed - u * c[24];
        assert!((accumulation - net_flux).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn stencils_are_linear(
            c1 in proptest::collection::vec(-10.0f64..10.0, 12),
            c2 in proptest::collection::vec(-10.0f64..10.0, 12),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let g = grid(12);
            let mix: Vec<f64> = c1.iter().zip(&c2).map(|(x, y)| a * x + b * y).collect();
            let checks = [
                (upwind_convection(&g, &mix, 1.7, 0.0),
                 upwind_convection(&g, &c1, 1.7, 0.0),
                 upwind_convection(&g, &c2, 1.7, 0.0)),
                (central_dispersion(&g, &mix, 0.6),
                 central_dispersion(&g, &c1, 0.6),
                 central_dispersion(&g, &c2, 0.6)),
            ];
            for (m, o1, o2) in checks {
                for j in 0..12 {
                    let expect = a * o1[j] + b * o2[j];
                    prop_assert!((m[j] - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
                }
            }
        }
    }
}
