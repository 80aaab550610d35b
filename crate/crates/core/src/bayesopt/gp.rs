//! Gaussian-process regression with a squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BoError;

/// Diagonal jitter tried, in order, when the kernel matrix is not
/// numerically positive definite.
const JITTER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    /// One lengthscale per input dimension.
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GpHyper {
    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Self {
        Self { lengthscales: vec![lengthscale; dim], signal_variance, noise_variance }
    }

    fn valid(&self) -> bool {
        self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.signal_variance > 0.0
            && self.signal_variance.is_finite()
            && self.noise_variance >= 0.0
            && self.noise_variance.is_finite()
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).zip(&self.lengthscales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
        self.signal_variance * (-0.5 * r2).exp()
    }
}

/// Hyperparameter search settings. Bounds are in log space; the variance
/// bounds are relative to the sample variance of the targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub starts: usize,
    /// Fit one lengthscale per dimension instead of a shared one.
    pub ard: bool,
    pub lengthscale_range: (f64, f64),
    pub signal_range: (f64, f64),
    pub noise_range: (f64, f64),
    /// Coordinate-search step below which a start stops, in log units.
    pub min_step: f64,
    pub max_evaluations_per_start: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 50,
            ard: false,
            lengthscale_range: (1e-2, 1e1),
            signal_range: (1e-2, 1e2),
            noise_range: (1e-8, 1.0),
            min_step: 1e-2,
            max_evaluations_per_start: 200,
        }
    }
}

/// A GP conditioned on training data with fixed hyperparameters. The prior
/// mean is the sample mean of the targets.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: GpHyper,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    prior_mean: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize, BoError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(BoError::InvalidData("need matching, nonempty inputs and targets".into()));
    }
    let d = x[0].len();
    if x.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) || y.iter().any(|v| !v.is_finite()) {
        return Err(BoError::InvalidData("inputs must share a dimension and all values be finite".into()));
    }
    Ok(d)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Cholesky factor of `k + (noise + jitter) I` for the first jitter that works.
fn factor(k: &DMatrix<f64>, noise: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    JITTER.iter().find_map(|&j| {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += noise + j;
        }
        m.cholesky().map(|c| (c, j))
    })
}

impl GpModel {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, hyper: GpHyper) -> Result<Self, BoError> {
        let d = check_data(&x, &y)?;
        if hyper.lengthscales.len() != d || !hyper.valid() {
            return Err(BoError::InvalidData("hyperparameters must be positive and match the input dimension".into()));
        }
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| hyper.kernel(&x[i], &x[j]));
        let (chol, jitter) = factor(&k, hyper.noise_variance).ok_or(BoError::IllConditionedKernel)?;
        let prior_mean = mean(&y);
        let alpha = chol.solve(&DVector::from_iterator(n, y.iter().map(|v| v - prior_mean)));
        Ok(Self { hyper, x, y, prior_mean, chol, alpha, jitter })
    }

    /// Fits hyperparameters by maximising the log marginal likelihood with a
    /// seeded multi-start coordinate search, then conditions on the data.
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, opts: &FitOptions, seed: u64) -> Result<Self, BoError> {
        let d = check_data(&x, &y)?;
        let hyper = fit_hyperparameters(&x, &y, d, opts, seed)?;
        Self::new(x, y, hyper)
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    /// Diagonal jitter that was needed for the factorisation.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    /// Posterior mean and (latent, noise-free) variance at `q`.
    pub fn posterior(&self, q: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.hyper.kernel(xi, q)));
        let mean = self.prior_mean + ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("Cholesky factor has a nonzero diagonal");
        let var = (self.hyper.signal_variance - v.norm_squared()).max(0.0);
        (mean, var)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let r = DVector::from_iterator(self.y.len(), self.y.iter().map(|v| v - self.prior_mean));
        lml(&self.chol, &r)
    }
}

fn lml(chol: &Cholesky<f64, Dyn>, r: &DVector<f64>) -> f64 {
    let alpha = chol.solve(r);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * r.dot(&alpha) - log_det - 0.5 * r.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Log marginal likelihood of a residual under the kernel whose strict lower
/// triangle is `k` (row-major) and whose diagonal is `diag`, factoring into
/// `l`. `None` when the matrix is not numerically positive definite.
fn cholesky_lml(k: &[f64], diag: f64, r: &DVector<f64>, l: &mut [f64]) -> Option<f64> {
    let n = r.len();
    let mut log_det = 0.0;
    for i in 0..n {
        let (done, rest) = l.split_at_mut(i * n);
        let row = &mut rest[..n];
        for j in 0..i {
            let prev = &done[j * n..j * n + j];
            let s = k[i * n + j] - row[..j].iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
            row[j] = s / done[j * n + j];
        }
        let s = diag - row[..i].iter().map(|v| v * v).sum::<f64>();
        if !(s > 0.0) {
            return None;
        }
        row[i] = s.sqrt();
        log_det += row[i].ln();
    }
    // r' K⁻¹ r = |L⁻¹ r|².
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (r[i] - (0..i).map(|m| l[i * n + m] * z[m]).sum::<f64>()) / l[i * n + i];
    }
    let quad: f64 = z.iter().map(|v| v * v).sum();
    Some(-0.5 * quad - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Log-space parameter vector: lengthscales (one or `d`), signal and noise
/// variance.
struct Search<'a> {
    x: &'a [Vec<f64>],
    resid: DVector<f64>,
    d: usize,
    ard: bool,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Squared differences of every pair `j < i`, per dimension with ARD and
    /// summed otherwise, reused by every evaluation.
    diffs: Vec<f64>,
}

impl Search<'_> {
    fn hyper(&self, p: &[f64]) -> GpHyper {
        let n_l = p.len() - 2;
        let lengthscales = if self.ard { p[..n_l].iter().map(|v| v.exp()).collect() } else { vec![p[0].exp(); self.d] };
        GpHyper { lengthscales, signal_variance: p[n_l].exp(), noise_variance: p[n_l + 1].exp() }
    }

    fn objective(&self, p: &[f64]) -> f64 {
        let h = self.hyper(p);
        let n = self.x.len();
        let m = if self.ard { self.d } else { 1 };
        let inv_l2: Vec<f64> = h.lengthscales[..m].iter().map(|l| 1.0 / (l * l)).collect();
        let mut k = vec![0.0; n * n];
        let mut pairs = self.diffs.chunks_exact(m);
        for i in 0..n {
            for j in 0..i {
                let r2: f64 = pairs.next().unwrap_or_default().iter().zip(&inv_l2).map(|(d, w)| d * w).sum();
                k[i * n + j] = h.signal_variance * (-0.5 * r2).exp();
            }
        }
        let mut l = vec![0.0; n * n];
        JITTER
            .iter()
            .find_map(|&j| {
                let diag = h.signal_variance + h.noise_variance + j;
                cholesky_lml(&k, diag, &self.resid, &mut l)
            })
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// Compass search: try ± step along each coordinate, halve the step after
    /// a sweep without improvement.
    fn climb(&self, mut p: Vec<f64>, opts: &FitOptions) -> (Vec<f64>, f64) {
        let mut best = self.objective(&p);
        let mut evals = 1;
        let mut step: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(l, h)| 0.25 * (h - l)).collect();
        while evals < opts.max_evaluations_per_start && step.iter().any(|s| *s >= opts.min_step) {
            let mut improved = false;
            for i in 0..p.len() {
                for dir in [1.0, -1.0] {
                    if evals >= opts.max_evaluations_per_start {
                        break;
                    }
                    let mut trial = p.clone();
                    trial[i] = (p[i] + dir * step[i]).clamp(self.lo[i], self.hi[i]);
                    if trial[i] == p[i] {
                        continue;
                    }
                    let f = self.objective(&trial);
                    evals += 1;
                    if f > best {
                        best = f;
                        p = trial;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                for s in &mut step {
                    *s *= 0.5;
                }
            }
        }
        (p, best)
    }
}

fn fit_hyperparameters(x: &[Vec<f64>], y: &[f64], d: usize, opts: &FitOptions, seed: u64) -> Result<GpHyper, BoError> {
    if opts.starts == 0 {
        return Err(BoError::InvalidData("hyperparameter search needs at least one start".into()));
    }
    let m = mean(y);
    let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64;
    let scale = if var > 1e-12 { var } else { 1.0 };
    let n_l = if opts.ard { d } else { 1 };
    let mut lo = vec![opts.lengthscale_range.0.ln(); n_l];
    let mut hi = vec![opts.lengthscale_range.1.ln(); n_l];
    lo.extend([(opts.signal_range.0 * scale).ln(), (opts.noise_range.0 * scale).ln()]);
    hi.extend([(opts.signal_range.1 * scale).ln(), (opts.noise_range.1 * scale).ln()]);
    if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
        return Err(BoError::InvalidData("hyperparameter ranges must be positive and ordered".into()));
    }
    let n = x.len();
    let mut diffs = Vec::with_capacity(n * (n - 1) / 2 * n_l);
    for i in 0..n {
        for j in 0..i {
            let sq = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2));
            if opts.ard {
                diffs.extend(sq);
            } else {
                diffs.push(sq.sum());
            }
        }
    }
    let search = Search { x, resid: DVector::from_iterator(n, y.iter().map(|v| v - m)), d, ard: opts.ard, lo, hi, diffs };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in 0..opts.starts {
        let p0: Vec<f64> = if s == 0 {
            search.lo.iter().zip(&search.hi).map(|(l, h)| 0.5 * (l + h)).collect()
        } else {
            search.lo.iter().zip(&search.hi).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect()
        };
        let (p, f) = search.climb(p0, opts);
        if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
            best = Some((p, f));
        }
    }
    match best {
        Some((p, f)) if f.is_finite() => Ok(search.hyper(&p)),
        _ => Err(BoError::IllConditionedKernel),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0, (i * i) as f64 / 49.0]).collect();
        let y = x.iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
        (x, y)
    }

    #[test]
    fn interpolates_training_points_without_noise() {
        let (x, y) = toy();
        let gp = GpModel::new(x.clone(), y.clone(), GpHyper::isotropic(2, 0.4, 1.0, 0.0)).unwrap();
        for (p, t) in x.iter().zip(&y) {
            let (m, v) = gp.posterior(p);
            assert!((m - t).abs() < 1e-8, "{m} vs {t}");
            assert!(v <= 1e-8);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let (x, y) = toy();
        let gp = GpModel::new(x, y.clone(), GpHyper::isotropic(2, 0.3, 2.5, 1e-6)).unwrap();
        let (m, v) = gp.posterior(&[50.0, -40.0]);
        assert!((m - mean(&y)).abs() < 1e-12);
        assert!((v - 2.5).abs() < 0.01 * 2.5);
    }

    #[test]
    fn symmetric_pair_gives_average_at_midpoint() {
        let x = vec![vec![-0.3], vec![0.3]];
        let gp = GpModel::new(x, vec![1.0, 4.0], GpHyper::isotropic(1, 0.5, 1.0, 1e-4)).unwrap();
        let (m, _) = gp.posterior(&[0.0]);
        assert!((m - 2.5).abs() < 1e-12);
    }

    #[test]
    fn two_point_posterior_matches_closed_form() {
        // Independent 2x2 algebra: k* = s·e^{-a²/2ℓ²}, K = [[s+n, c],[c, s+n]].
        let (s, l, n, a) = (1.7, 0.6, 0.01, 0.4);
        let x = vec![vec![-a], vec![a]];
        let (y1, y2) = (0.5, -1.5);
        let gp = GpModel::new(x, vec![y1, y2], GpHyper::isotropic(1, l, s, n)).unwrap();
        let q = 0.1;
        let k1 = s * (-(q + a) * (q + a) / (2.0 * l * l)).exp();
        let k2 = s * (-(q - a) * (q - a) / (2.0 * l * l)).exp();
        let c = s * (-(2.0 * a) * (2.0 * a) / (2.0 * l * l)).exp();
        let det = (s + n) * (s + n) - c * c;
        let inv = [[(s + n) / det, -c / det], [-c / det, (s + n) / det]];
        let m0 = 0.5 * (y1 + y2);
        let r = [y1 - m0, y2 - m0];
        let mean = m0 + k1 * (inv[0][0] * r[0] + inv[0][1] * r[1]) + k2 * (inv[1][0] * r[0] + inv[1][1] * r[1]);
        let var = s - (k1 * (inv[0][0] * k1 + inv[0][1] * k2) + k2 * (inv[1][0] * k1 + inv[1][1] * k2));
        let (gm, gv) = gp.posterior(&[q]);
        assert!((gm - mean).abs() < 1e-12 && (gv - var).abs() < 1e-12);
    }

    #[test]
    fn duplicate_points_need_jitter_or_fail() {
        let x = vec![vec![0.5]; 3];
        let gp = GpModel::new(x, vec![1.0, 1.0, 1.0], GpHyper::isotropic(1, 1.0, 1.0, 0.0)).unwrap();
        assert!(gp.jitter() > 0.0 && gp.jitter() <= 1e-6);
        let big = vec![vec![0.5]; 2];
        let err = GpModel::new(big, vec![0.0, 1.0], GpHyper::isotropic(1, 1.0, 1e12, 0.0));
        assert!(matches!(err, Err(BoError::IllConditionedKernel)));
    }

    #[test]
    fn fitting_is_deterministic_and_improves_likelihood() {
        let (x, y) = toy();
        let opts = FitOptions { starts: 10, ..FitOptions::default() };
        let a = GpModel::fit(x.clone(), y.clone(), &opts, 3).unwrap();
        let b = GpModel::fit(x.clone(), y.clone(), &opts, 3).unwrap();
        assert_eq!(a.hyper(), b.hyper());
        let default = GpModel::new(x, y, GpHyper::isotropic(2, 1.0, 1.0, 1e-2)).unwrap();
        assert!(a.log_marginal_likelihood() >= default.log_marginal_likelihood());
    }

    #[test]
    fn ard_fit_runs() {
        let (x, y) = toy();
        let opts = FitOptions { starts: 3, ard: true, ..FitOptions::default() };
        let gp = GpModel::fit(x, y, &opts, 0).unwrap();
        assert_eq!(gp.hyper().lengthscales.len(), 2);
    }

    #[test]
    fn search_likelihood_matches_model() {
        let (x, y) = toy();
        let hyper = GpHyper::isotropic(2, 0.3, 0.8, 1e-3);
        let model = GpModel::new(x.clone(), y.clone(), hyper.clone()).unwrap();
        let n = x.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                k[i * n + j] = hyper.kernel(&x[i], &x[j]);
            }
        }
        let m = mean(&y);
        let r = DVector::from_iterator(n, y.iter().map(|v| v - m));
        let got = cholesky_lml(&k, 0.8 + 1e-3, &r, &mut vec![0.0; n * n]).unwrap();
        assert!((got - model.log_marginal_likelihood()).abs() < 1e-10);
        assert!(cholesky_lml(&k, -1.0, &r, &mut vec![0.0; n * n]).is_none());
    }

    #[test]
    fn rejects_bad_data() {
        assert!(GpModel::new(vec![], vec![], GpHyper::isotropic(1, 1.0, 1.0, 0.0)).is_err());
        assert!(GpModel::new(vec![vec![0.0]], vec![f64::NAN], GpHyper::isotropic(1, 1.0, 1.0, 0.0)).is_err());
        assert!(GpModel::new(vec![vec![0.0]], vec![1.0], GpHyper::isotropic(2, 1.0, 1.0, 0.0)).is_err());
    }
}
