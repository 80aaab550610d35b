use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::gp::{FitOptions, GpModel};
use super::BoError;

/// Closed-form expected improvement over `best` for maximisation.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let gap = mean - best;
    let sd = variance.max(0.0).sqrt();
    if sd == 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    let n = Normal::standard();
    (gap * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

/// Halton points in `[0, 1)^d` under a seeded Cranley-Patterson rotation.
/// `stream` selects an independent rotation, so each BO iteration sees a
/// fresh but reproducible candidate set.
pub fn candidates(dim: usize, count: usize, seed: u64, stream: u64) -> Vec<Vec<f64>> {
    let bases = primes(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    (1..=count)
        .map(|i| bases.iter().zip(&shift).map(|(&b, s)| (halton::number(b, i) + s).fract()).collect())
        .collect()
}

fn primes(n: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(n);
    let mut k: u16 = 2;
    while out.len() < n {
        if (2..k).take_while(|d| d * d <= k).all(|d| k % d != 0) {
            out.push(u8::try_from(k).expect("Halton bases are limited to primes below 256"));
        }
        k += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    pub seed: u64,
    /// Quasi-random candidates scored per proposal.
    pub candidates: usize,
    /// Random evaluations before the GP takes over.
    pub initial_random: usize,
    /// Most observations the GP is conditioned on. Half the window holds the
    /// best scores so far, the rest the most recent points.
    pub window: usize,
    pub fit: FitOptions,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self { seed: 0, candidates: 2048, initial_random: 10, window: 48, fit: FitOptions::default() }
    }
}

/// Ask/tell Bayesian optimiser over a box.
///
/// The GP works in unit-box coordinates. Its hyperparameters are refitted
/// once per observation (from two observations on) and stay fixed between
/// observations.
#[derive(Debug, Clone)]
pub struct BoState {
    low: Vec<f64>,
    high: Vec<f64>,
    points: Vec<Vec<f64>>,
    scores: Vec<f64>,
    best: Option<usize>,
    model: Option<GpModel>,
    fits: usize,
    cfg: BoConfig,
}

impl BoState {
    pub fn new(low: Vec<f64>, high: Vec<f64>, cfg: BoConfig) -> Result<Self, BoError> {
        if low.is_empty() || low.len() != high.len() || low.iter().zip(&high).any(|(l, h)| !(l < h) || !(h - l).is_finite()) {
            return Err(BoError::InvalidData("search box must be finite with low < high".into()));
        }
        if low.len() > 54 {
            return Err(BoError::InvalidData("at most 54 search dimensions are supported".into()));
        }
        if cfg.candidates == 0 || cfg.window < 2 {
            return Err(BoError::InvalidData("need candidates and a window of at least two points".into()));
        }
        Ok(Self { low, high, points: Vec::new(), scores: Vec::new(), best: None, model: None, fits: 0, cfg })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn config(&self) -> &BoConfig {
        &self.cfg
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Number of observations so far.
    pub fn iteration(&self) -> usize {
        self.points.len()
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.map(|i| self.scores[i])
    }

    pub fn best_point(&self) -> Option<&[f64]> {
        self.best.map(|i| self.points[i].as_slice())
    }

    pub fn model(&self) -> Option<&GpModel> {
        self.model.as_ref()
    }

    /// Hyperparameter fits performed so far.
    pub fn fits(&self) -> usize {
        self.fits
    }

    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.low.iter().zip(&self.high)).map(|(v, (l, h))| (v - l) / (h - l)).collect()
    }

    fn from_unit(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.low.iter().zip(&self.high)).map(|(v, (l, h))| (l + v * (h - l)).clamp(*l, *h)).collect()
    }

    /// Uniform draw in the box, seeded by the number of observations so far.
    pub fn random_point(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream((1 << 63) | self.points.len() as u64);
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.random::<f64>()).collect();
        self.from_unit(&z)
    }

    /// Random points during the initial phase, EI proposals afterwards.
    pub fn next_point(&self) -> Result<Vec<f64>, BoError> {
        if self.points.len() < self.cfg.initial_random.max(2) {
            Ok(self.random_point())
        } else {
            self.propose()
        }
    }

    /// Records an evaluation and refits the GP.
    pub fn observe(&mut self, x: Vec<f64>, score: f64) -> Result<(), BoError> {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) || !score.is_finite() {
            return Err(BoError::InvalidData("observation must be finite and match the box dimension".into()));
        }
        if self.best_score().is_none_or(|b| score > b) {
            self.best = Some(self.points.len());
        }
        self.points.push(x);
        self.scores.push(score);
        if self.points.len() >= 2 {
            let idx = self.window_indices();
            let xs = idx.iter().map(|&i| self.to_unit(&self.points[i])).collect();
            let ys = idx.iter().map(|&i| self.scores[i]).collect();
            let seed = self.cfg.seed ^ (self.points.len() as u64).rotate_left(32);
            self.model = Some(GpModel::fit(xs, ys, &self.cfg.fit, seed)?);
            self.fits += 1;
        }
        Ok(())
    }

    fn window_indices(&self) -> Vec<usize> {
        let n = self.points.len();
        if n <= self.cfg.window {
            return (0..n).collect();
        }
        let mut by_score: Vec<usize> = (0..n).collect();
        by_score.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        let mut keep: Vec<usize> = by_score[..self.cfg.window / 2].to_vec();
        for i in (0..n).rev() {
            if keep.len() == self.cfg.window {
                break;
            }
            if !keep.contains(&i) {
                keep.push(i);
            }
        }
        keep.sort_unstable();
        keep
    }

    /// Candidate with the largest expected improvement under the current
    /// model. Ties, including an all-zero EI surface, go to the lowest
    /// candidate index.
    pub fn propose(&self) -> Result<Vec<f64>, BoError> {
        let (Some(model), Some(best)) = (self.model.as_ref(), self.best_score()) else {
            return Err(BoError::NotEnoughData { needed: 2, have: self.points.len() });
        };
        let cands = candidates(self.dim(), self.cfg.candidates, self.cfg.seed, self.points.len() as u64);
        let i = argmax_ei(model, &cands, best);
        Ok(self.from_unit(&cands[i]))
    }

    /// Writes `iteration,x_0..,score,best` rows, one per observation.
    pub fn write_log<W: Write>(&self, out: W) -> Result<(), BoError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header = vec!["iteration".to_string()];
        header.extend((0..self.dim()).map(|i| format!("x_{i}")));
        header.extend(["score".into(), "best".into()]);
        w.write_record(&header)?;
        let mut best = f64::NEG_INFINITY;
        for (k, (x, s)) in self.points.iter().zip(&self.scores).enumerate() {
            best = best.max(*s);
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| format!("{v:.16e}")));
            row.extend([format!("{s:.16e}"), format!("{best:.16e}")]);
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Index of the largest EI; strict comparison keeps the first maximiser.
pub fn argmax_ei(model: &GpModel, cands: &[Vec<f64>], best: f64) -> usize {
    let mut arg = 0;
    let mut top = f64::NEG_INFINITY;
    for (i, c) in cands.iter().enumerate() {
        let (m, v) = model.posterior(c);
        let ei = expected_improvement(m, v, best);
        if ei > top {
            top = ei;
            arg = i;
        }
    }
    arg
}
