use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ConfigError;

/// An axis-aligned box `low <= x <= high`.
///
/// In JSON an unbounded side is written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct ContinuousSpace {
    low: Vec<f64>,
    high: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    low: Vec<Option<f64>>,
    high: Vec<Option<f64>>,
}

impl TryFrom<RawSpace> for ContinuousSpace {
    type Error = ConfigError;
    fn try_from(raw: RawSpace) -> Result<Self, Self::Error> {
        let low = raw.low.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect();
        let high = raw.high.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
        Self::new(low, high)
    }
}

impl From<ContinuousSpace> for RawSpace {
    fn from(s: ContinuousSpace) -> Self {
        let wrap = |v: Vec<f64>| v.into_iter().map(|x| x.is_finite().then_some(x)).collect();
        RawSpace { low: wrap(s.low), high: wrap(s.high) }
    }
}

impl ContinuousSpace {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self, ConfigError> {
        if low.len() != high.len() {
            return Err(ConfigError::Invalid(format!(
                "bounds have lengths {} and {}",
                low.len(),
                high.len()
            )));
        }
        if let Some(i) = (0..low.len()).find(|&i| !(low[i] <= high[i])) {
            return Err(ConfigError::Invalid(format!(
                "bound {i}: low {} exceeds high {}",
                low[i], high[i]
            )));
        }
        Ok(Self { low, high })
    }

    /// Every component unbounded from below by `low` and above by `+inf`.
    pub fn lower_bounded(low: Vec<f64>) -> Self {
        let high = vec![f64::INFINITY; low.len()];
        Self { low, high }
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

    /// Membership test; NaN is never contained.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.low.iter().zip(&self.high)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Uniform sample from the box. Degenerate or unbounded axes return `low`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        sample_box(rng, &self.low, &self.high)
    }

    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect()
    }

    /// Maps `x` into `[0, 1]` per component (finite bounds only).
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(v, (l, h))| if h > l { (v - l) / (h - l) } else { 0.0 })
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(v, (l, h))| l + v * (h - l))
            .collect()
    }
}

/// Draws each component uniformly from `[low_i, high_i]`.
pub fn sample_box<R: Rng + ?Sized>(rng: &mut R, low: &[f64], high: &[f64]) -> Vec<f64> {
    low.iter()
        .zip(high)
        .map(|(&l, &h)| {
            if h > l && (h - l).is_finite() {
                l + (h - l) * rng.random::<f64>()
            } else {
                l
            }
        })
        .collect()
}

/// `nominal ± fraction·|nominal|`, as `(low, high)`.
pub fn box_around(nominal: &[f64], fraction: f64) -> (Vec<f64>, Vec<f64>) {
    let low = nominal.iter().map(|v| v - fraction * v.abs()).collect();
    let high = nominal.iter().map(|v| v + fraction * v.abs()).collect();
    (low, high)
}
