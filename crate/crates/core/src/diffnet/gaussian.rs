use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `0.5 * ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
/// `0.5 * ln(2πe)`
pub const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

pub const STD_MIN: f64 = 1e-3;
pub const STD_MAX: f64 = 10.0;

pub fn log_std_min() -> f64 {
    STD_MIN.ln()
}

pub fn log_std_max() -> f64 {
    STD_MAX.ln()
}

pub fn clamp_log_std(ls: f64) -> f64 {
    ls.clamp(log_std_min(), log_std_max())
}

/// Diagonal Gaussian with strictly positive standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Config(format!(
                "mean has {} dims but std has {}",
                mean.len(),
                std.len()
            )));
        }
        if let Some(s) = std.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Domain(format!("standard deviation must be positive, got {s}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Domain("mean must be finite".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn from_log_std(mean: Vec<f64>, log_std: &[f64]) -> Result<Self> {
        Self::new(mean, log_std.iter().map(|l| l.exp()).collect())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Config(format!(
                "point has {} dims, distribution has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| {
                let u = (x - m) / s;
                -HALF_LN_2PI - s.ln() - 0.5 * u * u
            })
            .sum())
    }

    pub fn entropy(&self) -> f64 {
        self.std.iter().map(|s| HALF_LN_2PI_E + s.ln()).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let e: f64 = rng.sample(StandardNormal);
                m + s * e
            })
            .collect()
    }
}

pub fn gaussian_logprob(dist: &DiagGaussian, x: &[f64]) -> Result<f64> {
    dist.log_prob(x)
}

pub fn gaussian_entropy(dist: &DiagGaussian) -> f64 {
    dist.entropy()
}
