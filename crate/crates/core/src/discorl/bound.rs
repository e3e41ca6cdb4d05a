use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffnet::{HALF_LN_2PI, HALF_LN_2PI_E};
use crate::error::{config_err, Error, Result};
use crate::linalg::to_dmatrix;
use crate::synergy::{ActionDecoder, Discriminator, SynergyModel, TaskPolicy};

/// A conditional density `q(z | a)` evaluated row-wise.
pub trait LatentPosterior {
    fn log_q(&self, a: &Array2<f64>, z: &Array2<f64>) -> Result<Vec<f64>>;
}

impl LatentPosterior for Discriminator {
    fn log_q(&self, a: &Array2<f64>, z: &Array2<f64>) -> Result<Vec<f64>> {
        self.logprob_batch(a, z)
    }
}

/// Exact posterior of a linear-Gaussian model `z ~ N(μ, diag σz²)`,
/// `a = z φ + ε`, `ε ~ N(0, diag σa²)`.
#[derive(Clone, Debug)]
pub struct GaussianPosterior {
    /// `Σ φ Σa⁻¹`, mapping an action to its contribution to the posterior mean.
    gain: DMatrix<f64>,
    /// `Σ Σz⁻¹ μ`.
    offset: DVector<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianPosterior {
    pub fn optimal(mu_z: &[f64], std_z: &[f64], phi: &Array2<f64>, std_a: &[f64]) -> Result<Self> {
        let (b, d) = phi.dim();
        if mu_z.len() != b || std_z.len() != b || std_a.len() != d {
            return config_err("posterior dimensions do not match φ");
        }
        let phi = to_dmatrix(phi);
        let inv_a = DMatrix::from_diagonal(&DVector::from_iterator(d, std_a.iter().map(|s| 1.0 / (s * s))));
        let inv_z = DMatrix::from_diagonal(&DVector::from_iterator(b, std_z.iter().map(|s| 1.0 / (s * s))));
        let precision = &inv_z + &phi * &inv_a * phi.transpose();
        let chol = precision.clone().cholesky().ok_or_else(|| Error::Domain("posterior precision is not SPD".into()))?;
        let cov = chol.inverse();
        let gain = &cov * &phi * &inv_a;
        let offset = &cov * (&inv_z * DVector::from_column_slice(mu_z));
        // log det Σ = -log det Λ
        let log_det_precision: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_norm = -(b as f64) * HALF_LN_2PI + 0.5 * log_det_precision;
        Ok(Self { gain, offset, precision, log_norm })
    }
}

impl LatentPosterior for GaussianPosterior {
    fn log_q(&self, a: &Array2<f64>, z: &Array2<f64>) -> Result<Vec<f64>> {
        let b = self.offset.len();
        if z.ncols() != b || a.ncols() != self.gain.ncols() || a.nrows() != z.nrows() {
            return config_err("posterior input dimensions do not match");
        }
        let mut out = Vec::with_capacity(a.nrows());
        for (ar, zr) in a.rows().into_iter().zip(z.rows()) {
            let av = DVector::from_iterator(ar.len(), ar.iter().copied());
            let mean = &self.offset + &self.gain * av;
            let diff = DVector::from_iterator(b, zr.iter().copied()) - mean;
            let q = (diff.transpose() * &self.precision * &diff)[(0, 0)];
            out.push(self.log_norm - 0.5 * q);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundGap {
    /// Monte Carlo estimate of `H[π(a|s,n)]`; absent for nonlinear decoders.
    pub lhs: Option<f64>,
    /// Monte Carlo estimate of `H_z + E[H_a] + E[log q(z|a)]`.
    pub rhs: f64,
    pub gap: Option<f64>,
    /// Standard error of `gap` (of `rhs` when the gap is unavailable).
    pub stderr: f64,
    pub samples: usize,
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Both sides of `H[π(a|s,n)] ≥ H(π_z) + E[H(p_a)] + E[log q(z|a)]`,
/// estimated from `samples` joint draws per state. For a linear decoder the
/// action marginal is exactly Gaussian, `N(μ φ, φᵀ Σz φ + Σa)`, so the left
/// side uses the exact log-density at each sample and the gap is averaged per
/// sample.
pub fn entropy_bound_gap(
    policy: &TaskPolicy,
    model: &SynergyModel,
    posterior: &dyn LatentPosterior,
    states: &[Vec<f64>],
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<BoundGap> {
    if samples < 1000 {
        return config_err(format!("entropy bound needs at least 1000 samples, got {samples}"));
    }
    if states.is_empty() {
        return config_err("entropy bound needs at least one state");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d) = (model.b, model.d);
    let ls_a = model.log_std();
    let std_a: Vec<f64> = ls_a.iter().map(|l| l.exp()).collect();
    let ha: f64 = ls_a.iter().map(|l| HALF_LN_2PI_E + l).sum();
    let phi = model.phi();
    let mut lhs_all = Vec::new();
    let mut rhs_all = Vec::new();
    for s in states {
        let obs = Array2::from_shape_vec((1, s.len()), s.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let (mean, ls) = policy.head_outputs(&obs, n)?;
        let mu: Vec<f64> = mean.row(0).to_vec();
        let std_z: Vec<f64> = ls.row(0).iter().map(|l| l.exp()).collect();
        let hz: f64 = ls.row(0).iter().map(|l| HALF_LN_2PI_E + l).sum();
        let z = Array2::from_shape_fn((samples, b), |(_, j)| mu[j] + std_z[j] * rng.sample::<f64, _>(StandardNormal));
        let mut a = model.decode_mean_batch(&z)?;
        for v in a.iter_mut().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            *v.1 += std_a[v.0 % d] * eps;
        }
        let lq = posterior.log_q(&a, &z)?;
        rhs_all.extend(lq.iter().map(|l| hz + ha + l));
        if let Some(phi) = &phi {
            let phi_m = to_dmatrix(phi);
            let sz = DMatrix::from_diagonal(&DVector::from_iterator(b, std_z.iter().map(|s| s * s)));
            let sa = DMatrix::from_diagonal(&DVector::from_iterator(d, std_a.iter().map(|s| s * s)));
            let cov = phi_m.transpose() * sz * &phi_m + sa;
            let chol = cov.cholesky().ok_or_else(|| Error::Domain("action covariance is not SPD".into()))?;
            let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            let mean_a = phi_m.transpose() * DVector::from_column_slice(&mu);
            for row in a.rows() {
                let diff = DVector::from_iterator(d, row.iter().copied()) - &mean_a;
                let sol = chol.solve(&diff);
                let maha = diff.dot(&sol);
                lhs_all.push(d as f64 * HALF_LN_2PI + 0.5 * log_det + 0.5 * maha);
            }
        }
    }
    let (rhs, rhs_se) = mean_and_stderr(&rhs_all);
    if lhs_all.is_empty() {
        return Ok(BoundGap { lhs: None, rhs, gap: None, stderr: rhs_se, samples: rhs_all.len() });
    }
    let diffs: Vec<f64> = lhs_all.iter().zip(&rhs_all).map(|(l, r)| l - r).collect();
    let (gap, se) = mean_and_stderr(&diffs);
    let lhs = lhs_all.iter().sum::<f64>() / lhs_all.len() as f64;
    Ok(BoundGap { lhs: Some(lhs), rhs, gap: Some(gap), stderr: se, samples: rhs_all.len() })
}
