use ndarray::{Array1, Array2, Axis};

use super::dataset::ActionDataset;
use crate::diffnet::{Checkpoint, ParamSet, Tensor};
use crate::error::{config_err, Result};
use crate::linalg::{self, to_dmatrix};
use crate::synergy::ActionDecoder;

pub const PCA_COMPONENTS: &str = "pca.components";
pub const PCA_MEAN: &str = "pca.mean";
pub const PCA_EIGENVALUES: &str = "pca.eigenvalues";

/// Relative singular-value cutoff below which a direction counts as absent.
const RANK_TOL: f64 = 1e-10;

/// Linear synergies from principal component analysis. Decoding adds the
/// data mean back: `a = z · components + mean`.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    /// `b × d`, orthonormal rows.
    pub components: Array2<f64>,
    pub mean: Vec<f64>,
    /// All `d` covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: f64,
    /// The data has fewer than `b` non-degenerate directions.
    pub rank_deficient: bool,
}

/// Centres the data, takes its SVD and keeps the top `b` right singular
/// vectors.
pub fn pca_fit(data: &ActionDataset, b: usize) -> Result<PcaModel> {
    let (n, d) = data.rows.dim();
    if n <= d {
        return config_err(format!("PCA needs more rows than dimensions ({n} rows, d = {d})"));
    }
    if b == 0 || b > d {
        return config_err(format!("PCA needs 1 <= b <= d = {d}, got {b}"));
    }
    let mean = Array1::from(data.mean.clone());
    let centred = &data.rows - &mean.view().insert_axis(Axis(0));
    let svd = to_dmatrix(&centred).svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut eigenvalues: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2) / n as f64).collect();
    eigenvalues.resize(d, 0.0);
    let mut components = Array2::from_shape_fn((b, d), |(r, c)| v_t[(order[r], c)]);
    linalg::canonical_signs(&mut components);
    let total: f64 = eigenvalues.iter().sum();
    let explained_ratio = if total > 0.0 { eigenvalues[..b].iter().sum::<f64>() / total } else { 1.0 };
    let top = svd.singular_values[order[0]];
    let rank_deficient = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * top.max(f64::MIN_POSITIVE)).count() < b;
    Ok(PcaModel { components, mean: data.mean.clone(), eigenvalues, explained_ratio, rank_deficient })
}

impl PcaModel {
    pub fn b(&self) -> usize {
        self.components.nrows()
    }

    pub fn d(&self) -> usize {
        self.components.ncols()
    }

    /// Coordinates of `a` in the component basis.
    pub fn project(&self, a: &Array2<f64>) -> Array2<f64> {
        let mean = Array1::from(self.mean.clone());
        (a - &mean.view().insert_axis(Axis(0))).dot(&self.components.t())
    }

    pub fn reconstruct(&self, a: &Array2<f64>) -> Array2<f64> {
        self.decode(&self.project(a))
    }

    fn decode(&self, z: &Array2<f64>) -> Array2<f64> {
        let mean = Array1::from(self.mean.clone());
        z.dot(&self.components) + &mean.view().insert_axis(Axis(0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = ParamSet::new();
        let (b, d) = self.components.dim();
        let comps = Tensor::matrix(b, d, self.components.iter().copied().collect()).expect("shape");
        params.insert(PCA_COMPONENTS, comps).expect("fresh");
        params.insert(PCA_MEAN, Tensor::vector(self.mean.clone())).expect("fresh");
        params.insert(PCA_EIGENVALUES, Tensor::vector(self.eigenvalues.clone())).expect("fresh");
        Checkpoint::new(params)
            .with_meta("kind", "pca")
            .with_meta("explained_ratio", self.explained_ratio)
            .with_meta("rank_deficient", self.rank_deficient)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let components = ck.params.get(PCA_COMPONENTS)?.to_array();
        let mean = ck.params.get(PCA_MEAN)?.data().to_vec();
        let eigenvalues = ck.params.get(PCA_EIGENVALUES)?.data().to_vec();
        if mean.len() != components.ncols() {
            return config_err("PCA mean does not match the component width");
        }
        let total: f64 = eigenvalues.iter().sum();
        let b = components.nrows();
        let explained_ratio = if total > 0.0 { eigenvalues[..b].iter().sum::<f64>() / total } else { 1.0 };
        let rank_deficient = ck.meta.get("rank_deficient").and_then(|v| v.as_bool()).unwrap_or(false);
        Ok(Self { components, mean, eigenvalues, explained_ratio, rank_deficient })
    }
}

impl ActionDecoder for PcaModel {
    fn latent_dim(&self) -> usize {
        self.b()
    }

    fn action_dim(&self) -> usize {
        self.d()
    }

    fn decode_mean_batch(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.b() {
            return config_err(format!("latent has {} dims, PCA decoder expects {}", z.ncols(), self.b()));
        }
        Ok(self.decode(z))
    }

    fn fingerprint(&self) -> String {
        self.to_checkpoint().digest()
    }
}

/// Outcome of [`explained_variance`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExplainedVariance {
    /// `1 − ‖A − Â‖² / ‖A − mean(A)‖²`; NaN when the data has no variance.
    pub ratio: f64,
    pub zero_variance: bool,
}

/// Fraction of the variance of `a` captured by the reconstruction `a_hat`.
pub fn explained_variance(a: &Array2<f64>, a_hat: &Array2<f64>) -> Result<ExplainedVariance> {
    if a.dim() != a_hat.dim() {
        return config_err("reconstruction shape differs from the data");
    }
    let n = a.nrows().max(1) as f64;
    let mean = a.sum_axis(Axis(0)) / n;
    let total: f64 = (a - &mean.view().insert_axis(Axis(0))).mapv(|v| v * v).sum();
    let resid: f64 = (a - a_hat).mapv(|v| v * v).sum();
    if total == 0.0 {
        return Ok(ExplainedVariance { ratio: f64::NAN, zero_variance: true });
    }
    Ok(ExplainedVariance { ratio: 1.0 - resid / total, zero_variance: false })
}

/// Explained variance of a PCA model on a dataset, via reconstruction.
pub fn pca_explained_variance(model: &PcaModel, data: &ActionDataset) -> Result<ExplainedVariance> {
    explained_variance(&data.rows, &model.reconstruct(&data.rows))
}

/// Explained variance of actions by latents for a deterministic decoder:
/// `Â` is the least-squares affine regression of `a` on `z`.
pub fn latent_explained_variance(z: &Array2<f64>, a: &Array2<f64>) -> Result<ExplainedVariance> {
    if z.nrows() != a.nrows() {
        return config_err("latent and action row counts differ");
    }
    explained_variance(a, &linalg::affine_fit(z, a))
}
