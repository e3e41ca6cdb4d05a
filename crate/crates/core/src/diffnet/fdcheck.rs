use std::collections::BTreeMap;

use super::graph::{grad, Graph, Var};
use super::tensor::ParamSet;
use crate::error::Result;

/// Absolute floor on the denominator of the relative error, so entries whose
/// true gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// Maximum relative error per parameter tensor.
    pub per_tensor: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub pass: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient of `build` to central differences
/// `(f(p+h) - f(p-h)) / 2h`, one coordinate at a time. Never fails on a
/// mismatch; the report carries the verdict.
pub fn finite_diff_check<F>(build: F, params: &ParamSet, h: f64, tol: f64) -> Result<FdReport>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<Var>,
{
    assert!(h > 0.0 && tol > 0.0, "step and tolerance must be positive");
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, p)?;
        Ok(g.scalar_value(loss))
    };
    let (_, analytic) = grad(params, &build)?;
    let analytic = analytic.to_param_set(params)?;
    let mut per_tensor = BTreeMap::new();
    let mut work = params.clone();
    for (name, tensor) in params.iter() {
        let a = analytic.get(name)?.data().to_vec();
        let mut worst = 0.0f64;
        for i in 0..tensor.len() {
            let orig = tensor.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + h;
            let fp = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - h;
            let fm = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(relative_error(a[i], numeric));
        }
        per_tensor.insert(name.clone(), worst);
    }
    let max_rel_error = per_tensor.values().copied().fold(0.0, f64::max);
    Ok(FdReport { per_tensor, max_rel_error, pass: max_rel_error <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{Activation, MlpSpec, Tensor};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::matrix(2, 2, vec![0.3, -1.2, 0.7, 2.0]).unwrap()).unwrap();
        let report = finite_diff_check(
            |g, p| {
                let x = g.input(ndarray::array![[1.0, -2.0]]);
                let w = g.param(p, "w")?;
                let y = g.matmul(x, w)?;
                let s = g.square(y);
                let s = g.sum(s);
                Ok(g.scale(s, 0.5))
            },
            &p,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert!(report.pass);
    }

    #[test]
    fn mlp_gaussian_logprob_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = MlpSpec::new(vec![3, 6, 4], Activation::Tanh);
        let mut p = ParamSet::new();
        spec.init(&mut p, "m.", &mut rng).unwrap();
        p.insert("rho", Tensor::vector((0..2).map(|_| rng.random_range(-0.5..0.5)).collect())).unwrap();
        let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let report = finite_diff_check(
            |g, p| {
                let xv = g.input(x.clone());
                let out = spec.graph(g, p, "m.", xv)?;
                let mean = g.slice_cols(out, 0, 2)?;
                let rho = g.param(p, "rho")?;
                let t = g.input(target.clone());
                let lp = g.gauss_logprob(t, mean, rho)?;
                Ok(g.mean(lp))
            },
            &p,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn zero_parameter_loss_is_vacuous_pass() {
        let report = finite_diff_check(|g, _| Ok(g.constant(3.0)), &ParamSet::new(), 1e-5, 1e-4).unwrap();
        assert!(report.per_tensor.is_empty());
        assert!(report.pass);
    }
}
