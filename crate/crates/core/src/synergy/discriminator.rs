use ndarray::Array2;
use rand::Rng;

use super::decoder::INIT_STD;
use super::policy::{row_logprob, NetConfig};
use crate::diffnet::{
    clamp_log_std, log_std_max, log_std_min, Adam, Checkpoint, Graph, MlpSpec, ParamSet, Tensor,
};
use crate::error::{config_err, Error, Result};

pub const DISC_NET: &str = "disc.net.";
pub const DISC_LOG_STD: &str = "disc.log_std";

/// Halvings tried when an epoch would increase the batch NLL.
pub const DISC_RETRIES: usize = 3;

/// Gaussian regressor `q(z | a)` with a global log-std vector.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub b: usize,
    pub d: usize,
    pub spec: MlpSpec,
    pub params: ParamSet,
    adam: Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscUpdateReport {
    pub nll_before: f64,
    pub nll_after: f64,
    /// Epochs whose step was kept (possibly after halving the rate).
    pub accepted_epochs: usize,
    /// Whether an epoch was rejected outright, ending the update.
    pub rejected: bool,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(b: usize, d: usize, net: &NetConfig, rng: &mut R) -> Result<Self> {
        Self::with_spec(net.spec(d, b), INIT_STD.ln(), rng)
    }

    /// Builds a discriminator with an explicit network shape and initial log-std.
    pub fn with_spec<R: Rng + ?Sized>(spec: MlpSpec, log_std: f64, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (d, b) = (spec.input_dim(), spec.output_dim());
        let mut params = ParamSet::new();
        spec.init(&mut params, DISC_NET, rng)?;
        params.insert(DISC_LOG_STD, Tensor::vector(vec![log_std; b]))?;
        Ok(Self { b, d, spec, params, adam: Adam::new() })
    }

    pub fn log_std(&self) -> Vec<f64> {
        self.params.get(DISC_LOG_STD).expect("disc log-std").data().iter().map(|&l| clamp_log_std(l)).collect()
    }

    /// Posterior means for a batch of actions.
    pub fn mean_batch(&self, a: &Array2<f64>) -> Result<Array2<f64>> {
        if a.ncols() != self.d {
            return config_err(format!("discriminator expects {}-dim actions, got {}", self.d, a.ncols()));
        }
        self.spec.forward_batch(&self.params, DISC_NET, a)
    }

    /// `log q(z | a)` for each row pair.
    pub fn logprob_batch(&self, a: &Array2<f64>, z: &Array2<f64>) -> Result<Vec<f64>> {
        if z.ncols() != self.b || z.nrows() != a.nrows() {
            return config_err(format!(
                "discriminator expects {} latents of dim {}, got {:?}",
                a.nrows(),
                self.b,
                z.dim()
            ));
        }
        let mean = self.mean_batch(a)?;
        let ls = self.log_std();
        let log_std = Array2::from_shape_fn(z.dim(), |(_, j)| ls[j]);
        Ok(row_logprob(z, &mean, &log_std))
    }

    /// Mean negative log-likelihood of `z` given `a` over the batch.
    pub fn mean_nll(&self, a: &Array2<f64>, z: &Array2<f64>) -> Result<f64> {
        let lp = self.logprob_batch(a, z)?;
        Ok(-lp.iter().sum::<f64>() / lp.len().max(1) as f64)
    }

    fn nll_grad(&self, a: &Array2<f64>, z: &Array2<f64>) -> Result<crate::diffnet::Gradients> {
        let mut g = Graph::new();
        let av = g.input(a.clone());
        let zv = g.input(z.clone());
        let mean = self.spec.graph(&mut g, &self.params, DISC_NET, av)?;
        let raw = g.param(&self.params, DISC_LOG_STD)?;
        let ls = g.clamp(raw, log_std_min(), log_std_max());
        let lp = g.gauss_logprob(zv, mean, ls)?;
        let m = g.mean(lp);
        let loss = g.scale(m, -1.0);
        g.backward(loss)
    }

    /// Full-batch Adam on the NLL for `epochs` epochs. An epoch whose step
    /// would raise the NLL is retried with half the rate up to
    /// [`DISC_RETRIES`] times and otherwise rejected, which ends the update.
    pub fn update(&mut self, z: &Array2<f64>, a: &Array2<f64>, lr: f64, epochs: usize) -> Result<DiscUpdateReport> {
        if a.nrows() == 0 {
            return config_err("discriminator update needs a non-empty batch");
        }
        let nll_before = self.mean_nll(a, z)?;
        let mut current = nll_before;
        let mut accepted_epochs = 0;
        let mut rejected = false;
        for _ in 0..epochs {
            let grads = self.nll_grad(a, z)?;
            let mut step_lr = lr;
            let mut accepted = false;
            for _ in 0..=DISC_RETRIES {
                let mut params = self.params.clone();
                let mut adam = self.adam.clone();
                adam.step(&mut params, &grads, step_lr)?;
                clamp_param(&mut params);
                let trial = Self { params, adam, ..self.clone() };
                let nll = trial.mean_nll(a, z)?;
                if nll.is_finite() && nll <= current {
                    *self = trial;
                    current = nll;
                    accepted = true;
                    break;
                }
                step_lr *= 0.5;
            }
            if !accepted {
                rejected = true;
                break;
            }
            accepted_epochs += 1;
        }
        if !self.params.all_finite() {
            return Err(Error::NonFinite("discriminator parameters".into()));
        }
        Ok(DiscUpdateReport { nll_before, nll_after: current, accepted_epochs, rejected })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone())
            .with_meta("b", self.b)
            .with_meta("d", self.d)
            .with_meta("net", serde_json::to_value(&self.spec).expect("serialisable"))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec: MlpSpec = serde_json::from_value(
            ck.meta.get("net").cloned().ok_or_else(|| Error::Config("discriminator checkpoint lacks `net`".into()))?,
        )?;
        spec.validate()?;
        let disc = Self { b: spec.output_dim(), d: spec.input_dim(), spec, params: ck.params.clone(), adam: Adam::new() };
        if disc.params.get(DISC_LOG_STD)?.len() != disc.b {
            return config_err("discriminator log-std has wrong length");
        }
        disc.mean_batch(&Array2::zeros((1, disc.d)))?;
        Ok(disc)
    }
}

fn clamp_param(params: &mut ParamSet) {
    if let Ok(t) = params.get_mut(DISC_LOG_STD) {
        for v in t.data_mut() {
            *v = clamp_log_std(*v);
        }
    }
}

/// `log q(z | a)` for a single pair.
pub fn disc_logprob(disc: &Discriminator, a: &[f64], z: &[f64]) -> Result<f64> {
    let av = Array2::from_shape_vec((1, a.len()), a.to_vec()).expect("row");
    let zv = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row");
    Ok(disc.logprob_batch(&av, &zv)?[0])
}

/// Runs [`Discriminator::update`] on `(z, a)` pairs.
pub fn disc_update(
    disc: &mut Discriminator,
    z: &Array2<f64>,
    a: &Array2<f64>,
    lr: f64,
    epochs: usize,
) -> Result<DiscUpdateReport> {
    disc.update(z, a, lr, epochs)
}
