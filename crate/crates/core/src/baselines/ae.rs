use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::ActionDataset;
use crate::diffnet::{Activation, Adam, Checkpoint, Graph, MlpSpec, ParamSet};
use crate::error::{config_err, Error, Result};
use crate::seeding::{streams, SeedStream};
use crate::synergy::ActionDecoder;

pub const AE_ENCODER: &str = "ae.enc.";
pub const AE_DECODER: &str = "ae.dec.";

/// Divergence guard: abort when the epoch loss exceeds this multiple of the
/// initial loss.
pub const AE_DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub lr: f64,
    pub minibatch: usize,
    /// Fraction of episodes held out for validation.
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            epochs: 2000,
            lr: 1e-3,
            minibatch: 256,
            heldout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Autoencoder synergies: an encoder `d → b` and a decoder `b → d`.
#[derive(Clone, Debug, PartialEq)]
pub struct AeModel {
    pub encoder: MlpSpec,
    pub decoder: MlpSpec,
    pub params: ParamSet,
    /// Final mean squared reconstruction error on the training rows.
    pub recon_mse: f64,
    /// Mean squared reconstruction error on held-out episodes, if any were held out.
    pub heldout_mse: Option<f64>,
}

impl AeModel {
    pub fn new(d: usize, b: usize, cfg: &AeConfig) -> Result<Self> {
        let mut enc = vec![d];
        enc.extend_from_slice(&cfg.hidden);
        enc.push(b);
        let mut dec = vec![b];
        dec.extend_from_slice(&cfg.hidden);
        dec.push(d);
        let encoder = MlpSpec::new(enc, cfg.activation);
        let decoder = MlpSpec::new(dec, cfg.activation);
        let mut params = ParamSet::new();
        let mut rng = SeedStream::new(cfg.seed).rng(streams::AE_INIT, 0);
        encoder.init(&mut params, AE_ENCODER, &mut rng)?;
        decoder.init(&mut params, AE_DECODER, &mut rng)?;
        Ok(Self { encoder, decoder, params, recon_mse: f64::NAN, heldout_mse: None })
    }

    pub fn b(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn d(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encode(&self, a: &Array2<f64>) -> Result<Array2<f64>> {
        self.encoder.forward_batch(&self.params, AE_ENCODER, a)
    }

    pub fn reconstruct(&self, a: &Array2<f64>) -> Result<Array2<f64>> {
        let z = self.encode(a)?;
        self.decoder.forward_batch(&self.params, AE_DECODER, &z)
    }

    pub fn mse(&self, a: &Array2<f64>) -> Result<f64> {
        let r = self.reconstruct(a)?;
        Ok((a - &r).mapv(|v| v * v).mean().unwrap_or(0.0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.params.clone())
            .with_meta("kind", "ae")
            .with_meta("encoder", serde_json::to_value(&self.encoder).expect("serialisable"))
            .with_meta("decoder", serde_json::to_value(&self.decoder).expect("serialisable"));
        if self.recon_mse.is_finite() {
            ck = ck.with_meta("recon_mse", self.recon_mse);
        }
        if let Some(h) = self.heldout_mse {
            ck = ck.with_meta("heldout_mse", h);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| ck.meta.get(k).cloned().ok_or_else(|| Error::Config(format!("AE checkpoint lacks `{k}`")));
        let encoder: MlpSpec = serde_json::from_value(get("encoder")?)?;
        let decoder: MlpSpec = serde_json::from_value(get("decoder")?)?;
        if encoder.output_dim() != decoder.input_dim() || encoder.input_dim() != decoder.output_dim() {
            return config_err("AE encoder and decoder dimensions are inconsistent");
        }
        Ok(Self {
            encoder,
            decoder,
            params: ck.params.clone(),
            recon_mse: ck.meta.get("recon_mse").and_then(|v| v.as_f64()).unwrap_or(f64::NAN),
            heldout_mse: ck.meta.get("heldout_mse").and_then(|v| v.as_f64()),
        })
    }
}

impl ActionDecoder for AeModel {
    fn latent_dim(&self) -> usize {
        self.b()
    }

    fn action_dim(&self) -> usize {
        self.d()
    }

    fn decode_mean_batch(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.decoder.forward_batch(&self.params, AE_DECODER, z)
    }

    fn fingerprint(&self) -> String {
        self.to_checkpoint().digest()
    }
}

fn take_rows(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), a.ncols()), |(i, j)| a[[idx[i], j]])
}

/// Episodes held out for validation: a seeded shuffle of the distinct
/// `(task, episode)` pairs, taking `fraction` of them (none if only one exists).
fn heldout_episodes(data: &ActionDataset, fraction: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut eps: Vec<(usize, usize)> = data.provenance.iter().map(|p| (p.task, p.episode)).collect();
    eps.sort_unstable();
    eps.dedup();
    if eps.len() < 2 || fraction <= 0.0 {
        return Vec::new();
    }
    eps.shuffle(&mut SeedStream::new(seed).rng(streams::AE_SHUFFLE, u64::MAX));
    let k = ((eps.len() as f64 * fraction).ceil() as usize).clamp(1, eps.len() - 1);
    let mut held = eps[..k].to_vec();
    held.sort_unstable();
    held
}

/// Minimises mean squared reconstruction error with minibatch Adam, splitting
/// train and held-out rows by episode.
pub fn ae_fit(data: &ActionDataset, b: usize, cfg: &AeConfig) -> Result<AeModel> {
    let (n, d) = data.rows.dim();
    if n <= 10 * b {
        return config_err(format!("autoencoder needs more than 10·b = {} rows, got {n}", 10 * b));
    }
    if cfg.minibatch == 0 || !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.heldout_fraction) {
        return config_err("autoencoder needs minibatch >= 1, lr > 0 and heldout_fraction in [0, 1)");
    }
    let held = heldout_episodes(data, cfg.heldout_fraction, cfg.seed);
    let is_held = |i: usize| held.binary_search(&(data.provenance[i].task, data.provenance[i].episode)).is_ok();
    let train_idx: Vec<usize> = (0..n).filter(|&i| !is_held(i)).collect();
    let held_idx: Vec<usize> = (0..n).filter(|&i| is_held(i)).collect();
    let train = take_rows(&data.rows, &train_idx);

    let mut model = AeModel::new(d, b, cfg)?;
    let initial = model.mse(&train)?;
    let mut adam = Adam::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SeedStream::new(cfg.seed).seed(streams::AE_SHUFFLE, 0));
    let mut order: Vec<usize> = (0..train.nrows()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.minibatch) {
            let mut g = Graph::new();
            let x = g.input(take_rows(&train, chunk));
            let z = model.encoder.graph(&mut g, &model.params, AE_ENCODER, x)?;
            let r = model.decoder.graph(&mut g, &model.params, AE_DECODER, z)?;
            let diff = g.sub(r, x)?;
            let sq = g.square(diff);
            let sum = g.sum(sq);
            let loss = g.scale(sum, 1.0 / (chunk.len() * d) as f64);
            let value = g.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("autoencoder loss at epoch {epoch}")));
            }
            epoch_loss += value * chunk.len() as f64;
            let grads = g.backward(loss)?;
            adam.step(&mut model.params, &grads, cfg.lr)?;
        }
        epoch_loss /= train.nrows() as f64;
        if epoch_loss > AE_DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::Domain(format!(
                "autoencoder diverged at epoch {epoch}: loss {epoch_loss:.4e} vs initial {initial:.4e}"
            )));
        }
    }
    model.recon_mse = model.mse(&train)?;
    model.heldout_mse = if held_idx.is_empty() { None } else { Some(model.mse(&take_rows(&data.rows, &held_idx))?) };
    Ok(model)
}
