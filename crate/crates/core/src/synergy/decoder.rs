use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffnet::{
    clamp_log_std, log_std_max, log_std_min, Activation, Checkpoint, DiagGaussian, Graph, MlpSpec,
    ParamSet, Tensor, Var, HALF_LN_2PI_E,
};
use crate::error::{config_err, Error, Result};
use crate::linalg;

pub const PHI: &str = "decoder.phi";
pub const DECODER_LOG_STD: &str = "decoder.log_std";
pub const DECODER_NET: &str = "decoder.net.";

/// Initial standard deviation of every Gaussian head.
pub const INIT_STD: f64 = 0.5;
/// Initial action std of trainable decoders.
pub const DECODER_INIT_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderForm {
    Linear,
    Mlp,
}

impl std::fmt::Display for DecoderForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecoderForm::Linear => "linear",
            DecoderForm::Mlp => "mlp",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Stochastic,
    Deterministic,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decoded {
    Dist(DiagGaussian),
    Mean(Vec<f64>),
}

/// Anything that maps latent actions to full-dimensional action means.
///
/// Frozen decoders of every kind (learned synergies, PCA, autoencoders)
/// implement this so low-dimensional policies can be trained on top of them.
pub trait ActionDecoder {
    fn latent_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Row-wise decoded means for a batch of latents.
    fn decode_mean_batch(&self, z: &Array2<f64>) -> Result<Array2<f64>>;
    /// Global action log-std, if the decoder is stochastic.
    fn action_log_std(&self) -> Option<Vec<f64>> {
        None
    }
    /// Content hash used to prove the decoder was not modified.
    fn fingerprint(&self) -> String;
}

/// The synergy decoder `p(a | z)`: a Gaussian whose mean is `z φ` (linear) or
/// `net(z)` (MLP) and whose std is a global vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SynergyModel {
    pub form: DecoderForm,
    pub b: usize,
    pub d: usize,
    /// Network shape for the MLP form.
    pub net: Option<MlpSpec>,
    pub params: ParamSet,
    pub frozen: bool,
}

fn init_log_std(d: usize) -> Tensor {
    Tensor::vector(vec![DECODER_INIT_STD.ln(); d])
}

fn check_dims(b: usize, d: usize) -> Result<()> {
    if b == 0 || b > d {
        return config_err(format!("latent dim b = {b} must be in 1..={d}"));
    }
    Ok(())
}

impl SynergyModel {
    pub fn linear<R: Rng + ?Sized>(b: usize, d: usize, rng: &mut R) -> Result<Self> {
        check_dims(b, d)?;
        let limit = (6.0 / (b + d) as f64).sqrt();
        let phi = (0..b * d).map(|_| rng.random_range(-limit..limit)).collect();
        let mut params = ParamSet::new();
        params.insert(PHI, Tensor::matrix(b, d, phi)?)?;
        params.insert(DECODER_LOG_STD, init_log_std(d))?;
        Ok(Self { form: DecoderForm::Linear, b, d, net: None, params, frozen: false })
    }

    pub fn mlp<R: Rng + ?Sized>(
        b: usize,
        d: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        check_dims(b, d)?;
        let mut widths = vec![b];
        widths.extend_from_slice(hidden);
        widths.push(d);
        let spec = MlpSpec::new(widths, activation);
        let mut params = ParamSet::new();
        spec.init(&mut params, DECODER_NET, rng)?;
        params.insert(DECODER_LOG_STD, init_log_std(d))?;
        Ok(Self { form: DecoderForm::Mlp, b, d, net: Some(spec), params, frozen: false })
    }

    /// Linear decoder with `φ = I` (`b = d`), frozen.
    pub fn identity(d: usize) -> Self {
        let phi = Array2::<f64>::eye(d);
        let mut params = ParamSet::new();
        params
            .insert(PHI, Tensor::matrix(d, d, phi.into_raw_vec_and_offset().0).expect("square"))
            .expect("fresh");
        params.insert(DECODER_LOG_STD, init_log_std(d)).expect("fresh");
        Self { form: DecoderForm::Linear, b: d, d, net: None, params, frozen: true }
    }

    /// Linear decoder with the given `b x d` matrix.
    pub fn from_phi(phi: &Array2<f64>, log_std: f64) -> Result<Self> {
        let (b, d) = phi.dim();
        check_dims(b, d)?;
        let mut params = ParamSet::new();
        params.insert(PHI, Tensor::matrix(b, d, phi.iter().copied().collect())?)?;
        params.insert(DECODER_LOG_STD, Tensor::vector(vec![log_std; d]))?;
        Ok(Self { form: DecoderForm::Linear, b, d, net: None, params, frozen: false })
    }

    pub fn is_identity(&self) -> bool {
        self.form == DecoderForm::Linear
            && self.b == self.d
            && self.phi().is_some_and(|p| p.indexed_iter().all(|((i, j), v)| *v == if i == j { 1.0 } else { 0.0 }))
    }

    pub fn phi(&self) -> Option<Array2<f64>> {
        match self.form {
            DecoderForm::Linear => self.params.get(PHI).ok().map(Tensor::to_array),
            DecoderForm::Mlp => None,
        }
    }

    /// Orthonormal row basis of `rowspace(φ)`; `None` for the MLP form.
    pub fn rowspace(&self) -> Option<Array2<f64>> {
        self.phi().map(|p| linalg::row_space_basis(&p, 1e-10))
    }

    /// Clamped action log-std.
    pub fn log_std(&self) -> Vec<f64> {
        self.params.get(DECODER_LOG_STD).expect("decoder log-std").data().iter().map(|&l| clamp_log_std(l)).collect()
    }

    /// `H(p(a|z))`, independent of `z`.
    pub fn entropy(&self) -> f64 {
        self.log_std().iter().map(|l| HALF_LN_2PI_E + l).sum()
    }

    pub fn decode(&self, z: &[f64], mode: Mode) -> Result<Decoded> {
        if z.len() != self.b {
            return config_err(format!("latent has {} dims, decoder expects {}", z.len(), self.b));
        }
        let zb = Array2::from_shape_vec((1, self.b), z.to_vec()).expect("row");
        let mean = self.mean_batch(&zb)?.into_raw_vec_and_offset().0;
        Ok(match mode {
            Mode::Deterministic => Decoded::Mean(mean),
            Mode::Stochastic => Decoded::Dist(DiagGaussian::from_log_std(mean, &self.log_std())?),
        })
    }

    pub fn mean_batch(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.b {
            return config_err(format!("latent has {} dims, decoder expects {}", z.ncols(), self.b));
        }
        if self.frozen && self.is_identity() {
            return Ok(z.clone());
        }
        match self.form {
            DecoderForm::Linear => {
                let phi = self.params.get(PHI)?;
                let view = ArrayView2::from_shape((self.b, self.d), phi.data()).expect("shape");
                Ok(z.dot(&view))
            }
            DecoderForm::Mlp => self.spec()?.forward_batch(&self.params, DECODER_NET, z),
        }
    }

    fn spec(&self) -> Result<&MlpSpec> {
        self.net.as_ref().ok_or_else(|| Error::Config("MLP decoder without a network spec".into()))
    }

    pub fn graph_mean(&self, g: &mut Graph, params: &ParamSet, z: Var) -> Result<Var> {
        match self.form {
            DecoderForm::Linear => {
                let phi = g.param(params, PHI)?;
                g.matmul(z, phi)
            }
            DecoderForm::Mlp => self.spec()?.graph(g, params, DECODER_NET, z),
        }
    }

    /// Clamped log-std as a `1 x d` node.
    pub fn graph_log_std(&self, g: &mut Graph, params: &ParamSet) -> Result<Var> {
        let raw = g.param(params, DECODER_LOG_STD)?;
        Ok(g.clamp(raw, log_std_min(), log_std_max()))
    }

    /// Pulls the raw log-std parameter back into the admissible range.
    pub fn clamp_std(&mut self) {
        if let Ok(t) = self.params.get_mut(DECODER_LOG_STD) {
            for v in t.data_mut() {
                *v = clamp_log_std(*v);
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.params.clone())
            .with_meta("form", self.form.to_string())
            .with_meta("b", self.b)
            .with_meta("d", self.d)
            .with_meta("frozen", self.frozen);
        if let Some(spec) = &self.net {
            ck.meta.insert("net".into(), serde_json::to_value(spec).expect("serialisable"));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| ck.meta.get(k).ok_or_else(|| Error::Config(format!("decoder checkpoint lacks meta `{k}`")));
        let form: DecoderForm = serde_json::from_value(get("form")?.clone())?;
        let b = get("b")?.as_u64().ok_or_else(|| Error::Config("meta `b` must be an integer".into()))? as usize;
        let d = get("d")?.as_u64().ok_or_else(|| Error::Config("meta `d` must be an integer".into()))? as usize;
        let frozen = ck.meta.get("frozen").and_then(Value::as_bool).unwrap_or(false);
        let net = match ck.meta.get("net") {
            Some(v) => Some(serde_json::from_value::<MlpSpec>(v.clone())?),
            None => None,
        };
        check_dims(b, d)?;
        let model = Self { form, b, d, net, params: ck.params.clone(), frozen };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let ls = self.params.get(DECODER_LOG_STD)?;
        if ls.len() != self.d {
            return config_err("decoder log-std has wrong length");
        }
        match self.form {
            DecoderForm::Linear => {
                if self.params.get(PHI)?.dims2() != (self.b, self.d) {
                    return config_err("decoder φ has wrong shape");
                }
            }
            DecoderForm::Mlp => {
                let spec = self.spec()?;
                if spec.input_dim() != self.b || spec.output_dim() != self.d {
                    return config_err("decoder network does not map b to d");
                }
                let z = Array2::zeros((1, self.b));
                spec.forward_batch(&self.params, DECODER_NET, &z)?;
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the serialised decoder.
    pub fn digest(&self) -> String {
        self.to_checkpoint().digest()
    }
}

impl ActionDecoder for SynergyModel {
    fn latent_dim(&self) -> usize {
        self.b
    }

    fn action_dim(&self) -> usize {
        self.d
    }

    fn decode_mean_batch(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.mean_batch(z)
    }

    fn action_log_std(&self) -> Option<Vec<f64>> {
        Some(self.log_std())
    }

    fn fingerprint(&self) -> String {
        self.digest()
    }
}
