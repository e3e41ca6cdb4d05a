use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{ParamSet, Tensor};
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    /// No nonlinearity; used for linear autoencoders and regressors.
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn graph(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Fully connected network shape. `layer_widths` lists the input width
/// followed by each layer's output width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    /// Apply the activation after the last layer as well.
    #[serde(default)]
    pub activate_output: bool,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Self {
        Self { layer_widths, activation, activate_output: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return config_err("an MLP needs an input width and at least one layer");
        }
        if self.layer_widths.contains(&0) {
            return config_err("MLP widths must be at least 1");
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    pub fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}l{layer}.w")
    }

    pub fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}l{layer}.b")
    }

    fn activates(&self, layer: usize) -> bool {
        layer + 1 < self.num_layers() || self.activate_output
    }

    /// Inserts Glorot-uniform weights (`in x out`) and zero biases.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, prefix: &str, rng: &mut R) -> Result<()> {
        self.validate()?;
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.layer_widths[l], self.layer_widths[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            params.insert(Self::weight_name(prefix, l), Tensor::matrix(fan_in, fan_out, w)?)?;
            params.insert(Self::bias_name(prefix, l), Tensor::zeros(vec![fan_out]))?;
        }
        Ok(())
    }

    fn check_params(&self, params: &ParamSet, prefix: &str) -> Result<()> {
        for l in 0..self.num_layers() {
            let w = params.get(&Self::weight_name(prefix, l))?;
            let b = params.get(&Self::bias_name(prefix, l))?;
            let expect = (self.layer_widths[l], self.layer_widths[l + 1]);
            if w.dims2() != expect || b.dims2() != (1, expect.1) {
                return config_err(format!(
                    "layer {l} of `{prefix}` has weight {:?} / bias {:?}, expected {expect:?}",
                    w.shape(),
                    b.shape()
                ));
            }
        }
        Ok(())
    }

    /// Batched forward pass over the rows of `x`.
    pub fn forward_batch(&self, params: &ParamSet, prefix: &str, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.validate()?;
        if x.ncols() != self.input_dim() {
            return config_err(format!(
                "MLP `{prefix}` expects input width {}, got {}",
                self.input_dim(),
                x.ncols()
            ));
        }
        self.check_params(params, prefix)?;
        let mut h = x.to_owned();
        for l in 0..self.num_layers() {
            let w = params.get(&Self::weight_name(prefix, l))?;
            let b = params.get(&Self::bias_name(prefix, l))?;
            let (fi, fo) = w.dims2();
            let wv = ndarray::ArrayView2::from_shape((fi, fo), w.data()).expect("checked");
            let mut next = h.dot(&wv);
            let bias = b.data();
            let act = self.activates(l).then_some(self.activation);
            for mut row in next.rows_mut() {
                for (v, bb) in row.iter_mut().zip(bias) {
                    let s = *v + bb;
                    *v = match act {
                        Some(a) => a.apply(s),
                        None => s,
                    };
                }
            }
            h = next;
        }
        Ok(h)
    }

    /// Builds the network on a graph; parameters become differentiable leaves.
    pub fn graph(&self, g: &mut Graph, params: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
        self.validate()?;
        self.check_params(params, prefix)?;
        let mut h = x;
        for l in 0..self.num_layers() {
            let w = g.param(params, &Self::weight_name(prefix, l))?;
            let b = g.param(params, &Self::bias_name(prefix, l))?;
            let lin = g.matmul(h, w)?;
            h = g.add(lin, b)?;
            if self.activates(l) {
                h = self.activation.graph(g, h);
            }
        }
        Ok(h)
    }
}

/// Single-input forward pass.
pub fn mlp_forward(params: &ParamSet, spec: &MlpSpec, prefix: &str, input: &[f64]) -> Result<Vec<f64>> {
    let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row");
    Ok(spec.forward_batch(params, prefix, &x)?.into_raw_vec_and_offset().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_layer(w: Vec<f64>, b: Vec<f64>, n_in: usize, n_out: usize) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("l0.w", Tensor::matrix(n_in, n_out, w).unwrap()).unwrap();
        p.insert("l0.b", Tensor::vector(b)).unwrap();
        p
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::new(vec![3, 5, 2], Activation::Tanh);
        let mut p = ParamSet::new();
        spec.init(&mut p, "", &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let zeroed: Vec<(String, Tensor)> =
            p.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape().to_vec()))).collect();
        let mut z = ParamSet::new();
        for (k, t) in zeroed {
            z.insert(k, t).unwrap();
        }
        assert_eq!(mlp_forward(&z, &spec, "", &[0.3, -2.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let spec = MlpSpec::new(vec![2, 2], Activation::Relu);
        let p = single_layer(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2);
        assert_eq!(mlp_forward(&p, &spec, "", &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn activated_single_layer() {
        let spec = MlpSpec { layer_widths: vec![1, 1], activation: Activation::Tanh, activate_output: true };
        let p = single_layer(vec![1.0], vec![0.0], 1, 1);
        let y = mlp_forward(&p, &spec, "", &[0.5]).unwrap();
        assert!((y[0] - 0.46212).abs() < 1e-5);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let spec = MlpSpec::new(vec![2, 2], Activation::Tanh);
        let p = single_layer(vec![1.0; 4], vec![0.0; 2], 2, 2);
        assert!(mlp_forward(&p, &spec, "", &[1.0]).is_err());
        let bad = MlpSpec::new(vec![3, 2], Activation::Tanh);
        assert!(mlp_forward(&p, &bad, "", &[1.0, 2.0, 3.0]).is_err());
        assert!(MlpSpec::new(vec![2], Activation::Tanh).validate().is_err());
    }

    #[test]
    fn forward_is_deterministic_and_matches_graph() {
        let spec = MlpSpec::new(vec![4, 8, 8, 3], Activation::Tanh);
        let mut p = ParamSet::new();
        spec.init(&mut p, "net.", &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let a = spec.forward_batch(&p, "net.", &x).unwrap();
        let b = spec.forward_batch(&p, "net.", &x).unwrap();
        assert_eq!(a, b);
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = spec.graph(&mut g, &p, "net.", xv).unwrap();
        let diff = (g.value(y) - &a).mapv(f64::abs).fold(0.0f64, |m, v| m.max(*v));
        assert!(diff < 1e-12);
    }
}
