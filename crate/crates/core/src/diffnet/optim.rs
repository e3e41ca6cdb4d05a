use std::collections::BTreeMap;

use ndarray::Array2;

use super::graph::Gradients;
use super::tensor::ParamSet;
use crate::error::Result;

#[derive(Clone, Debug)]
struct Moments {
    m: Array2<f64>,
    v: Array2<f64>,
    t: i32,
}

/// Adam with per-parameter step counters. Only parameters present in the
/// gradient set are touched.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<String, Moments>,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, state: BTreeMap::new() }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f64) -> Result<()> {
        for (name, g) in grads.iter() {
            let tensor = params.get_mut(name)?;
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: Array2::zeros(g.dim()),
                v: Array2::zeros(g.dim()),
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - self.beta1.powi(st.t);
            let bc2 = 1.0 - self.beta2.powi(st.t);
            let data = tensor.data_mut();
            for (i, (gi, (mi, vi))) in g.iter().zip(st.m.iter_mut().zip(st.v.iter_mut())).enumerate() {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent, used where optimizer state must not persist.
pub fn sgd_step(params: &mut ParamSet, grads: &Gradients, lr: f64) -> Result<()> {
    for (name, g) in grads.iter() {
        let data = params.get_mut(name)?.data_mut();
        for (d, gi) in data.iter_mut().zip(g.iter()) {
            *d -= lr * gi;
        }
    }
    Ok(())
}
