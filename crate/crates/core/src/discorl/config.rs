use serde::{Deserialize, Serialize};

use crate::diffnet::Activation;
use crate::error::{config_err, Result};
use crate::synergy::{DecoderForm, NetConfig};

fn default_decoder_net() -> NetConfig {
    NetConfig::new(vec![32, 32], Activation::Tanh)
}

/// Hyper-parameters of the DiscoSyn trainer. Every field has a default, and
/// unknown keys are rejected when deserialising.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    /// Weight of the latent-policy entropy bonus.
    pub alpha1: f64,
    /// Weight of the discriminator log-likelihood bonus.
    pub alpha2: f64,
    /// Weight of the decoder entropy bonus.
    pub alpha3: f64,
    pub lr_policy: f64,
    pub lr_decoder: f64,
    pub lr_disc: f64,
    /// Episodes per task per iteration.
    pub episodes_per_task: usize,
    pub ppo_epochs: usize,
    pub minibatch: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Latent dimension.
    pub b: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub disc_epochs: usize,
    pub decoder_form: DecoderForm,
    pub decoder_net: NetConfig,
    pub policy_net: NetConfig,
    pub disc_net: NetConfig,
    /// Sample actions from `p(a|z)`; when false the decoder mean is used.
    pub decoder_noise: bool,
    /// Update the decoder during PPO.
    pub train_decoder: bool,
    /// Share one policy head across all tasks (ablation).
    pub single_head: bool,
    pub early_stop: bool,
    /// Number of evaluations the convergence slope is fitted over.
    pub early_stop_window: usize,
    /// Early stop once every task's relative return slope per iteration is
    /// below this.
    pub early_stop_tol: f64,
    pub min_iterations: usize,
    /// Compute the entropy-bound diagnostic every this many iterations (0 = never).
    pub bound_every: usize,
    pub bound_samples: usize,
    pub z_samples_per_task: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            alpha1: 0.01,
            alpha2: 0.01,
            alpha3: 0.001,
            lr_policy: 3e-4,
            lr_decoder: 3e-4,
            lr_disc: 1e-3,
            episodes_per_task: 8,
            ppo_epochs: 10,
            minibatch: 256,
            iterations: 500,
            seed: 0,
            b: 4,
            eval_every: 1,
            eval_episodes: 1,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            disc_epochs: 2,
            decoder_form: DecoderForm::Linear,
            decoder_net: default_decoder_net(),
            policy_net: NetConfig::default(),
            disc_net: NetConfig::default(),
            decoder_noise: true,
            train_decoder: true,
            single_head: false,
            early_stop: true,
            early_stop_window: 20,
            early_stop_tol: 1e-3,
            min_iterations: 50,
            bound_every: 25,
            bound_samples: 1000,
            z_samples_per_task: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return config_err(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return config_err(format!("gae_lambda must be in (0, 1], got {}", self.gae_lambda));
        }
        if !(self.clip_eps > 0.0) {
            return config_err("clip_eps must be positive");
        }
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3", self.alpha3)] {
            if !(a >= 0.0) || !a.is_finite() {
                return config_err(format!("{name} must be a finite non-negative number"));
            }
        }
        for (name, lr) in [("lr_policy", self.lr_policy), ("lr_decoder", self.lr_decoder), ("lr_disc", self.lr_disc)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return config_err(format!("{name} must be positive"));
            }
        }
        if self.episodes_per_task == 0 || self.minibatch == 0 || self.b == 0 {
            return config_err("episodes_per_task, minibatch and b must be at least 1");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return config_err("eval_every and eval_episodes must be at least 1");
        }
        if self.early_stop && self.early_stop_window < 2 {
            return config_err("early_stop_window must be at least 2");
        }
        if !(self.max_grad_norm > 0.0) || !(self.value_coef >= 0.0) {
            return config_err("max_grad_norm must be positive and value_coef non-negative");
        }
        if self.train_decoder && !self.decoder_noise {
            return config_err("train_decoder requires decoder_noise: the decoder is trained on its own samples");
        }
        if self.bound_every > 0 && self.bound_samples < 1000 {
            return config_err("bound_samples must be at least 1000");
        }
        Ok(())
    }

    /// Plain PPO settings: no bonuses, identity decoder without noise.
    pub fn vanilla(mut self) -> Self {
        self.alpha1 = 0.0;
        self.alpha2 = 0.0;
        self.alpha3 = 0.0;
        self.decoder_noise = false;
        self.train_decoder = false;
        self
    }
}
