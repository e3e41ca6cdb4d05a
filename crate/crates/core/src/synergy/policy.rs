use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::decoder::{Mode, SynergyModel, INIT_STD};
use crate::diffnet::{
    clamp_log_std, log_std_max, log_std_min, Activation, Checkpoint, Graph, MlpSpec, ParamSet, Var,
    HALF_LN_2PI, HALF_LN_2PI_E,
};
use crate::error::{config_err, Error, Result};

/// Hidden layer shape shared by the policy, value and discriminator networks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl NetConfig {
    pub fn new(hidden: Vec<usize>, activation: Activation) -> Self {
        Self { hidden, activation }
    }

    pub fn spec(&self, input: usize, output: usize) -> MlpSpec {
        let mut widths = vec![input];
        widths.extend_from_slice(&self.hidden);
        widths.push(output);
        MlpSpec::new(widths, self.activation)
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], activation: Activation::Tanh }
    }
}

/// Scale applied to the initial output weights of the latent mean.
pub const MEAN_INIT_SCALE: f64 = 0.01;

pub fn pi_prefix(head: usize) -> String {
    format!("head{head}.pi.")
}

pub fn value_prefix(head: usize) -> String {
    format!("head{head}.v.")
}

/// Multi-head Gaussian latent policy `π(z | s, n)` with one value network per
/// head. Each policy network outputs `[mean | log-std]` (width `2b`).
#[derive(Clone, Debug, PartialEq)]
pub struct TaskPolicy {
    pub obs_dim: usize,
    pub b: usize,
    pub num_tasks: usize,
    /// All tasks share head 0 (ablation).
    pub single_head: bool,
    pub pi_spec: MlpSpec,
    pub v_spec: MlpSpec,
    pub params: ParamSet,
}

/// Output of [`TaskPolicy::sample_latent`].
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub log_prob: f64,
    pub entropy: f64,
}

/// Output of [`act`].
#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    pub a: Vec<f64>,
    pub z: Vec<f64>,
    pub log_prob: f64,
    pub latent_entropy: f64,
    pub action_entropy: f64,
}

impl TaskPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        b: usize,
        num_tasks: usize,
        net: &NetConfig,
        single_head: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if num_tasks == 0 || b == 0 || obs_dim == 0 {
            return config_err("policy needs at least one task, latent and observation dimension");
        }
        let pi_spec = net.spec(obs_dim, 2 * b);
        let v_spec = net.spec(obs_dim, 1);
        let mut params = ParamSet::new();
        let heads = if single_head { 1 } else { num_tasks };
        for h in 0..heads {
            Self::init_head(&pi_spec, &v_spec, b, h, &mut params, rng)?;
        }
        Ok(Self { obs_dim, b, num_tasks, single_head, pi_spec, v_spec, params })
    }

    fn init_head<R: Rng + ?Sized>(
        pi_spec: &MlpSpec,
        v_spec: &MlpSpec,
        b: usize,
        head: usize,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Result<()> {
        let pi = pi_prefix(head);
        pi_spec.init(params, &pi, rng)?;
        // Means start near zero; log-std outputs start state-independent at INIT_STD.
        let last = pi_spec.num_layers() - 1;
        let w = params.get_mut(&MlpSpec::weight_name(&pi, last))?;
        let (fan_in, _) = w.dims2();
        for r in 0..fan_in {
            for c in 0..b {
                w.data_mut()[r * 2 * b + c] *= MEAN_INIT_SCALE;
            }
            for c in b..2 * b {
                w.data_mut()[r * 2 * b + c] = 0.0;
            }
        }
        let bias = params.get_mut(&MlpSpec::bias_name(&pi, last))?;
        for c in b..2 * b {
            bias.data_mut()[c] = INIT_STD.ln();
        }
        v_spec.init(params, &value_prefix(head), rng)
    }

    pub fn num_heads(&self) -> usize {
        if self.single_head {
            1
        } else {
            self.num_tasks
        }
    }

    /// Parameter head used for task `n`.
    pub fn head_for(&self, n: usize) -> Result<usize> {
        if n >= self.num_tasks {
            return config_err(format!("task id {n} out of range for {} tasks", self.num_tasks));
        }
        Ok(if self.single_head { 0 } else { n })
    }

    fn check_obs(&self, obs: &Array2<f64>) -> Result<()> {
        if obs.ncols() != self.obs_dim {
            return config_err(format!("observation has {} dims, policy expects {}", obs.ncols(), self.obs_dim));
        }
        Ok(())
    }

    /// Latent means and clamped log-stds for a batch of observations of task `n`.
    pub fn head_outputs(&self, obs: &Array2<f64>, n: usize) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_obs(obs)?;
        let head = self.head_for(n)?;
        let out = self.pi_spec.forward_batch(&self.params, &pi_prefix(head), obs)?;
        let mean = out.slice(s![.., ..self.b]).to_owned();
        let log_std = out.slice(s![.., self.b..]).mapv(clamp_log_std);
        Ok((mean, log_std))
    }

    pub fn values(&self, obs: &Array2<f64>, n: usize) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        let head = self.head_for(n)?;
        Ok(self.v_spec.forward_batch(&self.params, &value_prefix(head), obs)?.into_raw_vec_and_offset().0)
    }

    /// Graph nodes for `(mean, clamped log-std)` of head `head`.
    pub fn graph_head(&self, g: &mut Graph, params: &ParamSet, head: usize, obs: Var) -> Result<(Var, Var)> {
        let out = self.pi_spec.graph(g, params, &pi_prefix(head), obs)?;
        let mean = g.slice_cols(out, 0, self.b)?;
        let raw = g.slice_cols(out, self.b, self.b)?;
        Ok((mean, g.clamp(raw, log_std_min(), log_std_max())))
    }

    pub fn graph_value(&self, g: &mut Graph, params: &ParamSet, head: usize, obs: Var) -> Result<Var> {
        self.v_spec.graph(g, params, &value_prefix(head), obs)
    }

    pub fn sample_latent<R: Rng + ?Sized>(&self, s: &[f64], n: usize, mode: Mode, rng: &mut R) -> Result<LatentSample> {
        let obs = Array2::from_shape_vec((1, s.len()), s.to_vec()).expect("row");
        let (mean, log_std) = self.head_outputs(&obs, n)?;
        let (z, lp) = match mode {
            Mode::Stochastic => sample_rows(&mean, &log_std, rng),
            Mode::Deterministic => {
                let lp = row_logprob(&mean, &mean, &log_std);
                (mean.clone(), lp)
            }
        };
        Ok(LatentSample {
            z: z.row(0).to_vec(),
            log_prob: lp[0],
            entropy: row_entropy(&log_std)[0],
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone())
            .with_meta("obs_dim", self.obs_dim)
            .with_meta("b", self.b)
            .with_meta("num_tasks", self.num_tasks)
            .with_meta("single_head", self.single_head)
            .with_meta("pi_net", serde_json::to_value(&self.pi_spec).expect("serialisable"))
            .with_meta("v_net", serde_json::to_value(&self.v_spec).expect("serialisable"))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let num = |k: &str| {
            ck.meta
                .get(k)
                .and_then(serde_json::Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::Config(format!("policy checkpoint lacks integer meta `{k}`")))
        };
        let spec = |k: &str| -> Result<MlpSpec> {
            let v = ck.meta.get(k).ok_or_else(|| Error::Config(format!("policy checkpoint lacks `{k}`")))?;
            Ok(serde_json::from_value(v.clone())?)
        };
        let policy = Self {
            obs_dim: num("obs_dim")?,
            b: num("b")?,
            num_tasks: num("num_tasks")?,
            single_head: ck.meta.get("single_head").and_then(serde_json::Value::as_bool).unwrap_or(false),
            pi_spec: spec("pi_net")?,
            v_spec: spec("v_net")?,
            params: ck.params.clone(),
        };
        let probe = Array2::zeros((1, policy.obs_dim));
        for h in 0..policy.num_heads() {
            policy.pi_spec.forward_batch(&policy.params, &pi_prefix(h), &probe)?;
            policy.v_spec.forward_batch(&policy.params, &value_prefix(h), &probe)?;
        }
        Ok(policy)
    }

    /// Adds a freshly initialised head for a new task and returns its id.
    pub fn add_head<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        if self.single_head {
            return config_err("cannot add heads to a single-head policy");
        }
        let head = self.num_tasks;
        Self::init_head(&self.pi_spec, &self.v_spec, self.b, head, &mut self.params, rng)?;
        self.num_tasks += 1;
        Ok(head)
    }

    /// Parameters of one head, prefixes included.
    pub fn head_params(&self, head: usize) -> ParamSet {
        let mut out = ParamSet::new();
        for prefix in [pi_prefix(head), value_prefix(head)] {
            for (k, t) in self.params.iter().filter(|(k, _)| k.starts_with(&prefix)) {
                out.insert(k.clone(), t.clone()).expect("unique");
            }
        }
        out
    }
}

/// Samples `z = mean + std * ε` row by row and returns the log-densities.
pub fn sample_rows<R: Rng + ?Sized>(
    mean: &Array2<f64>,
    log_std: &Array2<f64>,
    rng: &mut R,
) -> (Array2<f64>, Vec<f64>) {
    let mut z = mean.clone();
    for (zi, ls) in z.iter_mut().zip(log_std.iter()) {
        let eps: f64 = rng.sample(StandardNormal);
        *zi += ls.exp() * eps;
    }
    let lp = row_logprob(&z, mean, log_std);
    (z, lp)
}

/// Per-row diagonal Gaussian log-density, accumulated in the same order as the
/// graph primitive.
pub fn row_logprob(x: &Array2<f64>, mean: &Array2<f64>, log_std: &Array2<f64>) -> Vec<f64> {
    x.rows()
        .into_iter()
        .zip(mean.rows())
        .zip(log_std.rows())
        .map(|((xr, mr), sr)| {
            let mut acc = 0.0;
            for ((x, m), ls) in xr.iter().zip(mr).zip(sr) {
                let u = (x - m) * (-ls).exp();
                acc += -HALF_LN_2PI - ls - 0.5 * u * u;
            }
            acc
        })
        .collect()
}

pub fn row_entropy(log_std: &Array2<f64>) -> Vec<f64> {
    log_std.rows().into_iter().map(|r| r.iter().map(|l| HALF_LN_2PI_E + l).sum()).collect()
}

/// Composes the latent policy and the decoder: `z ~ π(z|s,n)`, `a ~ p(a|z)`.
/// Deterministic mode uses both means.
pub fn act<R: Rng + ?Sized>(
    policy: &TaskPolicy,
    model: &SynergyModel,
    s: &[f64],
    n: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<ActOutput> {
    if policy.b != model.b {
        return config_err(format!("policy latent dim {} differs from decoder's {}", policy.b, model.b));
    }
    let latent = policy.sample_latent(s, n, mode, rng)?;
    let zb = Array2::from_shape_vec((1, model.b), latent.z.clone()).expect("row");
    let mut a = model.mean_batch(&zb)?.into_raw_vec_and_offset().0;
    if mode == Mode::Stochastic {
        for (ai, ls) in a.iter_mut().zip(model.log_std()) {
            let eps: f64 = rng.sample(StandardNormal);
            *ai += ls.exp() * eps;
        }
    }
    Ok(ActOutput {
        a,
        z: latent.z,
        log_prob: latent.log_prob,
        latent_entropy: latent.entropy,
        action_entropy: model.entropy(),
    })
}
