use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::TrainConfig;
use crate::diffnet::HALF_LN_2PI_E;
use crate::envs::{self, EnvState, Task};
use crate::error::{config_err, Result};
use crate::seeding::derive_seed;
use crate::synergy::{row_entropy, row_logprob, sample_rows, ActionDecoder, Discriminator, TaskPolicy};

/// `r + α1·H_z + α2·log q + α3·H_a`.
pub fn extended_reward(r_env: f64, hz: f64, disc_lp: f64, ha: f64, cfg: &TrainConfig) -> f64 {
    r_env + cfg.alpha1 * hz + cfg.alpha2 * disc_lp + cfg.alpha3 * ha
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub task: usize,
    pub episode: usize,
    pub t: usize,
    /// Position of this step in execution order within the batch.
    pub env_step: usize,
    pub obs: Vec<f64>,
    pub z: Vec<f64>,
    /// Sampled action before clipping to the admissible box.
    pub a: Vec<f64>,
    pub r_env: f64,
    pub r_hat: f64,
    pub hz: f64,
    pub disc_lp: f64,
    pub ha: f64,
    pub log_prob: f64,
    /// `log p(a|z)` under the decoder that produced `a` (0 without decoder noise).
    pub decoder_log_prob: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub task: usize,
    pub episode: usize,
    pub env_return: f64,
    pub hat_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    /// Ordered by task, then episode, then time step.
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeSummary>,
    pub alphas: [f64; 3],
    /// Environment steps executed.
    pub env_steps: usize,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Smallest execution-order index of a step with non-zero environment reward.
    pub fn first_reward_step(&self) -> Option<usize> {
        self.steps.iter().filter(|s| s.r_env != 0.0).map(|s| s.env_step).min()
    }

    /// Per-task means of `(r_env, H_z, log q, H_a)` over all steps.
    pub fn task_means(&self, task: usize) -> [f64; 4] {
        let mut acc = [0.0; 4];
        let mut n = 0usize;
        for s in self.steps.iter().filter(|s| s.task == task) {
            acc[0] += s.r_env;
            acc[1] += s.hz;
            acc[2] += s.disc_lp;
            acc[3] += s.ha;
            n += 1;
        }
        acc.map(|v| v / n.max(1) as f64)
    }

    /// Stacked `(z, a)` matrices.
    pub fn latent_action_pairs(&self) -> (Array2<f64>, Array2<f64>) {
        let b = self.steps.first().map_or(0, |s| s.z.len());
        let d = self.steps.first().map_or(0, |s| s.a.len());
        let z = Array2::from_shape_fn((self.steps.len(), b), |(i, j)| self.steps[i].z[j]);
        let a = Array2::from_shape_fn((self.steps.len(), d), |(i, j)| self.steps[i].a[j]);
        (z, a)
    }
}

/// Seed of the `episode`-th reset of task `task` in a rollout seeded by `seed`.
pub fn reset_seed(seed: u64, task: usize, episode: usize) -> u64 {
    derive_seed(seed, task as u64, episode as u64)
}

pub(crate) fn obs_matrix(task: &Task, states: &[EnvState]) -> Array2<f64> {
    let dim = task.obs_dim();
    let mut m = Array2::zeros((states.len(), dim));
    for (mut row, s) in m.rows_mut().into_iter().zip(states) {
        for (dst, v) in row.iter_mut().zip(envs::observe(task, s)) {
            *dst = v;
        }
    }
    m
}

/// Samples `episodes_per_task` full episodes of every task with the composed
/// stochastic policy. `tasks[i]` uses policy head `head_ids[i]` (defaults to
/// `i`).
pub fn collect(
    policy: &TaskPolicy,
    decoder: &dyn ActionDecoder,
    disc: Option<&Discriminator>,
    tasks: &[Task],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RolloutBatch> {
    let heads: Vec<usize> = (0..tasks.len()).collect();
    collect_with_heads(policy, decoder, disc, tasks, &heads, cfg, seed)
}

pub fn collect_with_heads(
    policy: &TaskPolicy,
    decoder: &dyn ActionDecoder,
    disc: Option<&Discriminator>,
    tasks: &[Task],
    heads: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RolloutBatch> {
    if heads.len() != tasks.len() {
        return config_err("one head id per task is required");
    }
    if tasks.is_empty() {
        return config_err("at least one task is required");
    }
    for (t, &h) in tasks.iter().zip(heads) {
        policy.head_for(h)?;
        if t.d != decoder.action_dim() || t.obs_dim() != policy.obs_dim || policy.b != decoder.latent_dim() {
            return config_err(format!("task `{}` does not match the model dimensions", t.name));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_eps = cfg.episodes_per_task;
    let log_std_a = if cfg.decoder_noise { decoder.action_log_std() } else { None };
    let ha = decoder.action_log_std().map_or(0.0, |ls| ls.iter().map(|l| HALF_LN_2PI_E + l).sum());
    let mut steps = Vec::new();
    let mut episodes = Vec::new();
    let mut env_step = 0usize;
    for (ti, (task, &head)) in tasks.iter().zip(heads).enumerate() {
        let mut states: Vec<EnvState> = (0..h_eps).map(|e| envs::reset(task, reset_seed(seed, ti, e))).collect();
        let mut per_episode: Vec<Vec<StepRecord>> = vec![Vec::with_capacity(task.horizon); h_eps];
        for t in 0..task.horizon {
            let obs = obs_matrix(task, &states);
            let (mean, log_std) = policy.head_outputs(&obs, head)?;
            let (z, log_prob) = sample_rows(&mean, &log_std, &mut rng);
            let hz = row_entropy(&log_std);
            let mut a = decoder.decode_mean_batch(&z)?;
            let mut decoder_lp = vec![0.0; h_eps];
            if let Some(ls) = &log_std_a {
                let mean_a = a.clone();
                for mut row in a.rows_mut() {
                    for (v, l) in row.iter_mut().zip(ls) {
                        let eps: f64 = rng.sample(StandardNormal);
                        *v += l.exp() * eps;
                    }
                }
                let ls_rows = Array2::from_shape_fn(a.dim(), |(_, j)| ls[j]);
                decoder_lp = row_logprob(&a, &mean_a, &ls_rows);
            }
            let values = policy.values(&obs, head)?;
            let disc_lp = match disc {
                Some(q) => q.logprob_batch(&a, &z)?,
                None => vec![0.0; h_eps],
            };
            for e in 0..h_eps {
                let a_row = a.row(e).to_vec();
                let res = envs::step(task, &states[e], &envs::clip_action(&a_row))?;
                let r_hat = extended_reward(res.reward, hz[e], disc_lp[e], ha, cfg);
                per_episode[e].push(StepRecord {
                    task: ti,
                    episode: e,
                    t,
                    env_step,
                    obs: obs.row(e).to_vec(),
                    z: z.row(e).to_vec(),
                    a: a_row,
                    r_env: res.reward,
                    r_hat,
                    hz: hz[e],
                    disc_lp: disc_lp[e],
                    ha,
                    log_prob: log_prob[e],
                    decoder_log_prob: decoder_lp[e],
                    value: values[e],
                    done: res.done,
                });
                env_step += 1;
                states[e] = res.next_state;
            }
        }
        for (e, ep) in per_episode.into_iter().enumerate() {
            episodes.push(EpisodeSummary {
                task: ti,
                episode: e,
                env_return: ep.iter().map(|s| s.r_env).sum(),
                hat_return: ep.iter().map(|s| s.r_hat).sum(),
            });
            steps.extend(ep);
        }
    }
    Ok(RolloutBatch { steps, episodes, alphas: [cfg.alpha1, cfg.alpha2, cfg.alpha3], env_steps: env_step })
}

/// Deterministic-mode evaluation: both the latent policy and the decoder use
/// their means. Returns the mean environment return per task and the
/// `(z, a)` pairs visited.
pub fn evaluate(
    policy: &TaskPolicy,
    decoder: &dyn ActionDecoder,
    tasks: &[Task],
    heads: &[usize],
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    let mut returns = Vec::with_capacity(tasks.len());
    let mut z_rows = Vec::new();
    let mut a_rows = Vec::new();
    let mut task_ids = Vec::new();
    for (ti, (task, &head)) in tasks.iter().zip(heads).enumerate() {
        let mut states: Vec<EnvState> = (0..episodes).map(|e| envs::reset(task, reset_seed(seed, ti, e))).collect();
        let mut total = 0.0;
        for _ in 0..task.horizon {
            let obs = obs_matrix(task, &states);
            let (mean, _) = policy.head_outputs(&obs, head)?;
            let a = decoder.decode_mean_batch(&mean)?;
            for e in 0..episodes {
                let a_row = a.row(e).to_vec();
                let res = envs::step(task, &states[e], &envs::clip_action(&a_row))?;
                total += res.reward;
                states[e] = res.next_state;
                z_rows.push(mean.row(e).to_vec());
                a_rows.push(a_row);
                task_ids.push(ti);
            }
        }
        returns.push(total / episodes as f64);
    }
    Ok(EvalResult { returns, z: z_rows, a: a_rows, task: task_ids })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub returns: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    /// Decoded actions before clipping.
    pub a: Vec<Vec<f64>>,
    pub task: Vec<usize>,
}
