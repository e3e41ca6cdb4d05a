//! Plain multi-task PPO acting directly in action space, with no decoder,
//! discriminator or entropy bonuses. Used as the reference the DiscoSyn
//! trainer must reduce to when its extras are switched off.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::ppo::{apply_policy_grads, gae, head_terms, matrix, normalize_advantages, HeadRows, PpoState};
use super::rollout::{obs_matrix, reset_seed};
use crate::diffnet::{Graph, Var};
use crate::envs::{self, EnvState, Task};
use crate::error::{config_err, Error, Result};
use crate::seeding::{streams, SeedStream};
use crate::synergy::{sample_rows, TaskPolicy};

#[derive(Clone, Debug, PartialEq)]
pub struct VanillaStep {
    pub task: usize,
    pub obs: Vec<f64>,
    pub a: Vec<f64>,
    pub reward: f64,
    pub log_prob: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct VanillaOutput {
    pub policy: TaskPolicy,
    /// Deterministic-evaluation return per iteration and task.
    pub eval_returns: Vec<Vec<f64>>,
}

fn rollout(policy: &TaskPolicy, tasks: &[Task], episodes: usize, seed: u64) -> Result<Vec<VanillaStep>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (ti, task) in tasks.iter().enumerate() {
        let mut states: Vec<EnvState> = (0..episodes).map(|e| envs::reset(task, reset_seed(seed, ti, e))).collect();
        let mut per_episode: Vec<Vec<VanillaStep>> = vec![Vec::new(); episodes];
        for _ in 0..task.horizon {
            let obs = obs_matrix(task, &states);
            let (mean, log_std) = policy.head_outputs(&obs, ti)?;
            let (a, log_prob) = sample_rows(&mean, &log_std, &mut rng);
            let values = policy.values(&obs, ti)?;
            for e in 0..episodes {
                let a_row = a.row(e).to_vec();
                let res = envs::step(task, &states[e], &envs::clip_action(&a_row))?;
                per_episode[e].push(VanillaStep {
                    task: ti,
                    obs: obs.row(e).to_vec(),
                    a: a_row,
                    reward: res.reward,
                    log_prob: log_prob[e],
                    value: values[e],
                    done: res.done,
                });
                states[e] = res.next_state;
            }
        }
        out.extend(per_episode.into_iter().flatten());
    }
    Ok(out)
}

fn column(v: Vec<f64>) -> Array2<f64> {
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).expect("column")
}

fn update(policy: &mut TaskPolicy, steps: &[VanillaStep], cfg: &TrainConfig, state: &mut PpoState, seed: u64) -> Result<()> {
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let values: Vec<f64> = steps.iter().map(|s| s.value).collect();
    let dones: Vec<bool> = steps.iter().map(|s| s.done).collect();
    let (adv, targets) = gae(&rewards, &values, &dones, cfg.gamma, cfg.gae_lambda)?;
    let adv = normalize_advantages(&adv);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..steps.len()).collect();
    for _ in 0..cfg.ppo_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch) {
            let mut by_task: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &i in chunk {
                by_task.entry(steps[i].task).or_default().push(i);
            }
            let mut g = Graph::new();
            let mut total: Option<(Var, Var)> = None;
            for (&task, idx) in &by_task {
                let rows = HeadRows {
                    obs: matrix(&idx.iter().map(|&i| steps[i].obs.as_slice()).collect::<Vec<_>>()),
                    z: matrix(&idx.iter().map(|&i| steps[i].a.as_slice()).collect::<Vec<_>>()),
                    log_prob_old: column(idx.iter().map(|&i| steps[i].log_prob).collect()),
                    adv: column(idx.iter().map(|&i| adv[i]).collect()),
                    target: column(idx.iter().map(|&i| targets[i]).collect()),
                };
                let t = head_terms(&mut g, policy, &policy.params, task, rows, cfg.clip_eps)?;
                total = Some(match total {
                    None => (t.objective_sum, t.value_sq_sum),
                    Some((o, v)) => (g.add(o, t.objective_sum)?, g.add(v, t.value_sq_sum)?),
                });
            }
            let (obj, v) = total.expect("non-empty chunk");
            let m = chunk.len() as f64;
            let neg_obj = g.scale(obj, -1.0 / m);
            let v_loss = g.scale(v, cfg.value_coef / m);
            let loss = g.add(neg_obj, v_loss)?;
            if !g.scalar_value(loss).is_finite() {
                return Err(Error::NonFinite("vanilla PPO loss".into()));
            }
            let grads = g.backward(loss)?;
            apply_policy_grads(policy, &grads, cfg, state)?;
        }
    }
    Ok(())
}

fn eval(policy: &TaskPolicy, tasks: &[Task], episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut returns = Vec::with_capacity(tasks.len());
    for (ti, task) in tasks.iter().enumerate() {
        let mut states: Vec<EnvState> = (0..episodes).map(|e| envs::reset(task, reset_seed(seed, ti, e))).collect();
        let mut total = 0.0;
        for _ in 0..task.horizon {
            let (mean, _) = policy.head_outputs(&obs_matrix(task, &states), ti)?;
            for e in 0..episodes {
                let res = envs::step(task, &states[e], &envs::clip_action(&mean.row(e).to_vec()))?;
                total += res.reward;
                states[e] = res.next_state;
            }
        }
        returns.push(total / episodes as f64);
    }
    Ok(returns)
}

/// Multi-task PPO with one head per task acting directly on the `d` joints.
/// `observer(iteration, steps)` sees every rollout.
pub fn vanilla_ppo(
    tasks: &[Task],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, &[VanillaStep]),
) -> Result<VanillaOutput> {
    cfg.validate()?;
    let first = tasks.first().ok_or_else(|| Error::Config("at least one task is required".into()))?;
    if cfg.b != first.d {
        return config_err(format!("action-space PPO needs b = d = {}, got {}", first.d, cfg.b));
    }
    let seeds = SeedStream::new(cfg.seed);
    let mut policy = TaskPolicy::new(
        first.obs_dim(),
        first.d,
        tasks.len(),
        &cfg.policy_net,
        false,
        &mut seeds.rng(streams::POLICY_INIT, 0),
    )?;
    let mut state = PpoState::default();
    let mut eval_returns = Vec::new();
    let eval_seed = seeds.seed(streams::EVAL, 0);
    for it in 0..cfg.iterations {
        let steps = rollout(&policy, tasks, cfg.episodes_per_task, seeds.seed(streams::ROLLOUT, it as u64))?;
        observer(it + 1, &steps);
        update(&mut policy, &steps, cfg, &mut state, seeds.seed(streams::SHUFFLE, it as u64))?;
        eval_returns.push(eval(&policy, tasks, cfg.eval_episodes, eval_seed)?);
    }
    Ok(VanillaOutput { policy, eval_returns })
}
