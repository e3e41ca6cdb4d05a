use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::rollout::RolloutBatch;
use crate::diffnet::{Adam, Gradients, Graph, ParamSet, Var};
use crate::error::{config_err, Error, Result};
use crate::synergy::{row_logprob, SynergyModel, TaskPolicy};

/// Importance ratios above this mean the batch was not produced by the
/// current (or immediately previous) parameters.
pub const STALE_RATIO: f64 = 1e3;

/// Generalised advantage estimation over episodes laid out contiguously.
/// A `done` step bootstraps from 0. Returns `(advantages, value targets)`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return config_err(format!(
            "gae inputs differ in length: {} rewards, {} values, {} dones",
            rewards.len(),
            values.len(),
            dones.len()
        ));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = 0.0;
    let mut acc = 0.0;
    for t in (0..n).rev() {
        if dones[t] {
            next_value = 0.0;
            acc = 0.0;
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
        next_value = values[t];
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Shifts and scales to mean 0, standard deviation 1 (population form).
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len().max(1) as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Per-step clipped surrogate `min(ρA, clip(ρ, 1-ε, 1+ε)A)`.
pub fn clipped_objective(ratio: f64, adv: f64, clip_eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv)
}

/// Mean clipped surrogate over a batch.
pub fn surrogate(ratios: &[f64], advs: &[f64], clip_eps: f64) -> f64 {
    let n = ratios.len().max(1) as f64;
    ratios.iter().zip(advs).map(|(&r, &a)| clipped_objective(r, a, clip_eps)).sum::<f64>() / n
}

/// Optimiser state carried across iterations.
#[derive(Clone, Debug, Default)]
pub struct PpoState {
    pub pi_adam: Adam,
    pub v_adam: Adam,
    pub decoder_adam: Adam,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PpoReport {
    /// Mean clipped surrogate over all minibatch steps of the last epoch.
    pub surrogate: f64,
    pub value_loss: f64,
    pub decoder_loss: f64,
    /// Steps seen per head in one epoch.
    pub per_head_counts: BTreeMap<usize, usize>,
    pub max_ratio: f64,
    pub minibatches: usize,
}

/// Rows of one head inside a minibatch.
pub(crate) struct HeadRows {
    pub obs: Array2<f64>,
    pub z: Array2<f64>,
    pub log_prob_old: Array2<f64>,
    pub adv: Array2<f64>,
    pub target: Array2<f64>,
}

pub(crate) struct HeadTerms {
    pub objective_sum: Var,
    pub value_sq_sum: Var,
    pub max_ratio: f64,
}

/// Clipped-surrogate and squared value-error sums for one head's rows.
pub(crate) fn head_terms(
    g: &mut Graph,
    policy: &TaskPolicy,
    params: &ParamSet,
    head: usize,
    rows: HeadRows,
    clip_eps: f64,
) -> Result<HeadTerms> {
    let obs = g.input(rows.obs);
    let z = g.input(rows.z);
    let old = g.input(rows.log_prob_old);
    let adv = g.input(rows.adv);
    let target = g.input(rows.target);
    let (mean, log_std) = policy.graph_head(g, params, head, obs)?;
    let lp = g.gauss_logprob(z, mean, log_std)?;
    let diff = g.sub(lp, old)?;
    let ratio = g.exp(diff);
    let max_ratio = g.value(ratio).iter().copied().fold(0.0, f64::max);
    let unclipped = g.mul(ratio, adv)?;
    let clipped_ratio = g.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    let clipped = g.mul(clipped_ratio, adv)?;
    let obj = g.min(unclipped, clipped)?;
    let objective_sum = g.sum(obj);
    let v = policy.graph_value(g, params, head, obs)?;
    let err = g.sub(v, target)?;
    let sq = g.square(err);
    let value_sq_sum = g.sum(sq);
    Ok(HeadTerms { objective_sum, value_sq_sum, max_ratio })
}

fn column(values: impl Iterator<Item = f64>) -> Array2<f64> {
    let v: Vec<f64> = values.collect();
    Array2::from_shape_vec((v.len(), 1), v).expect("column")
}

pub(crate) fn matrix(rows: &[&[f64]]) -> Array2<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j])
}

/// Clips each parameter group to `max_norm` and applies one Adam step per group.
pub(crate) fn apply_policy_grads(
    policy: &mut TaskPolicy,
    grads: &Gradients,
    cfg: &TrainConfig,
    state: &mut PpoState,
) -> Result<()> {
    let mut pi = grads.select_containing(".pi.");
    let mut v = grads.select_containing(".v.");
    pi.clip_norm(cfg.max_grad_norm);
    v.clip_norm(cfg.max_grad_norm);
    state.pi_adam.step(&mut policy.params, &pi, cfg.lr_policy)?;
    state.v_adam.step(&mut policy.params, &v, cfg.lr_policy)?;
    Ok(())
}

/// Fails when the current parameters assign any stored latent an importance
/// ratio above [`STALE_RATIO`], i.e. the batch was not collected with them.
fn check_fresh(policy: &TaskPolicy, batch: &RolloutBatch, step_heads: &[usize]) -> Result<()> {
    let mut by_head: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &h) in step_heads.iter().enumerate() {
        by_head.entry(h).or_default().push(i);
    }
    for (head, idx) in by_head {
        let steps: Vec<_> = idx.iter().map(|&i| &batch.steps[i]).collect();
        let obs = matrix(&steps.iter().map(|s| s.obs.as_slice()).collect::<Vec<_>>());
        let z = matrix(&steps.iter().map(|s| s.z.as_slice()).collect::<Vec<_>>());
        let (mean, log_std) = policy.head_outputs(&obs, head)?;
        let lp = row_logprob(&z, &mean, &log_std);
        for (s, l) in steps.iter().zip(lp) {
            let ratio = (l - s.log_prob).exp();
            if !(ratio <= STALE_RATIO) {
                return Err(Error::StaleBatch(format!(
                    "importance ratio {ratio:.3e} on head {head} exceeds {STALE_RATIO:e} before any update"
                )));
            }
        }
    }
    Ok(())
}

/// PPO over `ppo_epochs` shuffled passes. The policy ratio uses `π(z|s,n)`
/// only. The decoder, when trainable, follows its own clipped surrogate on
/// `p(a|z)` at the stored actions (at the first step this is the
/// advantage-weighted log-likelihood gradient) plus the `α3` entropy bonus.
pub fn ppo_update(
    policy: &mut TaskPolicy,
    mut model: Option<&mut SynergyModel>,
    batch: &RolloutBatch,
    heads: &[usize],
    cfg: &TrainConfig,
    state: &mut PpoState,
    shuffle_seed: u64,
) -> Result<PpoReport> {
    if batch.is_empty() {
        return config_err("PPO update needs a non-empty batch");
    }
    let rewards: Vec<f64> = batch.steps.iter().map(|s| s.r_hat).collect();
    let values: Vec<f64> = batch.steps.iter().map(|s| s.value).collect();
    let dones: Vec<bool> = batch.steps.iter().map(|s| s.done).collect();
    let (adv_raw, targets) = gae(&rewards, &values, &dones, cfg.gamma, cfg.gae_lambda)?;
    let adv = normalize_advantages(&adv_raw);
    let head_of = |task: usize| -> Result<usize> {
        let h = *heads.get(task).ok_or_else(|| Error::Config(format!("no head for task {task}")))?;
        policy.head_for(h)
    };
    let step_heads: Vec<usize> = batch.steps.iter().map(|s| head_of(s.task)).collect::<Result<_>>()?;
    let train_decoder = cfg.train_decoder && cfg.decoder_noise && model.as_ref().is_some_and(|m| !m.frozen);

    check_fresh(policy, batch, &step_heads)?;

    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut report = PpoReport::default();
    for epoch in 0..cfg.ppo_epochs {
        order.shuffle(&mut rng);
        let last_epoch = epoch + 1 == cfg.ppo_epochs;
        let (mut obj_total, mut v_total, mut dec_total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.minibatch) {
            let m = chunk.len() as f64;
            let mut by_head: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &i in chunk {
                by_head.entry(step_heads[i]).or_default().push(i);
            }
            let mut g = Graph::new();
            let mut obj_sum: Option<Var> = None;
            let mut v_sum: Option<Var> = None;
            for (&head, idx) in &by_head {
                let steps: Vec<_> = idx.iter().map(|&i| &batch.steps[i]).collect();
                let rows = HeadRows {
                    obs: matrix(&steps.iter().map(|s| s.obs.as_slice()).collect::<Vec<_>>()),
                    z: matrix(&steps.iter().map(|s| s.z.as_slice()).collect::<Vec<_>>()),
                    log_prob_old: column(steps.iter().map(|s| s.log_prob)),
                    adv: column(idx.iter().map(|&i| adv[i])),
                    target: column(idx.iter().map(|&i| targets[i])),
                };
                let terms = head_terms(&mut g, policy, &policy.params, head, rows, cfg.clip_eps)?;
                report.max_ratio = report.max_ratio.max(terms.max_ratio);
                if epoch == 0 {
                    *report.per_head_counts.entry(head).or_default() += idx.len();
                }
                obj_sum = Some(match obj_sum {
                    None => terms.objective_sum,
                    Some(acc) => g.add(acc, terms.objective_sum)?,
                });
                v_sum = Some(match v_sum {
                    None => terms.value_sq_sum,
                    Some(acc) => g.add(acc, terms.value_sq_sum)?,
                });
            }
            let obj_sum = obj_sum.expect("non-empty chunk");
            let v_sum = v_sum.expect("non-empty chunk");
            let neg_obj = g.scale(obj_sum, -1.0 / m);
            let v_loss = g.scale(v_sum, cfg.value_coef / m);
            let mut loss = g.add(neg_obj, v_loss)?;
            obj_total += g.scalar_value(obj_sum);
            v_total += g.scalar_value(v_sum);

            if train_decoder {
                let model = model.as_deref().expect("checked");
                let steps: Vec<_> = chunk.iter().map(|&i| &batch.steps[i]).collect();
                let z = g.input(matrix(&steps.iter().map(|s| s.z.as_slice()).collect::<Vec<_>>()));
                let a = g.input(matrix(&steps.iter().map(|s| s.a.as_slice()).collect::<Vec<_>>()));
                let w = g.input(column(chunk.iter().map(|&i| adv[i])));
                let mean = model.graph_mean(&mut g, &model.params, z)?;
                let ls = model.graph_log_std(&mut g, &model.params)?;
                let lp = g.gauss_logprob(a, mean, ls)?;
                let old = g.input(column(steps.iter().map(|s| s.decoder_log_prob)));
                let diff = g.sub(lp, old)?;
                let ratio = g.exp(diff);
                let unclipped = g.mul(ratio, w)?;
                let clipped_ratio = g.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                let clipped = g.mul(clipped_ratio, w)?;
                let obj = g.min(unclipped, clipped)?;
                let pathwise = g.sum(obj);
                let pathwise = g.scale(pathwise, -1.0 / m);
                let ent = g.gauss_entropy(ls);
                let ent = g.scale(ent, -cfg.alpha3);
                let dec_loss = g.add(pathwise, ent)?;
                dec_total += g.scalar_value(dec_loss) * m;
                loss = g.add(loss, dec_loss)?;
            }

            let loss_value = g.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!("PPO loss is {loss_value}")));
            }
            let grads = g.backward(loss)?;
            apply_policy_grads(policy, &grads, cfg, state)?;
            if train_decoder {
                let model = model.as_deref_mut().expect("checked");
                let mut dg = grads.select("decoder.");
                dg.clip_norm(cfg.max_grad_norm);
                state.decoder_adam.step(&mut model.params, &dg, cfg.lr_decoder)?;
                model.clamp_std();
            }
            report.minibatches += 1;
        }
        if last_epoch {
            let n = batch.len() as f64;
            report.surrogate = obj_total / n;
            report.value_loss = v_total / n;
            report.decoder_loss = dec_total / n;
        }
    }
    if !policy.params.all_finite() || model.as_ref().is_some_and(|m| !m.params.all_finite()) {
        return Err(Error::NonFinite("parameters after PPO update".into()));
    }
    Ok(report)
}
