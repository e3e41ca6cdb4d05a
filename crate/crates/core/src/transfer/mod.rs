//! Learning unseen tasks on top of a frozen synergy model, and the
//! sparse-reward exploration benchmark against a full-dimensional agent.

use std::path::Path;

use serde::Serialize;

use crate::baselines::meets_threshold;
use crate::discorl::{csv_err, train_frozen, CurveRow, TrainConfig};
use crate::envs::{Task, TaskKind};
use crate::error::{config_err, Error, Result};
use crate::seeding::{streams, SeedStream};
use crate::synergy::{ActionDecoder, SynergyModel, TaskPolicy};

/// Outcome of training one fresh head on a frozen decoder.
#[derive(Clone, Debug, Serialize)]
pub struct TransferResult {
    pub task: String,
    pub curves: Vec<CurveRow>,
    /// Environment-step index of the first nonzero training reward.
    pub first_reward_step: Option<usize>,
    pub env_steps: usize,
    pub final_return: f64,
    pub reference: Option<f64>,
    /// First iteration whose evaluation return meets the threshold.
    pub solved_at: Option<usize>,
    /// Whether any evaluation met the threshold; absent without a reference.
    pub success: Option<bool>,
    /// Sum over iterations of the mean per-step training reward.
    pub reward_auc: f64,
    pub decoder_digest: String,
}

impl TransferResult {
    /// `(iteration, eval_return)` pairs.
    pub fn eval_curve(&self) -> Vec<(usize, f64)> {
        self.curves.iter().filter_map(|c| c.eval_return.map(|r| (c.iteration, r))).collect()
    }
}

/// Transfer settings: bonuses tied to decoder training are off, the
/// latent-entropy bonus stays, and the full iteration budget is used.
pub fn transfer_config(cfg: &TrainConfig, b: usize) -> TrainConfig {
    TrainConfig {
        b,
        alpha2: 0.0,
        alpha3: 0.0,
        train_decoder: false,
        single_head: false,
        early_stop: false,
        bound_every: 0,
        ..cfg.clone()
    }
}

/// Fresh one-head policy drawn from the head-initialisation stream.
fn fresh_head(task: &Task, cfg: &TrainConfig) -> Result<TaskPolicy> {
    let mut rng = SeedStream::new(cfg.seed).rng(streams::HEAD_INIT, 0);
    TaskPolicy::new(task.obs_dim(), cfg.b, 1, &cfg.policy_net, false, &mut rng)
}

fn run_head(decoder: &dyn ActionDecoder, task: &Task, cfg: &TrainConfig, reference: Option<f64>) -> Result<TransferResult> {
    if task.d != decoder.action_dim() {
        return config_err(format!("task has d = {}, decoder produces {}", task.d, decoder.action_dim()));
    }
    let before = decoder.fingerprint();
    let mut policy = fresh_head(task, cfg)?;
    let log = train_frozen(&mut policy, decoder, None, std::slice::from_ref(task), &[0], cfg, &mut |_, _| {})?;
    let after = decoder.fingerprint();
    if before != after {
        return Err(Error::Integrity(format!("decoder changed during transfer: {before} -> {after}")));
    }
    let final_return = match &log.final_eval {
        Some(e) => e.returns[0],
        None => {
            let seed = SeedStream::new(cfg.seed).seed(streams::EVAL, 0);
            crate::discorl::evaluate(&policy, decoder, std::slice::from_ref(task), &[0], cfg.eval_episodes, seed)?.returns[0]
        }
    };
    let solved_at = reference.and_then(|r| {
        log.curves.iter().find(|c| c.eval_return.is_some_and(|v| meets_threshold(v, r))).map(|c| c.iteration)
    });
    let success = reference.map(|r| solved_at.is_some() || (log.iterations_run == 0 && meets_threshold(final_return, r)));
    Ok(TransferResult {
        task: task.name.clone(),
        reward_auc: log.curves.iter().map(|c| c.r_env_mean).sum(),
        curves: log.curves,
        first_reward_step: log.first_reward_step,
        env_steps: log.env_steps,
        final_return,
        reference,
        solved_at,
        success,
        decoder_digest: after,
    })
}

/// Trains a fresh single head on `new_task` in the latent space of the
/// frozen `model`. The decoder's digest is compared before and after.
pub fn transfer_train(
    model: &SynergyModel,
    new_task: &Task,
    cfg: &TrainConfig,
    reference: Option<f64>,
) -> Result<TransferResult> {
    if !model.frozen {
        return config_err("transfer requires a frozen synergy model");
    }
    let cfg = transfer_config(cfg, model.b);
    cfg.validate()?;
    run_head(model, new_task, &cfg, reference)
}

/// One seed of the sparse benchmark.
#[derive(Clone, Debug, Serialize)]
pub struct SparsePair {
    pub seed: u64,
    pub synergy: TransferResult,
    pub full: TransferResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct SparseBenchmark {
    pub budget: usize,
    pub iterations: usize,
    pub pairs: Vec<SparsePair>,
}

impl SparseBenchmark {
    pub fn synergy_median(&self) -> Option<f64> {
        median_first_reward(&self.pairs.iter().map(|p| p.synergy.first_reward_step).collect::<Vec<_>>())
    }

    pub fn full_median(&self) -> Option<f64> {
        median_first_reward(&self.pairs.iter().map(|p| p.full.first_reward_step).collect::<Vec<_>>())
    }
}

/// Median with absent values ranked above every step count; `None` when the
/// median itself is absent or the list is empty.
pub fn median_first_reward(steps: &[Option<usize>]) -> Option<f64> {
    if steps.is_empty() {
        return None;
    }
    let mut v: Vec<Option<usize>> = steps.to_vec();
    v.sort_by_key(|s| (s.is_none(), s.unwrap_or(0)));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2].map(|s| s as f64)
    } else {
        Some((v[n / 2 - 1]? as f64 + v[n / 2]? as f64) / 2.0)
    }
}

/// Iterations needed to spend `budget` environment steps on one task.
pub fn iterations_for_budget(task: &Task, cfg: &TrainConfig, budget: usize) -> usize {
    budget.div_ceil(cfg.episodes_per_task * task.horizon)
}

/// Runs the synergy agent (fresh head on the frozen `model`) and a
/// full-dimensional agent (identity decoder) on `sparse_task` with the same
/// settings and seed for each entry of `seeds`. Reward steps past `budget`
/// count as absent.
pub fn sparse_benchmark(
    model: &SynergyModel,
    sparse_task: &Task,
    cfg: &TrainConfig,
    budget: usize,
    seeds: &[u64],
) -> Result<SparseBenchmark> {
    if sparse_task.kind != TaskKind::SparseValve {
        return config_err("the sparse benchmark needs a sparse valve task");
    }
    if !model.frozen {
        return config_err("the sparse benchmark requires a frozen synergy model");
    }
    let iterations = iterations_for_budget(sparse_task, cfg, budget);
    let identity = SynergyModel::identity(sparse_task.d);
    let mut pairs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let arm = |decoder: &SynergyModel| -> Result<TransferResult> {
            let c = TrainConfig { seed, iterations, ..transfer_config(cfg, decoder.b) };
            c.validate()?;
            let mut r = run_head(decoder, sparse_task, &c, None)?;
            r.first_reward_step = r.first_reward_step.filter(|&s| s < budget);
            Ok(r)
        };
        pairs.push(SparsePair { seed, synergy: arm(model)?, full: arm(&identity)? });
    }
    Ok(SparseBenchmark { budget, iterations, pairs })
}

fn opt_step(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |s| s.to_string())
}

/// `seed,synergy_first_reward_step,full_first_reward_step,budget`; absent
/// steps are written as `none`.
pub fn write_first_reward_csv(path: &Path, bench: &SparseBenchmark) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["seed", "synergy_first_reward_step", "full_first_reward_step", "budget"]).map_err(csv_err)?;
    for p in &bench.pairs {
        w.write_record([
            p.seed.to_string(),
            opt_step(p.synergy.first_reward_step),
            opt_step(p.full.first_reward_step),
            bench.budget.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
