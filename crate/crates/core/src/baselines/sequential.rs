use crate::discorl::{init_models, train_frozen, TrainConfig, TrainLog};
use crate::envs::Task;
use crate::error::Result;
use crate::synergy::{ActionDecoder, SynergyModel, TaskPolicy};

/// Fraction of the reference return a run must reach to count as solved.
pub const SUCCESS_FRACTION: f64 = 0.9;

/// True when `ret` is within 10% of `reference` from below, i.e.
/// `ret ≥ 0.9 · reference` for positive references.
pub fn meets_threshold(ret: f64, reference: f64) -> bool {
    ret >= reference - (1.0 - SUCCESS_FRACTION) * reference.abs()
}

#[derive(Clone, Debug)]
pub struct IndependentResult {
    pub policy: TaskPolicy,
    /// Final deterministic-evaluation return: the success reference.
    pub reference_return: f64,
    pub log: TrainLog,
}

/// Plain PPO on one task in the full action space: no bonuses, latent
/// dimension `d`, decoder fixed to the identity. The reference always uses
/// the whole iteration budget: full-dimensional learning has long flat
/// stretches that the slope test would mistake for convergence.
pub fn train_independent(task: &Task, cfg: &TrainConfig) -> Result<IndependentResult> {
    let cfg = TrainConfig { b: task.d, early_stop: false, ..cfg.clone() }.vanilla();
    let tasks = std::slice::from_ref(task);
    let (mut policy, _, _) = init_models(tasks, &cfg)?;
    let identity = SynergyModel::identity(task.d);
    let log = train_frozen(&mut policy, &identity, None, tasks, &[0], &cfg, &mut |_, _| {})?;
    let reference_return = final_return(&log, &policy, &identity, task, &cfg)?;
    Ok(IndependentResult { policy, reference_return, log })
}

fn final_return(log: &TrainLog, policy: &TaskPolicy, decoder: &dyn ActionDecoder, task: &Task, cfg: &TrainConfig) -> Result<f64> {
    match log.last_eval_returns() {
        Some(r) => Ok(r[0]),
        None => {
            let seed = crate::seeding::SeedStream::new(cfg.seed).seed(crate::seeding::streams::EVAL, 0);
            let e = crate::discorl::evaluate(policy, decoder, std::slice::from_ref(task), &[0], cfg.eval_episodes, seed)?;
            Ok(e.returns[0])
        }
    }
}

#[derive(Clone, Debug)]
pub struct RetrainResult {
    pub policy: TaskPolicy,
    pub log: TrainLog,
    pub final_return: f64,
    /// First iteration whose evaluation return meets the threshold.
    pub solved_at: Option<usize>,
    /// Whether any evaluation met the threshold; absent without a reference.
    pub success: Option<bool>,
}

/// PPO of a fresh single-task latent policy on top of a frozen decoder. The
/// latent dimension is the decoder's. Bonuses are off, as for the
/// independent agents the decoder was extracted from, and the whole
/// iteration budget is used.
pub fn retrain_lowdim(
    decoder: &dyn ActionDecoder,
    task: &Task,
    cfg: &TrainConfig,
    reference: Option<f64>,
) -> Result<RetrainResult> {
    let cfg = TrainConfig { b: decoder.latent_dim(), early_stop: false, ..cfg.clone() }.vanilla();
    let tasks = std::slice::from_ref(task);
    let (mut policy, _, _) = init_models(tasks, &cfg)?;
    let log = train_frozen(&mut policy, decoder, None, tasks, &[0], &cfg, &mut |_, _| {})?;
    let final_return = final_return(&log, &policy, decoder, task, &cfg)?;
    let solved_at = reference.and_then(|r| {
        log.curves.iter().find(|c| c.eval_return.is_some_and(|v| meets_threshold(v, r))).map(|c| c.iteration)
    });
    let success = reference.map(|r| solved_at.is_some() || (log.iterations_run == 0 && meets_threshold(final_return, r)));
    Ok(RetrainResult { policy, log, final_return, solved_at, success })
}
