use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::bound::entropy_bound_gap;
use super::config::TrainConfig;
use super::ppo::{ppo_update, PpoState};
use super::rollout::{collect_with_heads, evaluate, EvalResult, RolloutBatch};
use crate::envs::Task;
use crate::error::{config_err, Error, Result};
use crate::seeding::{streams, SeedStream};
use crate::synergy::{ActionDecoder, DecoderForm, Discriminator, SynergyModel, TaskPolicy};

/// One row of the training log, per iteration and task.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub task: usize,
    /// Deterministic-evaluation return; present on evaluation iterations.
    pub eval_return: Option<f64>,
    pub r_env_mean: f64,
    #[serde(rename = "Hz_mean")]
    pub hz_mean: f64,
    pub disc_lp_mean: f64,
    #[serde(rename = "Ha_mean")]
    pub ha_mean: f64,
    pub bound_gap: Option<f64>,
}

/// Everything the loop records apart from the models themselves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub curves: Vec<CurveRow>,
    /// `(task, z)` samples from the final rollout.
    pub z_samples: Vec<(usize, Vec<f64>)>,
    pub iterations_run: usize,
    pub early_stopped: bool,
    pub final_eval: Option<EvalResult>,
    /// Environment steps consumed by rollouts, excluding evaluation.
    pub env_steps: usize,
    /// Global index of the first rollout step with non-zero environment reward.
    pub first_reward_step: Option<usize>,
}

impl TrainLog {
    /// Returns of the most recent evaluation, one per task.
    pub fn last_eval_returns(&self) -> Option<Vec<f64>> {
        self.final_eval.as_ref().map(|e| e.returns.clone())
    }

    /// Best evaluation return seen per task.
    pub fn best_eval_returns(&self, tasks: usize) -> Vec<f64> {
        let mut best = vec![f64::NEG_INFINITY; tasks];
        for row in &self.curves {
            if let Some(r) = row.eval_return {
                best[row.task] = best[row.task].max(r);
            }
        }
        best
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub policy: TaskPolicy,
    pub model: SynergyModel,
    pub disc: Discriminator,
    pub log: TrainLog,
}

/// Freshly initialised policy, decoder and discriminator for `tasks`.
pub fn init_models(tasks: &[Task], cfg: &TrainConfig) -> Result<(TaskPolicy, SynergyModel, Discriminator)> {
    let first = tasks.first().ok_or_else(|| Error::Config("at least one task is required".into()))?;
    let seeds = SeedStream::new(cfg.seed);
    let d = first.d;
    let policy = TaskPolicy::new(
        first.obs_dim(),
        cfg.b,
        tasks.len(),
        &cfg.policy_net,
        cfg.single_head,
        &mut seeds.rng(streams::POLICY_INIT, 0),
    )?;
    let mut rng = seeds.rng(streams::DECODER_INIT, 0);
    let model = match cfg.decoder_form {
        DecoderForm::Linear => SynergyModel::linear(cfg.b, d, &mut rng)?,
        DecoderForm::Mlp => SynergyModel::mlp(cfg.b, d, &cfg.decoder_net.hidden, cfg.decoder_net.activation, &mut rng)?,
    };
    let disc = Discriminator::new(cfg.b, d, &cfg.disc_net, &mut seeds.rng(streams::DISC_INIT, 0))?;
    Ok((policy, model, disc))
}

/// Runs the DiscoSyn loop from fresh models: collect, discriminator update,
/// PPO update.
pub fn train(tasks: &[Task], cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with_observer(tasks, cfg, &mut |_, _| {})
}

/// As [`train`], calling `observer(iteration, batch)` on every rollout.
pub fn train_with_observer(
    tasks: &[Task],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, &RolloutBatch),
) -> Result<TrainOutput> {
    cfg.validate()?;
    let (mut policy, mut model, mut disc) = init_models(tasks, cfg)?;
    let heads: Vec<usize> = (0..tasks.len()).collect();
    let log = run_loop(&mut policy, DecoderSlot::Trainable(&mut model), Some(&mut disc), tasks, &heads, cfg, observer)?;
    Ok(TrainOutput { policy, model, disc, log })
}

/// Trains `policy` (heads `heads[i]` for `tasks[i]`) on top of a frozen
/// decoder. The decoder is never modified.
pub fn train_frozen(
    policy: &mut TaskPolicy,
    decoder: &dyn ActionDecoder,
    disc: Option<&mut Discriminator>,
    tasks: &[Task],
    heads: &[usize],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, &RolloutBatch),
) -> Result<TrainLog> {
    cfg.validate()?;
    run_loop(policy, DecoderSlot::Frozen(decoder), disc, tasks, heads, cfg, observer)
}

enum DecoderSlot<'a> {
    Trainable(&'a mut SynergyModel),
    Frozen(&'a dyn ActionDecoder),
}

impl DecoderSlot<'_> {
    fn decoder(&self) -> &dyn ActionDecoder {
        match self {
            DecoderSlot::Trainable(m) => &**m,
            DecoderSlot::Frozen(d) => *d,
        }
    }

    fn synergy(&self) -> Option<&SynergyModel> {
        match self {
            DecoderSlot::Trainable(m) => Some(&**m),
            DecoderSlot::Frozen(_) => None,
        }
    }
}

/// Least-squares slope of `ys` against `0, 1, 2, ...`.
pub fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        num += dx * (y - my);
        den += dx * dx;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// True once every task's evaluation curve over the last `window`
/// evaluations has an absolute per-iteration slope below `tol`.
pub fn converged(history: &[Vec<f64>], window: usize, eval_every: usize, tol: f64) -> bool {
    !history.is_empty()
        && history.iter().all(|h| {
            if h.len() < window {
                return false;
            }
            (slope(&h[h.len() - window..]) / eval_every as f64).abs() < tol
        })
}

/// Up to `k` evenly spaced latent samples per task.
fn sample_latents(batch: &RolloutBatch, tasks: usize, k: usize) -> Vec<(usize, Vec<f64>)> {
    let mut out = Vec::new();
    for t in 0..tasks {
        let zs: Vec<&Vec<f64>> = batch.steps.iter().filter(|s| s.task == t).map(|s| &s.z).collect();
        let take = k.min(zs.len());
        for i in 0..take {
            out.push((t, zs[i * zs.len() / take].clone()));
        }
    }
    out
}

/// States at which the entropy bound is probed: a few evenly spaced
/// observations from the first episode of each task.
fn probe_states(batch: &RolloutBatch, task: usize) -> Vec<Vec<f64>> {
    let steps: Vec<_> = batch.steps.iter().filter(|s| s.task == task && s.episode == 0).collect();
    let n = 4.min(steps.len());
    (0..n).map(|i| steps[i * steps.len() / n].obs.clone()).collect()
}

fn halted(iteration: usize, err: Error, cfg: &TrainConfig, curves: &[CurveRow], policy: &TaskPolicy) -> Error {
    match err {
        Error::NonFinite(_) | Error::StaleBatch(_) => {
            let tail: Vec<&CurveRow> = curves.iter().rev().take(16).collect();
            let dump = serde_json::json!({
                "iteration": iteration,
                "reason": err.to_string(),
                "config": cfg,
                "recent_curves": tail,
                "policy_params_finite": policy.params.all_finite(),
            });
            Error::Halted { iteration, reason: err.to_string(), dump: Box::new(dump) }
        }
        other => other,
    }
}

fn run_loop(
    policy: &mut TaskPolicy,
    mut slot: DecoderSlot<'_>,
    mut disc: Option<&mut Discriminator>,
    tasks: &[Task],
    heads: &[usize],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, &RolloutBatch),
) -> Result<TrainLog> {
    if heads.len() != tasks.len() {
        return config_err("one head id per task is required");
    }
    let seeds = SeedStream::new(cfg.seed);
    let eval_seed = seeds.seed(streams::EVAL, 0);
    let mut state = PpoState::default();
    let mut log = TrainLog::default();
    let mut history: Vec<Vec<f64>> = vec![Vec::new(); tasks.len()];
    for it in 0..cfg.iterations {
        let iteration = it + 1;
        let mut step = |policy: &mut TaskPolicy,
                    slot: &mut DecoderSlot<'_>,
                    disc: &mut Option<&mut Discriminator>|
         -> Result<(RolloutBatch, Vec<Option<f64>>)> {
            let batch = collect_with_heads(
                policy,
                slot.decoder(),
                disc.as_deref(),
                tasks,
                heads,
                cfg,
                seeds.seed(streams::ROLLOUT, it as u64),
            )?;
            if let Some(q) = disc.as_deref_mut() {
                let (z, a) = batch.latent_action_pairs();
                q.update(&z, &a, cfg.lr_disc, cfg.disc_epochs)?;
            }
            let mut gaps = vec![None; tasks.len()];
            let bound_due = cfg.bound_every > 0 && iteration % cfg.bound_every == 0;
            if let (true, Some(model), Some(q)) = (bound_due, slot.synergy(), disc.as_deref()) {
                for (ti, &h) in heads.iter().enumerate() {
                    let states = probe_states(&batch, ti);
                    let per_state = cfg.bound_samples.div_ceil(states.len()).max(1000);
                    let seed = seeds.child(streams::BOUND, it as u64).seed(ti as u64, 0);
                    let g = entropy_bound_gap(policy, model, q, &states, h, per_state, seed)?;
                    gaps[ti] = g.gap;
                }
            }
            let model = match slot {
                DecoderSlot::Trainable(m) => Some(&mut **m),
                DecoderSlot::Frozen(_) => None,
            };
            ppo_update(policy, model, &batch, heads, cfg, &mut state, seeds.seed(streams::SHUFFLE, it as u64))?;
            Ok((batch, gaps))
        };
        let (batch, gaps) = step(policy, &mut slot, &mut disc).map_err(|e| halted(iteration, e, cfg, &log.curves, policy))?;
        observer(iteration, &batch);
        if log.first_reward_step.is_none() {
            log.first_reward_step = batch.first_reward_step().map(|s| s + log.env_steps);
        }
        log.env_steps += batch.env_steps;

        let is_last = iteration == cfg.iterations;
        let eval = if iteration % cfg.eval_every == 0 || is_last {
            Some(evaluate(policy, slot.decoder(), tasks, heads, cfg.eval_episodes, eval_seed)?)
        } else {
            None
        };
        for ti in 0..tasks.len() {
            let m = batch.task_means(ti);
            let eval_return = eval.as_ref().map(|e| e.returns[ti]);
            if let Some(r) = eval_return {
                history[ti].push(r);
            }
            log.curves.push(CurveRow {
                iteration,
                task: ti,
                eval_return,
                r_env_mean: m[0],
                hz_mean: m[1],
                disc_lp_mean: m[2],
                ha_mean: m[3],
                bound_gap: gaps[ti],
            });
        }
        log.iterations_run = iteration;
        let stop = cfg.early_stop
            && iteration >= cfg.min_iterations
            && converged(&history, cfg.early_stop_window, cfg.eval_every, cfg.early_stop_tol);
        if stop || is_last {
            log.z_samples = sample_latents(&batch, tasks.len(), cfg.z_samples_per_task);
            log.final_eval = match eval {
                Some(e) => Some(e),
                None => Some(evaluate(policy, slot.decoder(), tasks, heads, cfg.eval_episodes, eval_seed)?),
            };
            log.early_stopped = stop && !is_last;
            break;
        }
    }
    Ok(log)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `iteration,task,eval_return,r_env_mean,Hz_mean,disc_lp_mean,Ha_mean,bound_gap`.
pub fn write_curves_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["iteration", "task", "eval_return", "r_env_mean", "Hz_mean", "disc_lp_mean", "Ha_mean", "bound_gap"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.task.to_string(),
            opt(r.eval_return),
            r.r_env_mean.to_string(),
            r.hz_mean.to_string(),
            r.disc_lp_mean.to_string(),
            r.ha_mean.to_string(),
            opt(r.bound_gap),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `task,z0,z1,...`.
pub fn write_z_samples_csv(path: &Path, samples: &[(usize, Vec<f64>)]) -> Result<()> {
    let b = samples.first().map_or(0, |s| s.1.len());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["task".to_string()];
    header.extend((0..b).map(|i| format!("z{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (t, z) in samples {
        let mut rec = vec![t.to_string()];
        rec.extend(z.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
