use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use super::angles::principal_angles;
use super::config::{Command, ExperimentConfig, Method, UnseenTask};
use super::manifest::{blob_hash, Manifest};
use super::report::{
    build_table, render_markdown, table_from_rows, write_references, write_results, write_success_table, ReferenceRow,
    ResultRow, REFERENCES_FILE, RESULTS_FILE,
};
use crate::baselines::{
    ae_fit, collect_dataset, explained_variance, latent_explained_variance, pca_explained_variance, pca_fit,
    retrain_lowdim, train_independent, ActionDataset, Provenance,
};
use crate::diffnet::Checkpoint;
use crate::discorl::{evaluate, train, write_curves_csv, write_json, write_z_samples_csv, CurveRow, EvalResult};
use crate::envs::{
    make_cw_valve, make_cylindrical_valve, make_orthogonal_valve, make_sparse_valve, make_task_set_with,
    make_topdown_screw, oracle_subspace, Task, TaskSet,
};
use crate::error::{config_err, Error, Result};
use crate::seeding::{streams, SeedStream};
use crate::synergy::{ActionDecoder, DecoderForm, SynergyModel, TaskPolicy};
use crate::transfer::{sparse_benchmark, transfer_train, write_first_reward_csv};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const LOG_FILE: &str = "run.log";
pub const FAILURE_FILE: &str = "failure.json";
pub const SYNERGY_FILE: &str = "synergy.json";
pub const POLICY_FILE: &str = "policy.json";
pub const TASK_SET_FILE: &str = "task_set.json";

/// Output directory: the configured one, or `runs/<command>-seed<seed>`.
pub fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.command.name(), cfg.seed)))
}

/// Executes `cfg` and returns its output directory, which holds the
/// resolved configuration, the command's artifacts, a log and a manifest.
/// On failure a `failure.json` describing the error is left in the
/// directory.
pub fn run(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = out_dir(cfg);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(RESOLVED_CONFIG_FILE), cfg.to_json_string())?;
    let mut log = Vec::new();
    let result = dispatch(cfg, &out, &mut log);
    std::fs::write(out.join(LOG_FILE), log.join("\n") + "\n")?;
    if let Err(e) = &result {
        let dump = match e {
            Error::Halted { dump, .. } => (**dump).clone(),
            other => serde_json::json!({ "command": cfg.command.name(), "error": other.to_string() }),
        };
        write_json(&out.join(FAILURE_FILE), &dump)?;
    }
    result?;
    Manifest::build(&out)?.write(&out)?;
    Ok(out)
}

fn dispatch(cfg: &ExperimentConfig, out: &Path, log: &mut Vec<String>) -> Result<()> {
    log.push(format!("command {} seed {}", cfg.command.name(), cfg.seed));
    match cfg.command {
        Command::TrainDiscosyn => train_discosyn(cfg, out, log),
        Command::TrainBaseline => train_baseline(cfg, out, log),
        Command::Transfer => run_transfer(cfg, out, log),
        Command::SparseBench => run_sparse(cfg, out, log),
        Command::Analyze => run_analyze(cfg, out, log),
        Command::Report => run_report(cfg, out, log),
        Command::Eval => run_eval(cfg, out, log),
    }
}

pub fn task_set(cfg: &ExperimentConfig) -> Result<TaskSet> {
    make_task_set_with(cfg.env.set, cfg.env.d, cfg.env.seed, &cfg.env.options)
}

fn method_name(model: &SynergyModel) -> String {
    let form = match model.form {
        DecoderForm::Linear => "L",
        DecoderForm::Mlp => "M",
    };
    format!("DiscoSyn{}-{form}", model.b)
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    Checkpoint::from_json_str(&text)
}

/// Synergy model from a checkpoint file or a run directory, frozen.
pub fn load_synergy(path: &Path) -> Result<SynergyModel> {
    let file = if path.is_dir() { path.join(SYNERGY_FILE) } else { path.to_path_buf() };
    let mut model = SynergyModel::from_checkpoint(&read_checkpoint(&file)?)?;
    model.frozen = true;
    Ok(model)
}

fn load_run(dir: &Path) -> Result<(TaskSet, SynergyModel, TaskPolicy)> {
    let set = TaskSet::from_json_str(&std::fs::read_to_string(dir.join(TASK_SET_FILE))?)?;
    let model = load_synergy(dir)?;
    let policy = TaskPolicy::from_checkpoint(&read_checkpoint(&dir.join(POLICY_FILE))?)?;
    Ok((set, model, policy))
}

fn pair_matrices(e: &EvalResult) -> (Array2<f64>, Array2<f64>) {
    let b = e.z.first().map_or(0, Vec::len);
    let d = e.a.first().map_or(0, Vec::len);
    let z = Array2::from_shape_fn((e.z.len(), b), |(i, j)| e.z[i][j]);
    let a = Array2::from_shape_fn((e.a.len(), d), |(i, j)| e.a[i][j]);
    (z, a)
}

fn max_angle_to_oracle(model: &SynergyModel, tasks: &[Task]) -> Result<Option<Vec<f64>>> {
    match model.rowspace() {
        Some(rows) => Ok(Some(principal_angles(&rows.t().to_owned(), &oracle_subspace(tasks).t().to_owned())?)),
        None => Ok(None),
    }
}

fn write_eval_csv(path: &Path, tasks: &[Task], returns: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::discorl::csv_err)?;
    w.write_record(["task", "name", "eval_return"]).map_err(crate::discorl::csv_err)?;
    for (i, (t, r)) in tasks.iter().zip(returns).enumerate() {
        w.write_record([i.to_string(), t.name.clone(), r.to_string()]).map_err(crate::discorl::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct DiscoSummary {
    method: String,
    iterations_run: usize,
    early_stopped: bool,
    env_steps: usize,
    final_returns: Vec<f64>,
    explained_variance: f64,
    principal_angles: Option<Vec<f64>>,
    drive_span_dim: usize,
}

fn train_discosyn(cfg: &ExperimentConfig, out: &Path, log: &mut Vec<String>) -> Result<()> {
    let set = task_set(cfg)?;
    std::fs::write(out.join(TASK_SET_FILE), set.to_json_string())?;
    let trained = train(&set.tasks, &cfg.train)?;
    let mut model = trained.model.clone();
    model.frozen = true;
    std::fs::write(out.join(SYNERGY_FILE), model.to_checkpoint().to_json_string())?;
    std::fs::write(out.join(POLICY_FILE), trained.policy.to_checkpoint().to_json_string())?;
    std::fs::write(out.join("discriminator.json"), trained.disc.to_checkpoint().to_json_string())?;
    write_curves_csv(&out.join("curves.csv"), &trained.log.curves)?;
    write_z_samples_csv(&out.join("z_samples.csv"), &trained.log.z_samples)?;
    let eval = trained.log.final_eval.clone().ok_or_else(|| Error::Construction("training produced no evaluation".into()))?;
    write_eval_csv(&out.join("eval.csv"), &set.tasks, &eval.returns)?;
    let (z, a) = pair_matrices(&eval);
    let ev = latent_explained_variance(&z, &a)?.ratio;
    let method = method_name(&model);
    let rows: Vec<ResultRow> = set
        .tasks
        .iter()
        .zip(&eval.returns)
        .map(|(t, &r)| ResultRow {
            method: method.clone(),
            task: t.name.clone(),
            eval_return: r,
            reference: None,
            explained_variance: Some(ev),
        })
        .collect();
    write_results(&out.join(RESULTS_FILE), &rows)?;
    let angles = max_angle_to_oracle(&model, &set.tasks)?;
    log.push(format!(
        "{method}: {} iterations, early stop {}, final returns {:?}",
        trained.log.iterations_run, trained.log.early_stopped, eval.returns
    ));
    write_json(
        &out.join("summary.json"),
        &DiscoSummary {
            method,
            iterations_run: trained.log.iterations_run,
            early_stopped: trained.log.early_stopped,
            env_steps: trained.log.env_steps,
            final_returns: eval.returns,
            explained_variance: ev,
            principal_angles: angles,
            drive_span_dim: set.drive_span_dim,
        },
    )
}

fn select(tasks: &[Task], ids: &Option<Vec<usize>>) -> Result<Vec<usize>> {
    match ids {
        None => Ok((0..tasks.len()).collect()),
        Some(v) => {
            if let Some(bad) = v.iter().find(|&&i| i >= tasks.len()) {
                return config_err(format!("task index {bad} out of range for {} tasks", tasks.len()));
            }
            if v.is_empty() {
                return config_err("task selection must not be empty");
            }
            Ok(v.clone())
        }
    }
}

/// Curves of single-task runs relabelled with their index in the task set.
fn relabel(curves: &[CurveRow], task: usize) -> Vec<CurveRow> {
    curves.iter().map(|c| CurveRow { task, ..c.clone() }).collect()
}

#[derive(Serialize)]
struct BaselineSummary {
    method: String,
    rows: usize,
    explained_variance: f64,
    pca_explained_ratio: Option<f64>,
    ae_recon_mse: Option<f64>,
    ae_heldout_mse: Option<f64>,
}

fn train_baseline(cfg: &ExperimentConfig, out: &Path, log: &mut Vec<String>) -> Result<()> {
    let bc = &cfg.baseline;
    let set = task_set(cfg)?;
    std::fs::write(out.join(TASK_SET_FILE), set.to_json_string())?;
    let data_ids = select(&set.tasks, &bc.data_tasks)?;
    let retrain_ids = select(&set.tasks, &bc.retrain_tasks)?;
    let mut needed: Vec<usize> = data_ids.iter().chain(&retrain_ids).copied().collect();
    needed.sort_unstable();
    needed.dedup();

    let mut independent = Vec::new();
    let mut references = Vec::new();
    let mut independent_curves = Vec::new();
    for &i in &needed {
        let r = train_independent(&set.tasks[i], &cfg.train)?;
        log.push(format!("independent {}: reference {}", set.tasks[i].name, r.reference_return));
        references.push(ReferenceRow { task: set.tasks[i].name.clone(), reference: r.reference_return });
        independent_curves.extend(relabel(&r.log.curves, i));
        independent.push((i, r));
    }
    write_references(&out.join(REFERENCES_FILE), &references)?;
    write_curves_csv(&out.join("independent_curves.csv"), &independent_curves)?;

    let identity = SynergyModel::identity(set.d);
    let data_tasks: Vec<Task> = data_ids.iter().map(|&i| set.tasks[i].clone()).collect();
    let policies: Vec<&TaskPolicy> =
        data_ids.iter().map(|i| &independent.iter().find(|(j, _)| j == i).expect("trained").1.policy).collect();
    let decoders: Vec<&dyn ActionDecoder> = data_ids.iter().map(|_| &identity as &dyn ActionDecoder).collect();
    let dataset_seed = SeedStream::new(cfg.seed).seed(streams::DATASET, 0);
    let data = collect_dataset(&policies, &decoders, &data_tasks, bc.episodes_per_task, bc.stochastic, dataset_seed)?;
    data.write_csv(&out.join("dataset.csv"))?;

    let (decoder, method, summary): (Box<dyn ActionDecoder>, String, BaselineSummary) = match bc.method {
        Method::Pca => {
            let m = pca_fit(&data, bc.b)?;
            std::fs::write(out.join("pca.json"), m.to_checkpoint().to_json_string())?;
            let ev = pca_explained_variance(&m, &data)?.ratio;
            let name = format!("PCA{}", bc.b);
            let summary = BaselineSummary {
                method: name.clone(),
                rows: data.len(),
                explained_variance: ev,
                pca_explained_ratio: Some(m.explained_ratio),
                ae_recon_mse: None,
                ae_heldout_mse: None,
            };
            (Box::new(m), name, summary)
        }
        Method::Ae => {
            let m = ae_fit(&data, bc.b, &bc.ae)?;
            std::fs::write(out.join("ae.json"), m.to_checkpoint().to_json_string())?;
            let ev = explained_variance(&data.rows, &m.reconstruct(&data.rows)?)?.ratio;
            let name = format!("AE{}", bc.b);
            let summary = BaselineSummary {
                method: name.clone(),
                rows: data.len(),
                explained_variance: ev,
                pca_explained_ratio: None,
                ae_recon_mse: Some(m.recon_mse),
                ae_heldout_mse: m.heldout_mse,
            };
            (Box::new(m), name, summary)
        }
    };
    log.push(format!("{method}: explained variance {}", summary.explained_variance));

    let mut rows = Vec::new();
    let mut retrain_curves = Vec::new();
    for &i in &retrain_ids {
        let reference = references.iter().find(|r| r.task == set.tasks[i].name).map(|r| r.reference);
        let r = retrain_lowdim(decoder.as_ref(), &set.tasks[i], &cfg.train, reference)?;
        log.push(format!("retrain {}: return {} success {:?}", set.tasks[i].name, r.final_return, r.success));
        retrain_curves.extend(relabel(&r.log.curves, i));
        rows.push(ResultRow {
            method: method.clone(),
            task: set.tasks[i].name.clone(),
            eval_return: r.final_return,
            reference,
            explained_variance: Some(summary.explained_variance),
        });
    }
    write_curves_csv(&out.join("retrain_curves.csv"), &retrain_curves)?;
    write_results(&out.join(RESULTS_FILE), &rows)?;
    let hash = blob_hash(&std::fs::read(out.join(RESULTS_FILE))?);
    let table = table_from_rows(vec![(out.display().to_string(), hash, rows)], &references);
    write_success_table(&out.join("success_table.csv"), &table)?;
    write_json(&out.join("summary.json"), &summary)
}

fn unseen_task(cfg: &ExperimentConfig, base: &[Task], model: &SynergyModel) -> Result<Task> {
    let seed = SeedStream::new(cfg.env.seed).seed(streams::UNSEEN, 0);
    match cfg.transfer.task {
        UnseenTask::CwValve => make_cw_valve(base),
        UnseenTask::CylValve => make_cylindrical_valve(base, seed),
        UnseenTask::TopdownScrew => make_topdown_screw(base),
        UnseenTask::OrthogonalValve => {
            let phi = model.phi().ok_or_else(|| Error::Config("orthogonal-valve needs a linear decoder".into()))?;
            let template = base.first().ok_or_else(|| Error::Config("empty task set".into()))?;
            make_orthogonal_valve(template, &crate::linalg::row_space_basis(&phi, 1e-10), seed)
        }
    }
}

#[derive(Serialize)]
struct TransferSummary {
    task: String,
    reference: Option<f64>,
    final_return: f64,
    solved_at: Option<usize>,
    success: Option<bool>,
    first_reward_step: Option<usize>,
    env_steps: usize,
    reward_auc: f64,
    decoder_digest: String,
}

fn run_transfer(cfg: &ExperimentConfig, out: &Path, log: &mut Vec<String>) -> Result<()> {
    let model = load_synergy(cfg.transfer.synergy.as_deref().expect("validated"))?;
    let set = task_set(cfg)?;
    let task = unseen_task(cfg, &set.tasks, &model)?;
    let reference = match (cfg.transfer.reference, cfg.transfer.compute_reference) {
        (Some(r), _) => Some(r),
        (None, true) => {
            let r = train_independent(&task, &cfg.train)?;
            write_curves_csv(&out.join("reference_curves.csv"), &r.log.curves)?;
            Some(r.reference_return)
        }
        (None, false) => None,
    };
    let r = transfer_train(&model, &task, &cfg.train, reference)?;
    log.push(format!("transfer {}: final {} solved at {:?}", task.name, r.final_return, r.solved_at));
    write_curves_csv(&out.join("transfer_curves.csv"), &r.curves)?;
    write_results(
        &out.join(RESULTS_FILE),
        &[ResultRow {
            method: format!("Transfer-{}", method_name(&model)),
            task: task.name.clone(),
            eval_return: r.final_return,
            reference,
            explained_variance: None,
        }],
    )?;
    write_json(
        &out.join("transfer.json"),
        &TransferSummary {
            task: r.task.clone(),
            reference,
            final_return: r.final_return,
            solved_at: r.solved_at,
            success: r.success,
            first_reward_step: r.first_reward_step,
            env_steps: r.env_steps,
            reward_auc: r.reward_auc,
            decoder_digest: r.decoder_digest.clone(),
        },
    )
}

#[derive(Serialize)]
struct SparseSummary {
    budget: usize,
    iterations: usize,
    seeds: Vec<u64>,
    synergy_median_first_reward: Option<f64>,
    full_median_first_reward: Option<f64>,
    synergy_auc: Vec<f64>,
    full_auc: Vec<f64>,
}

fn run_sparse(cfg: &ExperimentConfig, out: &Path, log: &mut Vec<String>) -> Result<()> {
    let sc = &cfg.sparse;
    let model = load_synergy(sc.synergy.as_deref().expect("validated"))?;
    let set = task_set(cfg)?;
    let task = make_sparse_valve(&set.tasks, sc.engagement_on)?;
    let seeds: Vec<u64> = (0..sc.seeds as u64).map(|i| cfg.seed + i).collect();
    let bench = sparse_benchmark(&model, &task, &cfg.train, sc.budget, &seeds)?;
    write_first_reward_csv(&out.join("first_reward.csv"), &bench)?;
    let mut w = csv::Writer::from_path(out.join("sparse_curves.csv")).map_err(crate::discorl::csv_err)?;
    w.write_record(["seed", "arm", "iteration", "eval_return", "r_env_mean"]).map_err(crate::discorl::csv_err)?;
    for p in &bench.pairs {
        for (arm, r) in [("synergy", &p.synergy), ("full", &p.full)] {
            for c in &r.curves {
                let ev = c.eval_return.map_or_else(String::new, |v| v.to_string());
                w.write_record([p.seed.to_string(), arm.to_string(), c.iteration.to_string(), ev, c.r_env_mean.to_string()])
                    .map_err(crate::discorl::csv_err)?;
            }
        }
    }
    w.flush()?;
    log.push(format!("sparse: median first reward synergy {:?} full {:?}", bench.synergy_median(), bench.full_median()));
    write_json(
        &out.join("summary.json"),
        &SparseSummary {
            budget: bench.budget,
            iterations: bench.iterations,
            seeds,
            synergy_median_first_reward: bench.synergy_median(),
            full_median_first_reward: bench.full_median(),
            synergy_auc: bench.pairs.iter().map(|p| p.synergy.reward_auc).collect(),
            full_auc: bench.pairs.iter().map(|p| p.full.reward_auc).collect(),
        },
    )
}

#[derive(Serialize)]
struct Analysis {
    rows: usize,
    decoder_explained_variance: f64,
    pca_b: usize,
    pca_explained_variance: f64,
    principal_angles: Option<Vec<f64>>,
    max_principal_angle: Option<f64>,
    drive_span_dim: usize,
}

fn run_analyze(cfg: &ExperimentConfig, out: &Path, log: &mut Vec<String>) -> Result<()> {
    let dir = cfg.analyze.run.as_deref().expect("validated");
    let (set, model, policy) = load_run(dir)?;
    let heads: Vec<usize> = (0..set.tasks.len()).collect();
    let seed = SeedStream::new(cfg.seed).seed(streams::EVAL, 0);
    let eval = evaluate(&policy, &model, &set.tasks, &heads, cfg.analyze.episodes, seed)?;
    let (z, a) = pair_matrices(&eval);
    let decoder_ev = latent_explained_variance(&z, &a)?.ratio;
    let provenance: Vec<Provenance> = (0..a.nrows())
        .map(|i| Provenance { task: eval.task[i], episode: 0, step: i })
        .collect();
    let data = ActionDataset::new(a, provenance)?;
    let pca_b = cfg.analyze.pca_b.min(set.d);
    let pca_ev = pca_explained_variance(&pca_fit(&data, pca_b)?, &data)?.ratio;
    let angles = max_angle_to_oracle(&model, &set.tasks)?;
    if let Some(ang) = &angles {
        let mut w = csv::Writer::from_path(out.join("angles.csv")).map_err(crate::discorl::csv_err)?;
        w.write_record(["index", "angle"]).map_err(crate::discorl::csv_err)?;
        for (i, v) in ang.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()]).map_err(crate::discorl::csv_err)?;
        }
        w.flush()?;
    }
    log.push(format!("analyze: decoder EV {decoder_ev}, PCA{pca_b} EV {pca_ev}"));
    write_json(
        &out.join("analysis.json"),
        &Analysis {
            rows: data.len(),
            decoder_explained_variance: decoder_ev,
            pca_b,
            pca_explained_variance: pca_ev,
            max_principal_angle: angles.as_ref().and_then(|a| a.last().copied()),
            principal_angles: angles,
            drive_span_dim: set.drive_span_dim,
        },
    )
}

fn run_report(cfg: &ExperimentConfig, out: &Path, log: &mut Vec<String>) -> Result<()> {
    let table = build_table(&cfg.report.runs)?;
    write_success_table(&out.join("success_table.csv"), &table)?;
    std::fs::write(out.join("report.md"), render_markdown(&table))?;
    log.push(format!("report: {} methods, {} tasks", table.rows.len(), table.tasks.len()));
    Ok(())
}

fn run_eval(cfg: &ExperimentConfig, out: &Path, log: &mut Vec<String>) -> Result<()> {
    let dir = cfg.eval.run.as_deref().expect("validated");
    let (set, model, policy) = load_run(dir)?;
    let heads: Vec<usize> = (0..set.tasks.len()).collect();
    let seed = SeedStream::new(cfg.seed).seed(streams::EVAL, 0);
    let eval = evaluate(&policy, &model, &set.tasks, &heads, cfg.eval.episodes, seed)?;
    write_eval_csv(&out.join("eval.csv"), &set.tasks, &eval.returns)?;
    log.push(format!("eval: returns {:?}", eval.returns));
    Ok(())
}
