use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::discorl::{csv_err, obs_matrix, reset_seed};
use crate::envs::{self, EnvState, Task};
use crate::error::{config_err, Error, Result};
use crate::synergy::{sample_rows, ActionDecoder, TaskPolicy};

/// Where a dataset row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Provenance {
    pub task: usize,
    pub episode: usize,
    pub step: usize,
}

/// Executed actions gathered from trained agents, one row per step.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDataset {
    pub rows: Array2<f64>,
    pub provenance: Vec<Provenance>,
    /// Column means of `rows`.
    pub mean: Vec<f64>,
}

impl ActionDataset {
    pub fn new(rows: Array2<f64>, provenance: Vec<Provenance>) -> Result<Self> {
        if rows.nrows() != provenance.len() {
            return config_err(format!("{} rows but {} provenance entries", rows.nrows(), provenance.len()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset rows".into()));
        }
        let n = rows.nrows().max(1) as f64;
        let mean = rows.columns().into_iter().map(|c| c.sum() / n).collect();
        Ok(Self { rows, provenance, mean })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Rows whose provenance satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&Provenance) -> bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.provenance[i])).collect();
        let rows = Array2::from_shape_fn((idx.len(), self.dim()), |(i, j)| self.rows[[idx[i], j]]);
        Self::new(rows, idx.iter().map(|&i| self.provenance[i]).collect())
    }

    /// `task,episode,step,a0,a1,...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["task".to_string(), "episode".into(), "step".into()];
        header.extend((0..self.dim()).map(|j| format!("a{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for (p, row) in self.provenance.iter().zip(self.rows.rows()) {
            let mut rec = vec![p.task.to_string(), p.episode.to_string(), p.step.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rolls out `policies[i]` (head 0, composed with `decoders[i]`) on
/// `tasks[i]` for `episodes_per_task` episodes and records the executed
/// actions. Deterministic mode uses the latent mean; stochastic mode samples
/// it.
pub fn collect_dataset(
    policies: &[&TaskPolicy],
    decoders: &[&dyn ActionDecoder],
    tasks: &[Task],
    episodes_per_task: usize,
    stochastic: bool,
    seed: u64,
) -> Result<ActionDataset> {
    if policies.len() != tasks.len() || decoders.len() != tasks.len() {
        return config_err(format!(
            "{} policies and {} decoders for {} tasks",
            policies.len(),
            decoders.len(),
            tasks.len()
        ));
    }
    let d = tasks.first().map_or(0, |t| t.d);
    let mut rows: Vec<f64> = Vec::new();
    let mut provenance = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (ti, ((task, policy), decoder)) in tasks.iter().zip(policies).zip(decoders).enumerate() {
        if task.d != d || decoder.action_dim() != d || decoder.latent_dim() != policy.b {
            return config_err(format!("policy/decoder for task `{}` do not match its dimensions", task.name));
        }
        let mut states: Vec<EnvState> =
            (0..episodes_per_task).map(|e| envs::reset(task, reset_seed(seed, ti, e))).collect();
        let mut per_episode: Vec<Vec<f64>> = vec![Vec::new(); episodes_per_task];
        for _ in 0..task.horizon {
            let obs = obs_matrix(task, &states);
            let (mean, log_std) = policy.head_outputs(&obs, 0)?;
            let z = if stochastic { sample_rows(&mean, &log_std, &mut rng).0 } else { mean };
            let a = decoder.decode_mean_batch(&z)?;
            for e in 0..episodes_per_task {
                let act = envs::clip_action(&a.row(e).to_vec());
                let res = envs::step(task, &states[e], &act)?;
                per_episode[e].extend_from_slice(&act);
                states[e] = res.next_state;
            }
        }
        for (e, ep) in per_episode.into_iter().enumerate() {
            rows.extend(ep);
            provenance.extend((0..task.horizon).map(|step| Provenance { task: ti, episode: e, step }));
        }
    }
    let n = provenance.len();
    let rows = Array2::from_shape_vec((n, d), rows).map_err(|e| Error::Config(e.to_string()))?;
    ActionDataset::new(rows, provenance)
}
