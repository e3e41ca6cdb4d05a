use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::task::{RewardParams, Task, TaskKind};
use crate::error::{config_err, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskSetId {
    /// Four valves differing only in their transition parameters.
    A,
    /// Dice, valve, weight pull and screw.
    B,
    /// Set A with drive rows made mutually orthogonal.
    #[serde(rename = "A-orth")]
    AOrthogonal,
}

impl std::str::FromStr for TaskSetId {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(TaskSetId::A),
            "B" | "b" => Ok(TaskSetId::B),
            "A-orth" | "a-orth" => Ok(TaskSetId::AOrthogonal),
            other => config_err(format!("unknown task set `{other}` (expected A, B or A-orth)")),
        }
    }
}

impl std::fmt::Display for TaskSetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskSetId::A => "A",
            TaskSetId::B => "B",
            TaskSetId::AOrthogonal => "A-orth",
        })
    }
}

/// Environment constants shared by every task in a set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvOptions {
    pub engagement_on: bool,
    pub engagement_width: f64,
    /// Distance of the contact posture from the rest posture.
    pub contact_radius: f64,
    pub action_penalty: f64,
    pub horizon: usize,
    pub joint_step: f64,
}

impl Default for EnvOptions {
    fn default() -> Self {
        Self {
            engagement_on: false,
            engagement_width: 1.0,
            contact_radius: 2.0,
            action_penalty: 0.5,
            horizon: 100,
            joint_step: 0.1,
        }
    }
}

pub const GRAVITY: f64 = 0.02;
pub const SCREW_COUPLING: f64 = 0.25;
pub const SPARSE_TARGET: f64 = 1.5;
pub const SPARSE_THRESHOLD: f64 = 0.1;
pub const DICE_GOAL_RADIUS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSet {
    pub set: TaskSetId,
    pub d: usize,
    pub seed: u64,
    pub options: EnvOptions,
    /// Dimension of the span of all drive rows.
    pub drive_span_dim: usize,
    pub tasks: Vec<Task>,
}

impl TaskSet {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serialisable");
        s.push('\n');
        s
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn normal_row(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn rows_to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn base_reward(opts: &EnvOptions) -> RewardParams {
    RewardParams {
        action_penalty: opts.action_penalty,
        sign: 1.0,
        goal: Vec::new(),
        sparse_threshold: SPARSE_THRESHOLD,
        gravity: 0.0,
        coupling: 0.0,
    }
}

fn task(id: usize, name: &str, kind: TaskKind, drive: Vec<Vec<f64>>, contact: Vec<f64>, opts: &EnvOptions, d: usize) -> Task {
    Task {
        id,
        name: name.to_string(),
        kind,
        drive,
        contact_center: contact,
        engagement_width: opts.engagement_width,
        engagement_on: opts.engagement_on,
        reward: base_reward(opts),
        horizon: opts.horizon,
        d,
        joint_step: opts.joint_step,
    }
}

pub fn make_task_set(set: TaskSetId, d: usize, seed: u64) -> Result<TaskSet> {
    make_task_set_with(set, d, seed, &EnvOptions::default())
}

/// Builds a task family whose drive rows are drawn from `seed`.
///
/// Valve contact postures lie in the span of the valve drives, so enabling
/// engagement leaves the oracle subspace of set A unchanged.
pub fn make_task_set_with(set: TaskSetId, d: usize, seed: u64, opts: &EnvOptions) -> Result<TaskSet> {
    let needed = match set {
        TaskSetId::A | TaskSetId::AOrthogonal => 4,
        TaskSetId::B => 7,
    };
    if d < 6 || d < needed {
        return config_err(format!("task set {set} needs d >= {}, got {d}", needed.max(6)));
    }
    let salt = match set {
        TaskSetId::A | TaskSetId::AOrthogonal => 0xA,
        TaskSetId::B => 0xB,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (salt << 56));
    let tasks: Vec<Task> = match set {
        TaskSetId::A | TaskSetId::AOrthogonal => {
            let raw: Vec<Vec<f64>> = (0..4).map(|_| normal_row(&mut rng, d)).collect();
            let rows = if set == TaskSetId::AOrthogonal {
                array_to_rows(&linalg::gram_schmidt_rows(&rows_to_array(&raw)).map_err(crate::Error::Config)?)
            } else {
                raw.iter().map(|r| normalize(r)).collect()
            };
            let total: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
            (0..4)
                .map(|k| {
                    let dir: Vec<f64> = total.iter().zip(&rows[k]).map(|(t, w)| t + w).collect();
                    let contact = normalize(&dir).iter().map(|v| v * opts.contact_radius).collect();
                    task(k, &format!("valve-{k}h"), TaskKind::Valve, vec![rows[k].clone()], contact, opts, d)
                })
                .collect()
        }
        TaskSetId::B => {
            let kinds = [TaskKind::Dice, TaskKind::Valve, TaskKind::WeightPull, TaskKind::Screw];
            let names = ["dice", "valve", "weight-pull", "screw"];
            kinds
                .iter()
                .zip(names)
                .enumerate()
                .map(|(id, (&kind, name))| {
                    let raw: Vec<Vec<f64>> = (0..kind.object_dim()).map(|_| normal_row(&mut rng, d)).collect();
                    let rows = linalg::gram_schmidt_rows(&rows_to_array(&raw)).expect("generic rows");
                    let contact: Vec<f64> =
                        normalize(&normal_row(&mut rng, d)).iter().map(|v| v * opts.contact_radius).collect();
                    let mut t = task(id, name, kind, array_to_rows(&rows), contact, opts, d);
                    match kind {
                        TaskKind::Dice => {
                            t.reward.goal =
                                normalize(&normal_row(&mut rng, 3)).iter().map(|v| v * DICE_GOAL_RADIUS).collect();
                        }
                        TaskKind::WeightPull => t.reward.gravity = GRAVITY,
                        TaskKind::Screw => t.reward.coupling = SCREW_COUPLING,
                        _ => {}
                    }
                    t
                })
                .collect()
        }
    };
    let drive_span_dim = drive_span_dim(&tasks);
    Ok(TaskSet { set, d, seed, options: opts.clone(), drive_span_dim, tasks })
}

pub fn drive_span_dim(tasks: &[Task]) -> usize {
    let rows: Vec<Vec<f64>> = tasks.iter().flat_map(|t| t.drive.iter().cloned()).collect();
    linalg::rank(&rows_to_array(&rows), 1e-8)
}

/// Orthonormal row basis of the drive rows of every task plus the contact
/// directions of engagement-gated tasks.
pub fn oracle_subspace(tasks: &[Task]) -> Array2<f64> {
    let mut rows: Vec<Vec<f64>> = tasks.iter().flat_map(|t| t.drive.iter().cloned()).collect();
    for t in tasks.iter().filter(|t| t.engagement_on) {
        let n = t.contact_center.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            rows.push(t.contact_center.iter().map(|v| v / n).collect());
        }
    }
    linalg::row_space_basis(&rows_to_array(&rows), 1e-8)
}

fn first_of(base: &[Task], kind: TaskKind) -> Result<&Task> {
    base.iter()
        .find(|t| t.kind == kind)
        .ok_or_else(|| crate::Error::Config(format!("base task set has no {kind:?} task")))
}

/// The first valve of `base`, turned clockwise.
pub fn make_cw_valve(base: &[Task]) -> Result<Task> {
    let mut t = first_of(base, TaskKind::Valve)?.clone();
    t.reward.sign = -t.reward.sign;
    t.name = "cw-valve".into();
    t.id = base.len();
    Ok(t)
}

/// A valve whose drive is a normalised convex mixture of the base valve drives.
pub fn make_cylindrical_valve(base: &[Task], seed: u64) -> Result<Task> {
    let valves: Vec<&Task> = base.iter().filter(|t| t.kind == TaskKind::Valve).collect();
    if valves.is_empty() {
        return config_err("base task set has no valve task");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xC7_u64 << 48));
    let raw: Vec<f64> = valves.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let d = valves[0].d;
    let mix: Vec<f64> = (0..d)
        .map(|j| valves.iter().zip(&raw).map(|(v, w)| w / total * v.drive[0][j]).sum())
        .collect();
    let mut t = valves[0].clone();
    t.drive = vec![normalize(&mix)];
    t.name = "cyl-valve".into();
    t.id = base.len() + 1;
    Ok(t)
}

/// The base screw driven from above: coupling reversed, reward on −translation.
pub fn make_topdown_screw(base: &[Task]) -> Result<Task> {
    let mut t = first_of(base, TaskKind::Screw)?.clone();
    t.reward.coupling = -t.reward.coupling;
    t.reward.sign = -t.reward.sign;
    t.name = "topdown-screw".into();
    t.id = base.len() + 2;
    Ok(t)
}

/// Cylindrical valve, clockwise valve and top-down screw.
pub fn make_unseen_tasks(base: &[Task], seed: u64) -> Result<Vec<Task>> {
    Ok(vec![make_cylindrical_valve(base, seed)?, make_cw_valve(base)?, make_topdown_screw(base)?])
}

/// Goal-conditioned valve with a 0/1 reward, sharing the first base valve's
/// drive and contact posture.
pub fn make_sparse_valve(base: &[Task], engagement_on: bool) -> Result<Task> {
    let mut t = first_of(base, TaskKind::Valve)?.clone();
    t.kind = TaskKind::SparseValve;
    t.reward.goal = vec![SPARSE_TARGET];
    t.reward.sparse_threshold = SPARSE_THRESHOLD;
    t.engagement_on = engagement_on;
    t.name = "sparse-valve".into();
    Ok(t)
}

/// A valve whose drive is orthogonal to the row space of `basis`; used as a
/// negative control for frozen decoders.
pub fn make_orthogonal_valve(template: &Task, basis: &Array2<f64>, seed: u64) -> Result<Task> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x0D_u64 << 52));
    let d = template.d;
    if basis.nrows() >= d {
        return config_err("basis already spans the action space");
    }
    let mut v = ndarray::Array1::from(normal_row(&mut rng, d));
    for _ in 0..2 {
        for row in basis.rows() {
            let c = row.dot(&v);
            v.scaled_add(-c, &row);
        }
    }
    let mut t = template.clone();
    t.kind = TaskKind::Valve;
    t.drive = vec![normalize(v.as_slice().expect("contiguous"))];
    t.reward.sign = 1.0;
    t.name = "orthogonal-valve".into();
    Ok(t)
}
