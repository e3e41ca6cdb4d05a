use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::task::{EnvState, StepResult, Task, TaskKind};
use crate::error::{Error, Result};

pub const JOINT_LIMIT: f64 = 2.0;
/// Object coordinates are divided by this in observations so that accumulated
/// progress stays in the responsive range of tanh networks.
pub const OBJECT_OBS_SCALE: f64 = 10.0;

pub fn reset(task: &Task, seed: u64) -> EnvState {
    let object = match task.kind {
        TaskKind::Dice => {
            // Uniform in the unit ball by rejection.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            loop {
                let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                    break v;
                }
            }
        }
        kind => vec![0.0; kind.object_dim()],
    };
    EnvState { joints: vec![0.0; task.d], object, step_count: 0 }
}

pub fn observe(task: &Task, state: &EnvState) -> Vec<f64> {
    let mut obs = Vec::with_capacity(task.obs_dim());
    obs.extend_from_slice(&state.joints);
    obs.extend(state.object.iter().map(|o| o / OBJECT_OBS_SCALE));
    obs.push(state.step_count as f64 / task.horizon as f64);
    obs
}

/// Posture-dependent effectiveness of the drive, in (0, 1].
pub fn engagement(task: &Task, joints: &[f64]) -> f64 {
    if !task.engagement_on {
        return 1.0;
    }
    let dist2: f64 = joints.iter().zip(&task.contact_center).map(|(q, c)| (q - c) * (q - c)).sum();
    (-dist2 / (2.0 * task.engagement_width * task.engagement_width)).exp()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Reward for the transition `object -> next_object` under `action`. Shared by
/// every task of a kind; only the task's own parameters enter.
pub fn reward(task: &Task, object: &[f64], next_object: &[f64], action: &[f64]) -> f64 {
    let r = &task.reward;
    let penalty = r.action_penalty * dot(action, action);
    let progress = match task.kind {
        TaskKind::Valve => next_object[0] - object[0],
        TaskKind::Dice => -(dist(next_object, &r.goal) - dist(object, &r.goal)),
        TaskKind::WeightPull => next_object[0] - object[0],
        TaskKind::Screw => next_object[1] - object[1],
        TaskKind::SparseValve => {
            return if (next_object[0] - r.goal[0]).abs() < r.sparse_threshold { 1.0 } else { 0.0 };
        }
    };
    r.sign * progress - penalty
}

pub fn step(task: &Task, state: &EnvState, action: &[f64]) -> Result<StepResult> {
    if action.len() != task.d {
        return Err(Error::Config(format!(
            "action has {} dims, task `{}` expects {}",
            action.len(),
            task.name,
            task.d
        )));
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::Domain("NaN in action".into()));
    }
    if let Some(a) = action.iter().find(|a| a.abs() > 1.0 + 1e-12) {
        return Err(Error::Domain(format!("action component {a} outside [-1, 1]")));
    }
    let e = engagement(task, &state.joints);
    let joints: Vec<f64> = state
        .joints
        .iter()
        .zip(action)
        .map(|(q, a)| (q + task.joint_step * a).clamp(-JOINT_LIMIT, JOINT_LIMIT))
        .collect();
    let drive: Vec<f64> = task.drive.iter().map(|w| e * dot(w, action)).collect();
    let mut object = state.object.clone();
    match task.kind {
        TaskKind::Valve | TaskKind::SparseValve | TaskKind::Dice => {
            for (o, dv) in object.iter_mut().zip(&drive) {
                *o += dv;
            }
        }
        TaskKind::WeightPull => {
            object[0] += drive[0].max(0.0) - task.reward.gravity;
        }
        TaskKind::Screw => {
            object[0] += drive[0];
            object[1] += drive[1] + task.reward.coupling * drive[0];
        }
    }
    let reward = reward(task, &state.object, &object, action);
    let step_count = state.step_count + 1;
    Ok(StepResult {
        next_state: EnvState { joints, object, step_count },
        reward,
        done: step_count >= task.horizon,
    })
}

/// Clamps each component of a raw policy action into the admissible box.
pub fn clip_action(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}
