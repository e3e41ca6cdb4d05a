use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Valve,
    Dice,
    WeightPull,
    Screw,
    SparseValve,
}

impl TaskKind {
    pub fn object_dim(self) -> usize {
        match self {
            TaskKind::Valve | TaskKind::SparseValve | TaskKind::WeightPull => 1,
            TaskKind::Dice => 3,
            TaskKind::Screw => 2,
        }
    }

    pub fn is_valve(self) -> bool {
        matches!(self, TaskKind::Valve | TaskKind::SparseValve)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParams {
    /// Quadratic action penalty β.
    pub action_penalty: f64,
    /// Multiplies the goal-progress term; -1 flips the preferred direction.
    pub sign: f64,
    /// Dice: goal orientation. Sparse valve: `[target angle]`. Empty otherwise.
    pub goal: Vec<f64>,
    /// Sparse valve success radius around the target angle.
    pub sparse_threshold: f64,
    /// Weight pull: height lost every step.
    pub gravity: f64,
    /// Screw: translation gained per unit of rotation.
    pub coupling: f64,
}

/// One synthetic manipulation MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: usize,
    pub name: String,
    pub kind: TaskKind,
    /// Drive directions, one unit-norm row per object coordinate (`object_dim x d`).
    pub drive: Vec<Vec<f64>>,
    pub contact_center: Vec<f64>,
    pub engagement_width: f64,
    pub engagement_on: bool,
    pub reward: RewardParams,
    pub horizon: usize,
    pub d: usize,
    /// Joint displacement per unit action.
    pub joint_step: f64,
}

impl Task {
    pub fn object_dim(&self) -> usize {
        self.kind.object_dim()
    }

    /// Observation: joints, object coordinates, normalised step count.
    pub fn obs_dim(&self) -> usize {
        self.d + self.object_dim() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.drive.len() != self.object_dim() {
            return config_err(format!(
                "task `{}` has {} drive rows, kind {:?} needs {}",
                self.name,
                self.drive.len(),
                self.kind,
                self.object_dim()
            ));
        }
        for row in &self.drive {
            if row.len() != self.d {
                return config_err(format!("task `{}` drive row has wrong width", self.name));
            }
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return config_err(format!("task `{}` drive row norm {n} is not 1", self.name));
            }
        }
        if self.contact_center.len() != self.d {
            return config_err(format!("task `{}` contact center has wrong width", self.name));
        }
        if !(self.engagement_width > 0.0) {
            return config_err("engagement width must be positive");
        }
        if self.horizon == 0 {
            return config_err("horizon must be at least 1");
        }
        if self.kind == TaskKind::Dice && self.reward.goal.len() != 3 {
            return config_err("dice task needs a 3-D goal");
        }
        if self.kind == TaskKind::SparseValve && self.reward.goal.len() != 1 {
            return config_err("sparse valve needs a target angle");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub joints: Vec<f64>,
    pub object: Vec<f64>,
    pub step_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
}
