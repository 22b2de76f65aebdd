//! Goal-reaching tasks with rewards computed from observations alone.

use std::f64::consts::FRAC_PI_4;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{reacher, EnvKind, EnvSpec, Variant, ARENA_HALF_WIDTH};
use crate::error::{Error, Result};
use crate::rng::stream;

pub const POINTMASS_GOAL_RADIUS: f64 = 0.05;
pub const REACHER_GOAL_RADIUS: f64 = 0.03;
const SHAPED_BONUS: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskRole {
    Training,
    EasyTransfer,
    MediumTransfer,
    HardTransfer,
    Custom,
}

impl TaskRole {
    pub const TABLE: [TaskRole; 4] =
        [TaskRole::Training, TaskRole::EasyTransfer, TaskRole::MediumTransfer, TaskRole::HardTransfer];

    pub fn name(self) -> &'static str {
        match self {
            TaskRole::Training => "training",
            TaskRole::EasyTransfer => "easy-transfer",
            TaskRole::MediumTransfer => "medium-transfer",
            TaskRole::HardTransfer => "hard-transfer",
            TaskRole::Custom => "custom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    /// 1 strictly inside the goal ball, 0 elsewhere.
    SparseUnit,
    /// As `SparseUnit`, plus `0.1 * exp(-d^2 / (2 r^2))` outside the ball.
    SparseShaped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub env: EnvKind,
    pub goal: [f64; 2],
    pub radius: f64,
    pub kind: RewardKind,
    pub role: TaskRole,
}

impl TaskSpec {
    pub fn new(env: &EnvSpec, role: TaskRole, goal: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::config(format!("goal radius must be positive, got {radius}")));
        }
        let reachable = match env.kind {
            EnvKind::Pointmass => goal.iter().all(|g| g.abs() <= ARENA_HALF_WIDTH),
            EnvKind::Reacher => goal[0].hypot(goal[1]) <= 2.0 * reacher::LINK_LENGTH,
        };
        if !reachable {
            return Err(Error::config(format!("goal {goal:?} is outside the reachable set of {}", env.name)));
        }
        let kind = match env.variant {
            Variant::Explore => RewardKind::SparseUnit,
            Variant::Standard => RewardKind::SparseShaped,
        };
        Ok(Self { name: role.name().to_string(), env: env.kind, goal, radius, kind, role })
    }

    pub fn distance(&self, env: &EnvSpec, obs: &[f64]) -> f64 {
        let [x, y] = env.goal_projection(obs);
        (x - self.goal[0]).hypot(y - self.goal[1])
    }

    /// Reward for the transition `(s, a, s_next)`; depends on `s_next` only.
    pub fn reward(&self, env: &EnvSpec, s: &[f64], a: &[f64], s_next: &[f64]) -> Result<f64> {
        if env.kind != self.env {
            return Err(Error::config(format!(
                "task '{}' belongs to {:?}, not {}",
                self.name, self.env, env.name
            )));
        }
        if s.len() != env.obs_dim || s_next.len() != env.obs_dim || a.len() != env.act_dim {
            return Err(Error::config(format!("transition dimensions do not match {}", env.name)));
        }
        let d = self.distance(env, s_next);
        Ok(if d < self.radius {
            1.0
        } else {
            match self.kind {
                RewardKind::SparseUnit => 0.0,
                RewardKind::SparseShaped => {
                    SHAPED_BONUS * (-(d * d) / (2.0 * self.radius * self.radius)).exp()
                }
            }
        })
    }

    /// Largest reward a single step can earn.
    pub fn max_step_reward(&self) -> f64 {
        1.0
    }
}

fn default_radius(kind: EnvKind) -> f64 {
    match kind {
        EnvKind::Pointmass => POINTMASS_GOAL_RADIUS,
        EnvKind::Reacher => REACHER_GOAL_RADIUS,
    }
}

/// The four goals of an environment: training, easy, medium and hard transfer.
pub fn task_table(spec: &EnvSpec) -> Result<Vec<TaskSpec>> {
    let goals: [[f64; 2]; 4] = match spec.kind {
        EnvKind::Pointmass => [[0.1, 0.1], [-0.1, -0.1], [0.3, 0.3], [0.2, 0.2]],
        EnvKind::Reacher => [[0.0, 0.1], [0.0, 0.2], [0.0, -0.1], [-0.1, 0.15]],
    };
    let radius = default_radius(spec.kind);
    TaskRole::TABLE.iter().zip(goals).map(|(&role, goal)| TaskSpec::new(spec, role, goal, radius)).collect()
}

/// Looks a task up by role name (`training`, `easy-transfer`, ...).
pub fn task_by_name(spec: &EnvSpec, name: &str) -> Result<TaskSpec> {
    task_table(spec)?
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::config(format!("unknown task '{name}' for {}", spec.name)))
}

/// A randomly placed goal. For `reacher-explore` the goal direction is
/// restricted to within 45 degrees of +y.
pub fn random_goal_task(spec: &EnvSpec, seed: u64) -> Result<TaskSpec> {
    let mut rng = stream(seed, "goal", 0);
    let goal = match spec.kind {
        EnvKind::Pointmass => {
            let h = ARENA_HALF_WIDTH - POINTMASS_GOAL_RADIUS;
            [rng.random_range(-h..=h), rng.random_range(-h..=h)]
        }
        EnvKind::Reacher => {
            let r = rng.random_range(0.05..=0.22);
            let angle = match spec.variant {
                Variant::Explore => std::f64::consts::FRAC_PI_2 + rng.random_range(-FRAC_PI_4..=FRAC_PI_4),
                Variant::Standard => rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            };
            [r * angle.cos(), r * angle.sin()]
        }
    };
    let mut t = TaskSpec::new(spec, TaskRole::Custom, goal, default_radius(spec.kind))?;
    t.name = format!("random-{seed}");
    Ok(t)
}
