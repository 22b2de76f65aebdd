//! Native continuous-control environments and their multitask goal sets.
//!
//! Environments are value types: [`reset`] and [`step`] are pure
//! functions of their arguments, so rollouts can be replayed exactly and
//! run concurrently on independent states.

mod pointmass;
mod reacher;
mod task;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pointmass::{ARENA_HALF_WIDTH, DAMPING as POINTMASS_DAMPING, DT, V_MAX};
pub use reacher::{fingertip, LINK_LENGTH, THETA2_LIMIT};
pub use task::{random_goal_task, task_by_name, task_table, RewardKind, TaskRole, TaskSpec};

pub const DEFAULT_EPISODE_LENGTH: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Pointmass,
    Reacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Perturbed start states and a shaped bonus around the goal.
    Standard,
    /// Fixed start state and purely sparse reward.
    Explore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub kind: EnvKind,
    pub variant: Variant,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub episode_length: usize,
}

impl EnvSpec {
    pub fn new(kind: EnvKind, variant: Variant) -> Self {
        let base = match kind {
            EnvKind::Pointmass => "pointmass",
            EnvKind::Reacher => "reacher",
        };
        let name = match variant {
            Variant::Standard => base.to_string(),
            Variant::Explore => format!("{base}-explore"),
        };
        let (obs_dim, act_dim) = match kind {
            EnvKind::Pointmass => (4, 2),
            EnvKind::Reacher => (6, 2),
        };
        Self { name, kind, variant, obs_dim, act_dim, episode_length: DEFAULT_EPISODE_LENGTH }
    }

    /// Looks up `pointmass`, `pointmass-explore`, `reacher` or `reacher-explore`.
    pub fn by_name(name: &str) -> Result<Self> {
        let (kind, variant) = match name {
            "pointmass" => (EnvKind::Pointmass, Variant::Standard),
            "pointmass-explore" => (EnvKind::Pointmass, Variant::Explore),
            "reacher" => (EnvKind::Reacher, Variant::Standard),
            "reacher-explore" => (EnvKind::Reacher, Variant::Explore),
            other => return Err(Error::config(format!("unknown environment '{other}'"))),
        };
        Ok(Self::new(kind, variant))
    }

    pub fn with_episode_length(mut self, episode_length: usize) -> Result<Self> {
        if episode_length == 0 {
            return Err(Error::config("episode length must be >= 1"));
        }
        self.episode_length = episode_length;
        Ok(self)
    }

    /// Per-dimension observation box `(low, high)`.
    pub fn obs_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            EnvKind::Pointmass => pointmass::obs_bounds(),
            EnvKind::Reacher => reacher::obs_bounds(),
        }
    }

    /// Half-widths of the observation box, used to bring inputs of learned
    /// models to unit scale.
    pub fn obs_scale(&self) -> Vec<f64> {
        let (lo, hi) = self.obs_bounds();
        lo.iter().zip(&hi).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    /// Projects an observation onto the 2-d goal space (point position or fingertip).
    pub fn goal_projection(&self, obs: &[f64]) -> [f64; 2] {
        match self.kind {
            EnvKind::Pointmass => [obs[0], obs[1]],
            EnvKind::Reacher => [obs[4], obs[5]],
        }
    }

    /// The task whose reward `step` reports as the extrinsic reward.
    pub fn default_task(&self) -> TaskSpec {
        task_table(self).expect("built-in environment").remove(0)
    }

    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action.iter().map(|a| a.clamp(-1.0, 1.0)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub obs: Vec<f64>,
    /// Steps taken since reset, in `[0, episode_length]`.
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    /// Reward of the environment's default task.
    pub reward: f64,
    /// The episode hit its time limit. This is a boundary, not a terminal
    /// state: values should still bootstrap through it.
    pub boundary: bool,
}

/// Start state for an episode. Explore variants ignore `seed`.
pub fn reset(spec: &EnvSpec, seed: u64) -> EnvState {
    let obs = match spec.kind {
        EnvKind::Pointmass => pointmass::reset(spec.variant, seed),
        EnvKind::Reacher => reacher::reset(spec.variant, seed),
    };
    EnvState { obs, step: 0 }
}

/// Advances one control step. Actions are clipped to `[-1, 1]`.
pub fn step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<StepOutcome> {
    step_with_task(spec, state, action, None)
}

/// As [`step`], but reports the reward of `task` instead of the default task.
pub fn step_with_task(
    spec: &EnvSpec,
    state: &EnvState,
    action: &[f64],
    task: Option<&TaskSpec>,
) -> Result<StepOutcome> {
    if action.len() != spec.act_dim {
        return Err(Error::contract(format!(
            "action has {} dims, {} expects {}",
            action.len(),
            spec.name,
            spec.act_dim
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::contract(format!("non-finite action {action:?}")));
    }
    if state.obs.len() != spec.obs_dim || state.step >= spec.episode_length {
        return Err(Error::contract(format!(
            "invalid state for {} (dim {}, step {})",
            spec.name,
            state.obs.len(),
            state.step
        )));
    }
    let a = spec.clip_action(action);
    let obs = match spec.kind {
        EnvKind::Pointmass => pointmass::step(&state.obs, &a),
        EnvKind::Reacher => reacher::step(&state.obs, &a),
    };
    let next = EnvState { obs, step: state.step + 1 };
    let default;
    let task = match task {
        Some(t) => t,
        None => {
            default = spec.default_task();
            &default
        }
    };
    let reward = task.reward(spec, &state.obs, &a, &next.obs)?;
    let boundary = next.step == spec.episode_length;
    Ok(StepOutcome { state: next, reward, boundary })
}

/// Number of distinct `cell`-sized grid cells of the goal space visited by `states`.
pub fn goal_space_coverage<'a>(
    spec: &EnvSpec,
    states: impl IntoIterator<Item = &'a [f64]>,
    cell: f64,
) -> usize {
    let mut seen = HashSet::new();
    for s in states {
        let [x, y] = spec.goal_projection(s);
        seen.insert(((x / cell).floor() as i64, (y / cell).floor() as i64));
    }
    seen.len()
}
