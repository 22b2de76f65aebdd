//! Critic Regularized Regression with a categorical critic.
//!
//! The critic is trained with cross-entropy against projected n-step
//! targets; the actor maximizes `ReLU(A(s, a)) * log pi(a | s)` where the
//! advantage uses the critic's expected value and `m` policy samples as
//! baseline.

mod critic;
mod learner;
mod projection;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use critic::CategoricalCritic;
pub use learner::{advantage_with, CrrLearner, StepMetrics, TdBatch};
pub use projection::{categorical_project, project_into, Support};

use crate::agents::GaussianPolicy;
use crate::datastore::{relabel, Dataset};
use crate::envsuite::TaskSpec;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tables::{num, write_table, ColumnType, TableSchema};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrrConfig {
    pub gamma: f64,
    /// Policy samples in the advantage baseline.
    pub advantage_samples: usize,
    /// Policy samples averaged in the bootstrap target.
    pub next_action_samples: usize,
    pub batch_size: usize,
    /// Learner steps for offline training.
    pub steps: usize,
    pub n_step: usize,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub target_sync: u64,
    pub n_atoms: usize,
    pub v_min: f64,
    /// Top of the atom support; `None` means `episode_length * max_step_reward`.
    pub v_max: Option<f64>,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Metrics are recorded every this many steps.
    pub log_every: usize,
}

impl Default for CrrConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            advantage_samples: 4,
            next_action_samples: 4,
            batch_size: 64,
            steps: 20_000,
            n_step: 5,
            policy_lr: 1e-3,
            critic_lr: 1e-3,
            target_sync: 100,
            n_atoms: 51,
            v_min: 0.0,
            v_max: None,
            hidden: vec![64, 64],
            init_log_std: -0.5,
            log_every: 100,
        }
    }
}

impl CrrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma must lie in [0, 1]"));
        }
        if self.advantage_samples == 0 || self.next_action_samples == 0 {
            return Err(Error::config("advantage and next-action sample counts must be >= 1"));
        }
        if self.batch_size == 0 || self.n_step == 0 || self.target_sync == 0 || self.log_every == 0 {
            return Err(Error::config("batch size, n-step, target sync and log interval must be >= 1"));
        }
        if !(self.policy_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        Ok(())
    }
}

/// Result of [`train_offline`].
#[derive(Clone, Debug)]
pub struct OfflineRun {
    pub policy: GaussianPolicy,
    pub critic: CategoricalCritic,
    pub metrics: Vec<StepMetrics>,
}

/// Trains a policy from `dataset` alone for `cfg.steps` learner steps.
/// The dataset is relabeled with `task` unless it already carries it.
pub fn train_offline(dataset: &Dataset, task: &TaskSpec, cfg: &CrrConfig, seed: u64) -> Result<OfflineRun> {
    cfg.validate()?;
    let env = dataset.env_spec()?;
    let owned;
    let data = if dataset.header.relabel_task.as_ref() == Some(task) {
        dataset
    } else {
        owned = relabel(dataset, task)?;
        &owned
    };
    if data.len() < cfg.batch_size {
        return Err(Error::precondition(format!(
            "dataset of {} transitions cannot fill a batch of {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let v_max = cfg.v_max.unwrap_or(env.episode_length as f64 * task.max_step_reward());
    let mut learner = CrrLearner::new(cfg.clone(), &env, v_max, seed)?;
    let mut rng = stream(seed, "crr-batches", 0);
    let mut metrics = Vec::new();
    let buffer = &data.transitions;
    for _ in 0..cfg.steps {
        let windows = buffer.sample(cfg.batch_size, cfg.n_step, &mut rng)?;
        let batch = TdBatch::from_windows(buffer, &windows, cfg.gamma, |b| Ok(b.rewards.clone()))?;
        let m = learner.update(&batch)?;
        if m.step % cfg.log_every as u64 == 0 || m.step == 1 {
            metrics.push(m);
        }
    }
    Ok(OfflineRun { policy: learner.policy, critic: learner.critic, metrics })
}

pub fn metrics_schema() -> TableSchema {
    TableSchema::new("crr_metrics", "offline training curves")
        .col("step", ColumnType::Integer, "learner step")
        .col("critic_loss", ColumnType::Number, "cross-entropy against the projected target")
        .col("actor_loss", ColumnType::Number, "advantage-weighted negative log-likelihood")
        .col("mean_advantage", ColumnType::Number, "batch mean advantage estimate")
        .col("frac_gated", ColumnType::Number, "fraction of rows with non-positive advantage")
}

pub fn write_metrics_csv(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| {
            vec![
                m.step.to_string(),
                num(m.critic_loss),
                num(m.actor_loss),
                num(m.mean_advantage),
                num(m.frac_gated),
            ]
        })
        .collect();
    write_table(path, &metrics_schema(), &rows)
}
