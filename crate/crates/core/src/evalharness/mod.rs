//! Policy evaluation, dataset-size sweeps and the analyses built on them:
//! rank correlation of return against data statistics, size curves, and
//! the multitask relabeling study.

mod reports;
mod sweep;

use rand::RngCore as _;
use serde::{Deserialize, Serialize};

pub use reports::{
    collection_returns_schema, correlation_report, correlation_schema, multitask_report, multitask_schema,
    size_curve_report, size_curve_schema, write_collection_returns, write_correlations, write_multitask,
    write_size_curves, CorrelationRow, MultitaskRow, SizeCurveRow, NORMALIZED_TASK,
};
pub use sweep::{
    cached_cell, read_records, records_schema, run_sweep, write_records, EvalConfig, RunRecord, SweepConfig, SweepGrid,
    SweepOutcome, CONFIG_FILE, RECORDS_FILE,
};

use crate::agents::GaussianPolicy;
use crate::envsuite::{self, EnvSpec, TaskSpec};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Returns of a batch of evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_return: f64,
    pub returns: Vec<f64>,
}

/// Reset seed of the `episode`-th evaluation episode.
fn eval_reset_seed(seed: u64, episode: u64) -> u64 {
    stream(seed, "eval-reset", episode).next_u64()
}

/// Rolls out `act` for `n_episodes` full episodes and sums `task`'s reward.
pub fn evaluate_with(
    mut act: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    env: &EnvSpec,
    task: &TaskSpec,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    if n_episodes == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let mut returns = Vec::with_capacity(n_episodes);
    for ep in 0..n_episodes {
        let mut state = envsuite::reset(env, eval_reset_seed(seed, ep as u64));
        let mut total = 0.0;
        loop {
            let a = act(&state.obs)?;
            let out = envsuite::step_with_task(env, &state, &a, Some(task))?;
            total += out.reward;
            if out.boundary {
                break;
            }
            state = out.state;
        }
        returns.push(total);
    }
    let mean_return = returns.iter().sum::<f64>() / n_episodes as f64;
    Ok(EvalResult { mean_return, returns })
}

/// Greedy (mean-action) evaluation of `policy`.
pub fn evaluate_policy(policy: &GaussianPolicy, env: &EnvSpec, task: &TaskSpec, n_episodes: usize, seed: u64) -> Result<EvalResult> {
    if policy.obs_dim() != env.obs_dim || policy.act_dim() != env.act_dim {
        return Err(Error::config(format!(
            "policy dims ({}, {}) do not match {} ({}, {})",
            policy.obs_dim(),
            policy.act_dim(),
            env.name,
            env.obs_dim,
            env.act_dim
        )));
    }
    evaluate_with(|s| policy.mean_action(s), env, task, n_episodes, seed)
}

/// Fractional ranks (1-based); ties share the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation. `Ok(None)` when either input has no rank
/// variance, which leaves the coefficient undefined.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::precondition(format!(
            "spearman needs two equal-length inputs of at least 2 values (got {} and {})",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// Median of a non-empty slice (midpoint of the two central values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    crate::datastore::quantile(values, 0.5)
}
