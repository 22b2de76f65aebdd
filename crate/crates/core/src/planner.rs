//! Cross-entropy-method planning over a learned model.
//!
//! Candidate sequences are sampled unclipped around the current mean and
//! clipped to the action box only when scored and executed. Each
//! iteration re-scores the current mean and the best sequence found so
//! far alongside the fresh samples, so the best return seen can only grow.

use ndarray::{Array2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curiosity::CuriosityModel;
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::worldmodel::DynamicsModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub samples: usize,
    pub elite_frac: f64,
    pub iterations: usize,
    pub sigma_init: f64,
    pub alpha_mean: f64,
    pub alpha_std: f64,
    /// Probability of planning instead of sampling the proposal policy.
    pub rho: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            samples: 64,
            elite_frac: 0.1,
            iterations: 4,
            sigma_init: 0.3,
            alpha_mean: 0.9,
            alpha_std: 0.5,
            rho: 0.9,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.horizon < 1 || self.samples < 2 || self.iterations < 1 {
            return Err(Error::config("planner needs horizon >= 1, samples >= 2, iterations >= 1"));
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return Err(Error::config("elite fraction must be in (0, 1]"));
        }
        if !(self.sigma_init >= 0.0 && self.sigma_init.is_finite()) {
            return Err(Error::config("sigma_init must be finite and >= 0"));
        }
        if !unit(self.alpha_mean) || !unit(self.alpha_std) || !unit(self.rho) {
            return Err(Error::config("alpha_mean, alpha_std and rho must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn num_elites(&self) -> usize {
        ((self.elite_frac * self.samples as f64).ceil() as usize).clamp(1, self.samples)
    }
}

/// Batched one-step model: rows of `s` and `a` are independent candidates.
pub trait Dynamics {
    fn step_batch(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>>;
}

impl Dynamics for DynamicsModel {
    fn step_batch(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>> {
        self.predict_batch(s, a)
    }
}

/// The model that leaves every state unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDynamics;

impl Dynamics for IdentityDynamics {
    fn step_batch(&self, s: &Array2<f64>, _a: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(s.clone())
    }
}

/// A per-step reward computable from `(state, action)` alone.
pub trait StepReward {
    fn score(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Result<Vec<f64>>;
}

impl<F> StepReward for F
where
    F: Fn(&Array2<f64>, &Array2<f64>) -> Result<Vec<f64>>,
{
    fn score(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Result<Vec<f64>> {
        self(states, actions)
    }
}

/// A curiosity model used as planning reward. Only models that need no
/// true next state can be wrapped.
#[derive(Clone, Copy, Debug)]
pub struct CuriosityReward<'a> {
    model: &'a CuriosityModel,
}

impl<'a> CuriosityReward<'a> {
    pub fn new(model: &'a CuriosityModel) -> Result<Self> {
        if !model.kind().planner_compatible() {
            return Err(Error::config(format!(
                "{} needs the true next state and cannot score imagined rollouts",
                model.kind()
            )));
        }
        Ok(Self { model })
    }
}

impl StepReward for CuriosityReward<'_> {
    fn score(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Result<Vec<f64>> {
        self.model.rewards(states, Some(actions), None)
    }
}

/// Source of the initial plan and of non-planning actions.
pub trait Proposal {
    /// One action for state `s`; may draw from `rng`.
    fn propose(&self, s: &[f64], rng: &mut Rng) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    /// `H x d_a` mean action sequence.
    pub mean: Array2<f64>,
    /// `H x d_a` per-dimension standard deviation.
    pub std: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    /// First action of the final mean, clipped to `[-1, 1]`.
    pub action: Vec<f64>,
    pub plan: Plan,
    /// Best return among the scored candidates, per iteration.
    pub best_returns: Vec<f64>,
    /// The candidates scored in the last iteration (unclipped).
    pub last_candidates: Vec<Array2<f64>>,
}

fn clip(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.clamp(-1.0, 1.0))
}

/// Undiscounted return of each candidate sequence, scored on clipped actions:
/// `sum_t reward(s_t, a_t)` over the imagined rollout from `s0`.
pub fn evaluate_batch(
    s0: &[f64],
    candidates: &[Array2<f64>],
    model: &impl Dynamics,
    reward: &impl StepReward,
) -> Result<Vec<f64>> {
    let n = candidates.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let h = candidates[0].nrows();
    let da = candidates[0].ncols();
    let mut states = Array2::from_shape_fn((n, s0.len()), |(_, j)| s0[j]);
    let mut total = vec![0.0; n];
    for t in 0..h {
        let mut actions = Array2::zeros((n, da));
        for (i, c) in candidates.iter().enumerate() {
            actions.row_mut(i).assign(&c.row(t).mapv(|v| v.clamp(-1.0, 1.0)));
        }
        let r = reward.score(&states, &actions)?;
        if r.len() != n {
            return Err(Error::contract("reward returned the wrong number of scores"));
        }
        for (acc, v) in total.iter_mut().zip(r) {
            *acc += v;
        }
        if t + 1 < h {
            states = model.step_batch(&states, &actions)?;
        }
    }
    Ok(total)
}

/// Return of one `H x d_a` action sequence.
pub fn evaluate_actions(
    s0: &[f64],
    actions: &Array2<f64>,
    model: &impl Dynamics,
    reward: &impl StepReward,
) -> Result<f64> {
    Ok(evaluate_batch(s0, std::slice::from_ref(actions), model, reward)?[0])
}

fn proposal_sequence(
    s0: &[f64],
    proposal: &impl Proposal,
    model: &impl Dynamics,
    horizon: usize,
    rng: &mut Rng,
) -> Result<Array2<f64>> {
    let mut s = Array2::from_shape_vec((1, s0.len()), s0.to_vec()).map_err(|e| Error::contract(e.to_string()))?;
    let mut rows = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let a: Vec<f64> = proposal.propose(s.row(0).as_slice().expect("contiguous"), rng)?;
        let a2 = Array2::from_shape_vec((1, a.len()), a.clone()).map_err(|e| Error::contract(e.to_string()))?;
        if t + 1 < horizon {
            s = model.step_batch(&s, &clip(&a2))?;
        }
        rows.push(a);
    }
    let da = rows[0].len();
    Array2::from_shape_vec((horizon, da), rows.concat()).map_err(|e| Error::contract(e.to_string()))
}

/// Full CEM optimization from `s0`; see the module docs for the candidate set.
pub fn cem_plan(
    s0: &[f64],
    proposal: &impl Proposal,
    model: &impl Dynamics,
    reward: &impl StepReward,
    cfg: &PlannerConfig,
    seed: u64,
) -> Result<PlanOutcome> {
    cfg.validate()?;
    let mut rng = stream(seed, "cem", 0);
    let mut mean = proposal_sequence(s0, proposal, model, cfg.horizon, &mut rng)?;
    let da = mean.ncols();
    let mut std = Array2::from_elem((cfg.horizon, da), cfg.sigma_init);
    let k = cfg.num_elites();
    let mut best: Option<(f64, Array2<f64>)> = None;
    let mut best_returns = Vec::with_capacity(cfg.iterations);
    let mut candidates = Vec::new();
    for _ in 0..cfg.iterations {
        candidates.clear();
        candidates.push(mean.clone());
        if let Some((_, b)) = &best {
            candidates.push(b.clone());
        }
        while candidates.len() < cfg.samples {
            let noise = Array2::from_shape_simple_fn((cfg.horizon, da), || rng.sample::<f64, _>(StandardNormal));
            candidates.push(&mean + &(&std * &noise));
        }
        let returns = evaluate_batch(s0, &candidates, model, reward)?;
        let mut order: Vec<usize> = (0..candidates.len()).filter(|&i| returns[i].is_finite()).collect();
        if order.is_empty() {
            return Err(Error::NonFinite(format!("all {} candidate returns", candidates.len())));
        }
        order.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]).then(a.cmp(&b)));
        let top = order[0];
        if best.as_ref().is_none_or(|(r, _)| returns[top] > *r) {
            best = Some((returns[top], candidates[top].clone()));
        }
        best_returns.push(best.as_ref().expect("set above").0);

        let elites = &order[..k.min(order.len())];
        let ne = elites.len() as f64;
        let mut e_mean = Array2::<f64>::zeros(mean.dim());
        for &i in elites {
            e_mean += &candidates[i];
        }
        e_mean /= ne;
        let mut e_var = Array2::<f64>::zeros(mean.dim());
        for &i in elites {
            let d = &candidates[i] - &e_mean;
            e_var += &(&d * &d);
        }
        e_var /= ne;
        mean = &mean * (1.0 - cfg.alpha_mean) + &e_mean * cfg.alpha_mean;
        std = &std * (1.0 - cfg.alpha_std) + &e_var.mapv(f64::sqrt) * cfg.alpha_std;
    }
    let action = mean.index_axis(Axis(0), 0).mapv(|v| v.clamp(-1.0, 1.0)).to_vec();
    Ok(PlanOutcome { action, plan: Plan { mean, std }, best_returns, last_candidates: candidates })
}

/// Seeded coin flip deciding whether a step is planned.
pub fn plan_gate(rho: f64, seed: u64) -> bool {
    stream(seed, "plan-gate", 0).random::<f64>() < rho
}

/// With probability `rho` the planner's action, otherwise a proposal sample; clipped.
pub fn maybe_plan(
    s: &[f64],
    proposal: &impl Proposal,
    model: &impl Dynamics,
    reward: &impl StepReward,
    cfg: &PlannerConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if plan_gate(cfg.rho, seed) {
        Ok(cem_plan(s, proposal, model, reward, cfg, seed)?.action)
    } else {
        let mut rng = stream(seed, "proposal-act", 0);
        Ok(proposal.propose(s, &mut rng)?.iter().map(|a| a.clamp(-1.0, 1.0)).collect())
    }
}
