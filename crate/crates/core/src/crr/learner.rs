use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::critic::CategoricalCritic;
use super::projection::{project_into, Support};
use super::CrrConfig;
use crate::agents::GaussianPolicy;
use crate::datastore::{ReplayBuffer, SarsBatch, Window};
use crate::envsuite::EnvSpec;
use crate::error::{Error, Result};
use crate::funcapprox::{AdamConfig, Tape};
use crate::rng::{stream, Rng};

/// n-step TD training rows: `returns[i] = sum_k gamma^k r_{t+k}` over the
/// window and `discounts[i]` is the factor applied to the bootstrap value
/// at `boot_states[i]` (zero after a true terminal).
#[derive(Clone, Debug, PartialEq)]
pub struct TdBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub returns: Vec<f64>,
    pub discounts: Vec<f64>,
    pub boot_states: Array2<f64>,
}

impl TdBatch {
    /// Folds each window into one row. `rewards_of` receives every
    /// transition of every window (window after window) and returns one
    /// reward per row; this is where intrinsic rewards are recomputed.
    pub fn from_windows(
        buffer: &ReplayBuffer,
        windows: &[Window],
        gamma: f64,
        rewards_of: impl FnOnce(&SarsBatch) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::precondition("TD batch needs at least one window"));
        }
        let idx: Vec<usize> = windows.iter().flat_map(|w| w.indices()).collect();
        let all = buffer.gather(&idx);
        let rewards = rewards_of(&all)?;
        if rewards.len() != idx.len() {
            return Err(Error::contract("reward source returned the wrong number of rewards"));
        }
        let firsts: Vec<usize> = windows.iter().map(|w| w.start).collect();
        let lasts: Vec<usize> = windows.iter().map(|w| w.last()).collect();
        let head = buffer.gather(&firsts);
        let tail = buffer.gather(&lasts);
        let mut returns = Vec::with_capacity(windows.len());
        let mut discounts = Vec::with_capacity(windows.len());
        let mut offset = 0;
        for w in windows {
            let mut g = 0.0;
            let mut disc = 1.0;
            for k in 0..w.len {
                g += disc * rewards[offset + k];
                disc *= gamma;
                if all.terminal[offset + k] {
                    disc = 0.0;
                    break;
                }
            }
            returns.push(g);
            discounts.push(disc);
            offset += w.len;
        }
        Ok(Self { states: head.states, actions: head.actions, returns, discounts, boot_states: tail.next_states })
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

/// `Q(s, a) - mean_i Q(s, a_i)` with `a_i` drawn by `sample` once per
/// baseline draw.
pub fn advantage_with(
    q: impl Fn(&Array2<f64>, &Array2<f64>) -> Result<Vec<f64>>,
    mut sample: impl FnMut(&Array2<f64>) -> Result<Array2<f64>>,
    s: &Array2<f64>,
    a: &Array2<f64>,
    m: usize,
) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::config("advantage needs at least one baseline sample"));
    }
    let q_sa = q(s, a)?;
    let mut base = vec![0.0; s.nrows()];
    for _ in 0..m {
        let ai = sample(s)?;
        for (b, v) in base.iter_mut().zip(q(s, &ai)?) {
            *b += v;
        }
    }
    Ok(q_sa.iter().zip(&base).map(|(x, b)| x - b / m as f64).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_advantage: f64,
    /// Fraction of rows whose advantage is <= 0 and so carries no actor gradient.
    pub frac_gated: f64,
}

/// Policy + categorical critic trained with advantage-weighted regression.
/// Used offline on relabeled datasets and online by the collection agents.
#[derive(Clone, Debug)]
pub struct CrrLearner {
    cfg: CrrConfig,
    pub policy: GaussianPolicy,
    pub critic: CategoricalCritic,
    steps: u64,
    seed: u64,
}

impl CrrLearner {
    pub fn new(cfg: CrrConfig, env: &EnvSpec, v_max: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let support = Support::new(cfg.v_min, v_max, cfg.n_atoms)?;
        let policy = GaussianPolicy::for_env(env, &cfg.hidden, cfg.init_log_std, seed)?;
        let critic = CategoricalCritic::new(env.obs_dim, env.act_dim, env.obs_scale(), &cfg.hidden, support, seed)?;
        Ok(Self { cfg, policy, critic, steps: 0, seed })
    }

    pub fn from_parts(cfg: CrrConfig, policy: GaussianPolicy, critic: CategoricalCritic, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, policy, critic, steps: 0, seed })
    }

    pub fn config(&self) -> &CrrConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Projected target distributions, one row per batch row.
    pub fn critic_targets(&self, batch: &TdBatch, rng: &mut Rng) -> Result<Array2<f64>> {
        let n = batch.len();
        let n_atoms = self.critic.support().n_atoms;
        let k = self.cfg.next_action_samples;
        let mut mix = Array2::<f64>::zeros((n, n_atoms));
        for _ in 0..k {
            let a_next = self.policy.sample_batch(&batch.boot_states, rng)?;
            mix += &self.critic.target_probs(&batch.boot_states, &a_next)?;
        }
        mix /= k as f64;
        let atoms = self.critic.atoms().to_vec();
        let mut out = Array2::<f64>::zeros((n, n_atoms));
        let mut row = vec![0.0; n_atoms];
        for i in 0..n {
            let p = mix.row(i).to_vec();
            project_into(&atoms, batch.returns[i], batch.discounts[i], &p, &mut row);
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
        }
        Ok(out)
    }

    /// Cross-entropy of the online critic against fixed target distributions.
    pub fn critic_loss_against(&self, batch: &TdBatch, targets: &Array2<f64>) -> Result<(f64, crate::funcapprox::Gradients)> {
        let mut tape = Tape::new();
        let logits = self.critic.logits_tape(&mut tape, &batch.states, &batch.actions)?;
        let logp = tape.log_softmax(logits);
        let t = tape.constant(targets.clone());
        let prod = tape.mul(logp, t)?;
        let total = tape.sum_all(prod);
        let loss = tape.scale(total, -1.0 / batch.len() as f64);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("critic loss at step {} ({value})", self.steps)));
        }
        let grads = tape.backward(loss)?.for_store(self.critic.params());
        Ok((value, grads))
    }

    pub fn critic_loss(&self, batch: &TdBatch, rng: &mut Rng) -> Result<f64> {
        let targets = self.critic_targets(batch, rng)?;
        Ok(self.critic_loss_against(batch, &targets)?.0)
    }

    pub fn advantages(&self, s: &Array2<f64>, a: &Array2<f64>, rng: &mut Rng) -> Result<Vec<f64>> {
        advantage_with(
            |s, a| self.critic.q_values(s, a),
            |s| self.policy.sample_batch(s, rng),
            s,
            a,
            self.cfg.advantage_samples,
        )
    }

    /// `-mean_i ReLU(A_i) log pi(a_i | s_i)` for given advantages.
    pub fn actor_loss_with(&self, s: &Array2<f64>, a: &Array2<f64>, adv: &[f64]) -> Result<f64> {
        let lp = self.policy.log_prob_batch(s, a)?;
        if lp.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy log-density".into()));
        }
        let n = lp.len() as f64;
        Ok(-lp.iter().zip(adv).map(|(l, &x)| x.max(0.0) * l).sum::<f64>() / n)
    }

    /// One critic step then one actor step on the same rows.
    pub fn update(&mut self, batch: &TdBatch) -> Result<StepMetrics> {
        let mut rng = stream(self.seed, "crr-update", self.steps);
        let targets = self.critic_targets(batch, &mut rng)?;
        let (critic_loss, grads) = self.critic_loss_against(batch, &targets)?;
        self.critic.params_mut().adam_step(&grads, &AdamConfig::with_lr(self.cfg.critic_lr))?;

        let adv = self.advantages(&batch.states, &batch.actions, &mut rng)?;
        let weights: Vec<f64> = adv.iter().map(|&x| x.max(0.0)).collect();
        let actor_loss =
            self.policy
                .weighted_nll_step(&batch.states, &batch.actions, &weights, &AdamConfig::with_lr(self.cfg.policy_lr))?;

        self.steps += 1;
        if self.steps.is_multiple_of(self.cfg.target_sync) {
            self.critic.sync_target()?;
        }
        let n = adv.len() as f64;
        Ok(StepMetrics {
            step: self.steps,
            critic_loss,
            actor_loss,
            mean_advantage: adv.iter().sum::<f64>() / n,
            frac_gated: adv.iter().filter(|&&x| x <= 0.0).count() as f64 / n,
        })
    }
}
