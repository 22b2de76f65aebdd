use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::envsuite::EnvSpec;
use crate::error::{Error, Result};
use crate::funcapprox::{AdamConfig, BlockId, Checkpoint, Mlp, MlpSpec, ParamStore, Tape, Var};
use crate::planner::Proposal;
use crate::rng::{stream, Rng};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
const CHECKPOINT_KIND: &str = "policy";
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// State-conditioned Gaussian over actions: mean `tanh(mlp(s / scale))`,
/// state-independent log-std kept in `[LOG_STD_MIN, LOG_STD_MAX]`.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    obs_dim: usize,
    act_dim: usize,
    scale: Array1<f64>,
    mlp: Mlp,
    log_std: BlockId,
    params: ParamStore,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, act_dim: usize, scale: Vec<f64>, hidden: &[usize], init_log_std: f64, seed: u64) -> Result<Self> {
        if scale.len() != obs_dim || scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("policy state scale must hold one positive entry per observation dimension"));
        }
        let mut rng = stream(seed, "policy-init", 0);
        let mut params = ParamStore::new();
        let mlp = Mlp::new(MlpSpec::new(obs_dim, hidden, act_dim), &mut params, "pi", &mut rng)?;
        let ls = init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let log_std = params.add("pi.log_std", Array2::from_elem((1, act_dim), ls))?;
        Ok(Self { obs_dim, act_dim, scale: Array1::from(scale), mlp, log_std, params })
    }

    pub fn for_env(env: &EnvSpec, hidden: &[usize], init_log_std: f64, seed: u64) -> Result<Self> {
        Self::new(env.obs_dim, env.act_dim, env.obs_scale(), hidden, init_log_std, seed)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn log_std(&self) -> Vec<f64> {
        self.params.value(self.log_std).row(0).to_vec()
    }

    fn check_states(&self, s: &Array2<f64>) -> Result<()> {
        if s.ncols() != self.obs_dim {
            return Err(Error::config(format!("policy expects {} state dims, got {}", self.obs_dim, s.ncols())));
        }
        Ok(())
    }

    /// Greedy actions for a batch of states.
    pub fn mean_batch(&self, s: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_states(s)?;
        let out = self.mlp.forward(&self.params, &(s / &self.scale))?;
        Ok(out.mapv(f64::tanh))
    }

    pub fn mean_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        let m = Array2::from_shape_vec((1, s.len()), s.to_vec()).map_err(|e| Error::config(e.to_string()))?;
        Ok(self.mean_batch(&m)?.into_raw_vec_and_offset().0)
    }

    /// One sampled action per row, clipped to the action box.
    pub fn sample_batch(&self, s: &Array2<f64>, rng: &mut Rng) -> Result<Array2<f64>> {
        let mean = self.mean_batch(s)?;
        let std = self.params.value(self.log_std).row(0).mapv(f64::exp);
        let mut out = mean;
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                *v = (*v + std[j] * e).clamp(-1.0, 1.0);
            }
        }
        Ok(out)
    }

    pub fn sample(&self, s: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let m = Array2::from_shape_vec((1, s.len()), s.to_vec()).map_err(|e| Error::config(e.to_string()))?;
        Ok(self.sample_batch(&m, rng)?.into_raw_vec_and_offset().0)
    }

    /// Per-row `log pi(a | s)` of the unclipped Gaussian.
    pub fn log_prob_batch(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<Vec<f64>> {
        let mean = self.mean_batch(s)?;
        let ls = self.params.value(self.log_std).row(0).to_owned();
        let inv_var = ls.mapv(|l| (-2.0 * l).exp());
        let norm: f64 = ls.sum() + self.act_dim as f64 * HALF_LOG_2PI;
        let d = a - &mean;
        let quad = (&d * &d * &inv_var).sum_axis(Axis(1));
        Ok(quad.iter().map(|q| -0.5 * q - norm).collect())
    }

    /// `log pi(a | s)` recorded on `tape`, as an `n x 1` column.
    pub fn log_prob_tape(&self, tape: &mut Tape, s: &Array2<f64>, a: &Array2<f64>) -> Result<Var> {
        self.check_states(s)?;
        if a.ncols() != self.act_dim || a.nrows() != s.nrows() {
            return Err(Error::config("policy log-prob: action batch shape mismatch"));
        }
        let x = tape.constant(s / &self.scale);
        let out = self.mlp.forward_tape(tape, &self.params, x)?;
        let mean = tape.tanh(out);
        let av = tape.constant(a.clone());
        let d = tape.sub(av, mean)?;
        let sq = tape.square(d);
        let ls = tape.param(&self.params, self.log_std);
        let neg2 = tape.scale(ls, -2.0);
        let inv_var = tape.exp(neg2);
        let w = tape.mul(sq, inv_var)?;
        let quad = tape.sum_rows(w);
        let half = tape.scale(quad, -0.5);
        let ls_sum = tape.sum_rows(ls);
        let norm = tape.add_scalar(ls_sum, self.act_dim as f64 * HALF_LOG_2PI);
        tape.sub(half, norm)
    }

    /// Gradient step on `-mean_i(weights_i * log pi(a_i | s_i))`; returns the
    /// pre-step loss. Rows with zero weight contribute exactly nothing.
    pub fn weighted_nll_step(&mut self, s: &Array2<f64>, a: &Array2<f64>, weights: &[f64], adam: &AdamConfig) -> Result<f64> {
        let n = s.nrows();
        if n == 0 || weights.len() != n {
            return Err(Error::contract("weighted NLL needs one weight per row of a non-empty batch"));
        }
        let mut tape = Tape::new();
        let lp = self.log_prob_tape(&mut tape, s, a)?;
        if tape.value(lp).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy log-density".into()));
        }
        let wv = tape.constant(Array2::from_shape_vec((n, 1), weights.to_vec()).expect("n x 1"));
        let weighted = tape.mul(lp, wv)?;
        let total = tape.sum_all(weighted);
        let loss = tape.scale(total, -1.0 / n as f64);
        let value = tape.scalar(loss);
        crate::error::ensure_finite(value, "actor loss")?;
        let grads = tape.backward(loss)?.for_store(&self.params);
        self.params.adam_step(&grads, adam)?;
        self.params.map_inplace(self.log_std, |v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok(value)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "hidden": self.mlp.spec().hidden,
        });
        Checkpoint::new(CHECKPOINT_KIND, meta, self.params.clone()).with_aux("scale", self.scale.to_vec())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::config(format!("checkpoint kind '{}' is not a policy", ckpt.kind)));
        }
        let field = |name: &str| {
            ckpt.meta.get(name).cloned().ok_or_else(|| Error::config(format!("checkpoint meta lacks '{name}'")))
        };
        let obs_dim: usize = serde_json::from_value(field("obs_dim")?)?;
        let act_dim: usize = serde_json::from_value(field("act_dim")?)?;
        let hidden: Vec<usize> = serde_json::from_value(field("hidden")?)?;
        let scale = ckpt.aux("scale").ok_or_else(|| Error::config("policy checkpoint lacks 'scale'"))?;
        if scale.len() != obs_dim {
            return Err(Error::config("policy checkpoint scale has the wrong length"));
        }
        let mlp = Mlp::attach(MlpSpec::new(obs_dim, &hidden, act_dim), &ckpt.store, "pi")?;
        let log_std = ckpt.store.id("pi.log_std").ok_or_else(|| Error::config("policy checkpoint lacks log-std"))?;
        Ok(Self {
            obs_dim,
            act_dim,
            scale: Array1::from(scale.to_vec()),
            mlp,
            log_std,
            params: ckpt.store.clone(),
        })
    }
}

impl Proposal for GaussianPolicy {
    fn propose(&self, s: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        self.sample(s, rng)
    }
}
