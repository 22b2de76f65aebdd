//! Learned one-step dynamics used for planning.
//!
//! The network sees standardized states and raw actions and predicts the
//! state change in units of the running per-dimension standard deviation
//! of observed changes. Predictions are `s + std_delta * net(...)`, so a
//! zero output layer is the identity map.

use ndarray::{concatenate, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datastore::{ReplayBuffer, Window};
use crate::envsuite::EnvSpec;
use crate::error::{Error, Result};
use crate::funcapprox::{AdamConfig, Checkpoint, Mlp, MlpSpec, ParamStore, Tape, Var};
use crate::rng::stream;

const CHECKPOINT_KIND: &str = "dynamics";
const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Length of the open-loop rollout the training loss is taken over.
    pub train_horizon: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], lr: 1e-3, train_horizon: 3 }
    }
}

/// Per-dimension running mean and variance, merged batch by batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningMeanStd {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningMeanStd {
    pub fn new(dim: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    /// Merges the rows of `x` (parallel-variance formula).
    pub fn update(&mut self, x: &Array2<f64>) {
        let nb = x.nrows() as f64;
        if nb == 0.0 {
            return;
        }
        let bm = x.mean_axis(Axis(0)).expect("non-empty");
        let total = self.count + nb;
        for j in 0..self.mean.len() {
            let col = x.column(j);
            let bm2: f64 = col.iter().map(|v| (v - bm[j]) * (v - bm[j])).sum();
            let d = bm[j] - self.mean[j];
            self.mean[j] += d * nb / total;
            self.m2[j] += bm2 + d * d * self.count * nb / total;
        }
        self.count = total;
    }

    /// Population standard deviation, floored; 1 before any data.
    pub fn std(&self) -> Array1<f64> {
        if self.count == 0.0 {
            return Array1::ones(self.mean.len());
        }
        self.m2.iter().map(|m| (m / self.count).sqrt().max(STD_FLOOR)).collect()
    }

    pub fn mean_arr(&self) -> Array1<f64> {
        Array1::from(self.mean.clone())
    }
}

/// Contiguous sub-trajectories: `states[t]` and `actions[t]` are `B x d`
/// matrices, with `states.len() == actions.len() + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub states: Vec<Array2<f64>>,
    pub actions: Vec<Array2<f64>>,
}

impl TrajectoryBatch {
    /// Gathers the first `horizon` transitions of each window.
    pub fn from_windows(buffer: &ReplayBuffer, windows: &[Window], horizon: usize) -> Result<Self> {
        if horizon == 0 || windows.is_empty() {
            return Err(Error::precondition("trajectory batch needs a horizon and at least one window"));
        }
        if let Some(w) = windows.iter().find(|w| w.len < horizon) {
            return Err(Error::precondition(format!(
                "window of length {} is shorter than the training horizon {horizon}",
                w.len
            )));
        }
        let (b, ds, da) = (windows.len(), buffer.obs_dim(), buffer.act_dim());
        let mut states = vec![Array2::zeros((b, ds)); horizon + 1];
        let mut actions = vec![Array2::zeros((b, da)); horizon];
        for (row, w) in windows.iter().enumerate() {
            for t in 0..horizon {
                let i = w.start + t;
                if t == 0 {
                    states[0].row_mut(row).assign(&ndarray::ArrayView1::from(buffer.state(i)));
                }
                actions[t].row_mut(row).assign(&ndarray::ArrayView1::from(buffer.action(i)));
                states[t + 1].row_mut(row).assign(&ndarray::ArrayView1::from(buffer.next_state(i)));
            }
        }
        Ok(Self { states, actions })
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn rows(&self) -> usize {
        self.states[0].nrows()
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsModel {
    config: DynamicsConfig,
    obs_dim: usize,
    act_dim: usize,
    params: ParamStore,
    net: Mlp,
    state_stats: RunningMeanStd,
    delta_stats: RunningMeanStd,
}

fn net_spec(cfg: &DynamicsConfig, ds: usize, da: usize) -> MlpSpec {
    MlpSpec::new(ds + da, &cfg.hidden, ds)
}

impl DynamicsModel {
    pub fn new(config: DynamicsConfig, obs_dim: usize, act_dim: usize, seed: u64) -> Result<Self> {
        if config.train_horizon == 0 {
            return Err(Error::config("dynamics training horizon must be >= 1"));
        }
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(Error::config("dynamics learning rate must be positive"));
        }
        let mut rng = stream(seed, "dynamics-init", 0);
        let mut params = ParamStore::new();
        let net = Mlp::new(net_spec(&config, obs_dim, act_dim), &mut params, "dyn", &mut rng)?;
        Ok(Self {
            config,
            obs_dim,
            act_dim,
            params,
            net,
            state_stats: RunningMeanStd::new(obs_dim),
            delta_stats: RunningMeanStd::new(obs_dim),
        })
    }

    pub fn for_env(config: DynamicsConfig, env: &EnvSpec, seed: u64) -> Result<Self> {
        Self::new(config, env.obs_dim, env.act_dim, seed)
    }

    pub fn config(&self) -> &DynamicsConfig {
        &self.config
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

    pub fn steps(&self) -> u64 {
        self.params.step()
    }

    pub fn zero_output_layer(&mut self) {
        self.net.zero_output_layer(&mut self.params);
    }

    fn check(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<()> {
        if s.ncols() != self.obs_dim || a.ncols() != self.act_dim || s.nrows() != a.nrows() {
            return Err(Error::contract(format!(
                "dynamics input shapes {:?} / {:?} do not match ({}, {})",
                s.dim(),
                a.dim(),
                self.obs_dim,
                self.act_dim
            )));
        }
        if s.iter().chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite dynamics input"));
        }
        Ok(())
    }

    /// Batched prediction of next states; rows are independent.
    pub fn predict_batch(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(s, a)?;
        let xs = (s - &self.state_stats.mean_arr()) / &self.state_stats.std();
        let input = concatenate(Axis(1), &[xs.view(), a.view()]).expect("rows checked");
        let out = self.net.forward(&self.params, &input)?;
        Ok(s + &(out * &self.delta_stats.std()))
    }

    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let s2 = Array2::from_shape_vec((1, s.len()), s.to_vec()).map_err(|e| Error::contract(e.to_string()))?;
        let a2 = Array2::from_shape_vec((1, a.len()), a.to_vec()).map_err(|e| Error::contract(e.to_string()))?;
        Ok(self.predict_batch(&s2, &a2)?.into_raw_vec_and_offset().0)
    }

    /// Open-loop rollout: `H + 1` states starting with `s0`.
    pub fn rollout(&self, s0: &[f64], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut states = Vec::with_capacity(actions.len() + 1);
        states.push(s0.to_vec());
        for a in actions {
            let next = self.predict(states.last().expect("non-empty"), a)?;
            states.push(next);
        }
        Ok(states)
    }

    fn rollout_loss(&self, tape: &mut Tape, batch: &TrajectoryBatch) -> Result<Var> {
        let h = batch.horizon();
        let mean = self.state_stats.mean_arr().insert_axis(Axis(0));
        let inv_std = self.state_stats.std().mapv(|v| 1.0 / v).insert_axis(Axis(0));
        let dstd = self.delta_stats.std().insert_axis(Axis(0));
        let inv_dstd = dstd.mapv(|v| 1.0 / v);
        let mean_v = tape.constant(mean);
        let inv_std_v = tape.constant(inv_std);
        let dstd_v = tape.constant(dstd);
        let inv_dstd_v = tape.constant(inv_dstd);
        let mut s = tape.constant(batch.states[0].clone());
        let mut total: Option<Var> = None;
        for t in 0..h {
            let centered = tape.sub(s, mean_v)?;
            let xs = tape.mul(centered, inv_std_v)?;
            let a = tape.constant(batch.actions[t].clone());
            let input = tape.concat_cols(&[xs, a])?;
            let out = self.net.forward_tape(tape, &self.params, input)?;
            let delta = tape.mul(out, dstd_v)?;
            s = tape.add(s, delta)?;
            let truth = tape.constant(batch.states[t + 1].clone());
            let err = tape.sub(s, truth)?;
            let scaled = tape.mul(err, inv_dstd_v)?;
            let sq = tape.square(scaled);
            let step = tape.sum_all(sq);
            total = Some(match total {
                Some(acc) => tape.add(acc, step)?,
                None => step,
            });
        }
        let total = total.expect("horizon >= 1");
        Ok(tape.scale(total, 1.0 / batch.rows() as f64))
    }

    /// Loss of the current model on `batch` without touching anything.
    pub fn loss(&self, batch: &TrajectoryBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let loss = self.rollout_loss(&mut tape, batch)?;
        Ok(tape.scalar(loss))
    }

    /// Updates the normalization statistics from `batch`, then takes one
    /// Adam step on the summed squared rollout error. Returns the loss
    /// before the step.
    pub fn train(&mut self, batch: &TrajectoryBatch) -> Result<f64> {
        if batch.horizon() == 0 || batch.states.len() != batch.horizon() + 1 {
            return Err(Error::precondition("trajectory batch needs states.len() == actions.len() + 1 >= 2"));
        }
        for t in 0..batch.horizon() {
            self.check(&batch.states[t], &batch.actions[t])?;
        }
        self.check(&batch.states[batch.horizon()], &batch.actions[0])?;
        self.state_stats.update(&batch.states[0]);
        self.delta_stats.update(&(&batch.states[1] - &batch.states[0]));
        let mut tape = Tape::new();
        let loss = self.rollout_loss(&mut tape, batch)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("dynamics loss at step {} ({value})", self.params.step())));
        }
        let grads = tape.backward(loss)?.for_store(&self.params);
        self.params.adam_step(&grads, &AdamConfig::with_lr(self.config.lr))?;
        Ok(value)
    }

    /// Samples windows of the configured horizon from `buffer` and trains on them.
    pub fn train_from_buffer(&mut self, buffer: &ReplayBuffer, batch_size: usize, seed: u64) -> Result<f64> {
        let h = self.config.train_horizon;
        let mut rng = stream(seed, "dynamics-batch", self.params.step());
        let windows = buffer.sample(batch_size, h, &mut rng)?;
        let batch = TrajectoryBatch::from_windows(buffer, &windows, h)?;
        self.train(&batch)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "config": self.config,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "state_count": self.state_stats.count,
            "delta_count": self.delta_stats.count,
        });
        Checkpoint::new(CHECKPOINT_KIND, meta, self.params.clone())
            .with_aux("state_mean", self.state_stats.mean.clone())
            .with_aux("state_m2", self.state_stats.m2.clone())
            .with_aux("delta_mean", self.delta_stats.mean.clone())
            .with_aux("delta_m2", self.delta_stats.m2.clone())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::config(format!("checkpoint kind '{}' is not a dynamics model", ckpt.kind)));
        }
        let field = |name: &str| {
            ckpt.meta.get(name).cloned().ok_or_else(|| Error::config(format!("checkpoint meta lacks '{name}'")))
        };
        let aux = |name: &str| {
            ckpt.aux(name).map(<[f64]>::to_vec).ok_or_else(|| Error::config(format!("checkpoint lacks '{name}'")))
        };
        let config: DynamicsConfig = serde_json::from_value(field("config")?)?;
        let obs_dim: usize = serde_json::from_value(field("obs_dim")?)?;
        let act_dim: usize = serde_json::from_value(field("act_dim")?)?;
        let state_stats = RunningMeanStd {
            count: serde_json::from_value(field("state_count")?)?,
            mean: aux("state_mean")?,
            m2: aux("state_m2")?,
        };
        let delta_stats = RunningMeanStd {
            count: serde_json::from_value(field("delta_count")?)?,
            mean: aux("delta_mean")?,
            m2: aux("delta_m2")?,
        };
        if [&state_stats.mean, &state_stats.m2, &delta_stats.mean, &delta_stats.m2].iter().any(|v| v.len() != obs_dim) {
            return Err(Error::config("normalization statistics have the wrong length"));
        }
        let net = Mlp::attach(net_spec(&config, obs_dim, act_dim), &ckpt.store, "dyn")?;
        Ok(Self { config, obs_dim, act_dim, params: ckpt.store.clone(), net, state_stats, delta_stats })
    }
}
