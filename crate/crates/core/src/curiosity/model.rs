use ndarray::{concatenate, Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CuriosityConfig, CuriosityKind, Label};
use crate::datastore::SarsBatch;
use crate::envsuite::EnvSpec;
use crate::error::{Error, Result};
use crate::funcapprox::{AdamConfig, Checkpoint, Gradients, Mlp, MlpSpec, ParamStore, Tape, Var};
use crate::rng::stream;

const CHECKPOINT_KIND: &str = "curiosity";

#[derive(Clone, Debug)]
enum Nets {
    Rnd { target: Mlp, predictor: Mlp },
    Icm { encoder: Mlp, inverse: Mlp, forward: Mlp },
    Nsm { net: Mlp },
    Dd { members: Vec<Mlp> },
}

/// Welford running statistics of training-batch rewards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    count: f64,
    mean: f64,
    m2: f64,
}

impl RewardNormalizer {
    pub fn update(&mut self, values: &[f64]) {
        for &x in values {
            self.count += 1.0;
            let d = x - self.mean;
            self.mean += d / self.count;
            self.m2 += d * (x - self.mean);
        }
    }

    /// Current standard deviation, or 1 until two samples with spread have been seen.
    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            return 1.0;
        }
        let sd = (self.m2 / (self.count - 1.0)).sqrt();
        if sd > 1e-12 {
            sd
        } else {
            1.0
        }
    }
}

/// One intrinsic-reward model with its own parameters and optimizer state.
#[derive(Clone, Debug)]
pub struct CuriosityModel {
    config: CuriosityConfig,
    obs_dim: usize,
    act_dim: usize,
    scale: Array1<f64>,
    seed: u64,
    params: ParamStore,
    nets: Nets,
    normalizer: RewardNormalizer,
}

fn layer_specs(cfg: &CuriosityConfig, ds: usize, da: usize) -> Vec<(String, MlpSpec)> {
    let h = &cfg.hidden;
    match cfg.kind {
        CuriosityKind::Rnd => vec![
            ("rnd.target".into(), MlpSpec::new(ds, h, cfg.embed_dim)),
            ("rnd.predictor".into(), MlpSpec::new(ds, h, cfg.embed_dim)),
        ],
        CuriosityKind::Icm => vec![
            ("icm.encoder".into(), MlpSpec::new(ds, h, cfg.latent_dim)),
            ("icm.inverse".into(), MlpSpec::new(2 * cfg.latent_dim, h, da)),
            ("icm.forward".into(), MlpSpec::new(cfg.latent_dim + da, h, cfg.latent_dim)),
        ],
        CuriosityKind::Nsm => vec![("nsm.net".into(), MlpSpec::new(ds + da, h, ds))],
        CuriosityKind::Dd => (0..cfg.ensemble_size)
            .map(|k| (format!("dd.m{k}"), MlpSpec::new(ds + da, h, ds)))
            .collect(),
    }
}

fn assemble(kind: CuriosityKind, mut mlps: Vec<Mlp>) -> Nets {
    match kind {
        CuriosityKind::Rnd => {
            let predictor = mlps.pop().expect("two nets");
            let target = mlps.pop().expect("two nets");
            Nets::Rnd { target, predictor }
        }
        CuriosityKind::Icm => {
            let forward = mlps.pop().expect("three nets");
            let inverse = mlps.pop().expect("three nets");
            let encoder = mlps.pop().expect("three nets");
            Nets::Icm { encoder, inverse, forward }
        }
        CuriosityKind::Nsm => Nets::Nsm { net: mlps.pop().expect("one net") },
        CuriosityKind::Dd => Nets::Dd { members: mlps },
    }
}

fn hcat(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts checked by caller")
}

fn row_sq_dist(a: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum())
        .collect()
}

fn one_row(x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector")
}

impl CuriosityModel {
    /// Builds a freshly initialized model. `scale` divides every state
    /// dimension before it reaches a network.
    pub fn new(config: CuriosityConfig, obs_dim: usize, act_dim: usize, scale: Vec<f64>, seed: u64) -> Result<Self> {
        config.validate()?;
        if scale.len() != obs_dim || scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("state scale must hold one positive entry per observation dimension"));
        }
        let mut rng = stream(seed, "curiosity-init", 0);
        let mut params = ParamStore::new();
        let mut mlps = Vec::new();
        for (prefix, spec) in layer_specs(&config, obs_dim, act_dim) {
            mlps.push(Mlp::new(spec, &mut params, &prefix, &mut rng)?);
        }
        let nets = assemble(config.kind, mlps);
        Ok(Self {
            config,
            obs_dim,
            act_dim,
            scale: Array1::from(scale),
            seed,
            params,
            nets,
            normalizer: RewardNormalizer::default(),
        })
    }

    pub fn for_env(config: CuriosityConfig, env: &EnvSpec, seed: u64) -> Result<Self> {
        Self::new(config, env.obs_dim, env.act_dim, env.obs_scale(), seed)
    }

    pub fn kind(&self) -> CuriosityKind {
        self.config.kind
    }

    pub fn config(&self) -> &CuriosityConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Number of training steps taken so far.
    pub fn steps(&self) -> u64 {
        self.params.step()
    }

    pub fn normalizer(&self) -> &RewardNormalizer {
        &self.normalizer
    }

    /// Parameter block ids of the frozen RND target (empty for other kinds).
    pub fn frozen_blocks(&self) -> Vec<crate::funcapprox::BlockId> {
        match &self.nets {
            Nets::Rnd { target, .. } => target.layers().iter().flat_map(|&(w, b)| [w, b]).collect(),
            _ => Vec::new(),
        }
    }

    fn norm_states(&self, s: &Array2<f64>) -> Array2<f64> {
        s / &self.scale
    }

    fn check_width(&self, m: &Array2<f64>, width: usize, rows: usize, label: Label) -> Result<()> {
        if m.ncols() != width || m.nrows() != rows {
            return Err(Error::contract(format!(
                "label {} has shape {:?}, expected ({rows}, {width})",
                label.symbol(),
                m.dim()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!("label {} contains non-finite values", label.symbol())));
        }
        Ok(())
    }

    /// Reward for one transition. Labels the model does not evaluate on are ignored.
    pub fn intrinsic_reward(&self, s: &[f64], a: Option<&[f64]>, s_next: Option<&[f64]>) -> Result<f64> {
        let a = a.map(one_row);
        let sn = s_next.map(one_row);
        Ok(self.rewards(&one_row(s), a.as_ref(), sn.as_ref())?[0])
    }

    /// Batched rewards, after the optional running-std normalization.
    pub fn rewards(&self, s: &Array2<f64>, a: Option<&Array2<f64>>, s_next: Option<&Array2<f64>>) -> Result<Vec<f64>> {
        let mut r = self.raw_rewards(s, a, s_next)?;
        if self.config.normalize_rewards {
            let sd = self.normalizer.std();
            r.iter_mut().for_each(|x| *x /= sd);
        }
        Ok(r)
    }

    /// Batched rewards straight from the model error or disagreement.
    pub fn raw_rewards(&self, s: &Array2<f64>, a: Option<&Array2<f64>>, s_next: Option<&Array2<f64>>) -> Result<Vec<f64>> {
        let kind = self.config.kind;
        let n = s.nrows();
        self.check_width(s, self.obs_dim, n, Label::State)?;
        let need = kind.evaluation_labels();
        let missing = |label: Label| {
            Error::contract(format!("{kind} intrinsic reward requires label {}", label.symbol()))
        };
        let a = if need.contains(&Label::Action) {
            let a = a.ok_or_else(|| missing(Label::Action))?;
            self.check_width(a, self.act_dim, n, Label::Action)?;
            Some(a)
        } else {
            None
        };
        let s_next = if need.contains(&Label::NextState) {
            let sn = s_next.ok_or_else(|| missing(Label::NextState))?;
            self.check_width(sn, self.obs_dim, n, Label::NextState)?;
            Some(self.norm_states(sn))
        } else {
            None
        };
        let x = self.norm_states(s);
        let p = &self.params;
        let r = match &self.nets {
            Nets::Rnd { target, predictor } => row_sq_dist(&predictor.forward(p, &x)?, &target.forward(p, &x)?),
            Nets::Nsm { net } => {
                let pred = &x + &net.forward(p, &hcat(&x, a.expect("checked")))?;
                row_sq_dist(&pred, s_next.as_ref().expect("checked"))
            }
            Nets::Icm { encoder, forward, .. } => {
                let phi = encoder.forward(p, &x)?;
                let phi_next = encoder.forward(p, s_next.as_ref().expect("checked"))?;
                let phi_hat = forward.forward(p, &hcat(&phi, a.expect("checked")))?;
                row_sq_dist(&phi_hat, &phi_next)
            }
            Nets::Dd { members } => {
                let input = hcat(&x, a.expect("checked"));
                let preds = members
                    .iter()
                    .map(|m| m.forward(p, &input))
                    .collect::<Result<Vec<_>>>()?;
                let k = preds.len() as f64;
                // Shifted mean: exactly preds[0] when all members agree.
                let mut shift = Array2::<f64>::zeros(preds[0].dim());
                for q in &preds[1..] {
                    shift += &(q - &preds[0]);
                }
                let mean = &preds[0] + &(shift / k);
                let mut var = Array2::<f64>::zeros(mean.dim());
                for q in &preds {
                    let d = q - &mean;
                    var += &(&d * &d);
                }
                var /= k;
                // The state itself is common to every member's delta prediction, so the
                // spread of the deltas equals the spread of the predicted next states.
                var.sum_axis(Axis(1)).to_vec()
            }
        };
        for v in &r {
            crate::error::ensure_finite(*v, "intrinsic reward")?;
        }
        Ok(r)
    }

    /// Fresh bootstrap masks for DD: `masks[k][i]` says whether member `k`
    /// trains on row `i`. Drawn from a stream keyed by the training step.
    pub fn bootstrap_masks(&self, rows: usize) -> Vec<Vec<bool>> {
        let mut rng = stream(self.seed, "dd-bootstrap", self.params.step());
        (0..self.config.ensemble_size)
            .map(|_| (0..rows).map(|_| rng.random::<f64>() < self.config.bootstrap_prob).collect())
            .collect()
    }

    fn loss_on_tape(&self, tape: &mut Tape, batch: &SarsBatch, masks: Option<&[Vec<bool>]>) -> Result<Var> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::precondition("curiosity training batch is empty"));
        }
        self.check_width(&batch.states, self.obs_dim, n, Label::State)?;
        if self.config.kind != CuriosityKind::Rnd {
            self.check_width(&batch.actions, self.act_dim, n, Label::Action)?;
            self.check_width(&batch.next_states, self.obs_dim, n, Label::NextState)?;
        }
        let p = &self.params;
        let x = self.norm_states(&batch.states);
        let inv_n = 1.0 / n as f64;
        match &self.nets {
            Nets::Rnd { target, predictor } => {
                let t = tape.constant(target.forward(p, &x)?);
                let xv = tape.constant(x);
                let pred = predictor.forward_tape(tape, p, xv)?;
                let d = tape.sub(pred, t)?;
                let sq = tape.square(d);
                let s = tape.sum_all(sq);
                Ok(tape.scale(s, inv_n))
            }
            Nets::Nsm { net } => {
                let target = tape.constant(self.norm_states(&batch.next_states) - &x);
                let input = tape.constant(hcat(&x, &batch.actions));
                let delta = net.forward_tape(tape, p, input)?;
                let d = tape.sub(delta, target)?;
                let sq = tape.square(d);
                let s = tape.sum_all(sq);
                Ok(tape.scale(s, inv_n))
            }
            Nets::Icm { encoder, inverse, forward } => {
                let xs = tape.constant(x);
                let xn = tape.constant(self.norm_states(&batch.next_states));
                let phi = encoder.forward_tape(tape, p, xs)?;
                let phi_next = encoder.forward_tape(tape, p, xn)?;
                let inv_in = tape.concat_cols(&[phi, phi_next])?;
                let a_hat = inverse.forward_tape(tape, p, inv_in)?;
                let a = tape.constant(batch.actions.clone());
                let da = tape.sub(a_hat, a)?;
                let sa = tape.square(da);
                let inv_loss = tape.sum_all(sa);
                // The forward head does not shape the encoder.
                let phi_c = tape.detach(phi);
                let phi_next_c = tape.detach(phi_next);
                let a_c = tape.constant(batch.actions.clone());
                let fwd_in = tape.concat_cols(&[phi_c, a_c])?;
                let phi_hat = forward.forward_tape(tape, p, fwd_in)?;
                let df = tape.sub(phi_hat, phi_next_c)?;
                let sf = tape.square(df);
                let fwd_loss = tape.sum_all(sf);
                let li = tape.scale(inv_loss, 0.8 * inv_n);
                let lf = tape.scale(fwd_loss, 0.2 * inv_n);
                tape.add(li, lf)
            }
            Nets::Dd { members } => {
                let owned;
                let masks = match masks {
                    Some(m) => m,
                    None => {
                        owned = self.bootstrap_masks(n);
                        &owned
                    }
                };
                if masks.len() != members.len() || masks.iter().any(|m| m.len() != n) {
                    return Err(Error::contract("DD masks must be ensemble_size x batch"));
                }
                let target = tape.constant(self.norm_states(&batch.next_states) - &x);
                let input = tape.constant(hcat(&x, &batch.actions));
                let mut total: Option<Var> = None;
                for (m, mask) in members.iter().zip(masks) {
                    let count = mask.iter().filter(|&&b| b).count();
                    let col = Array2::from_shape_fn((n, 1), |(i, _)| if mask[i] { 1.0 } else { 0.0 });
                    let mv = tape.constant(col);
                    let delta = m.forward_tape(tape, p, input)?;
                    let d = tape.sub(delta, target)?;
                    let sq = tape.square(d);
                    let rows = tape.sum_rows(sq);
                    let masked = tape.mul(rows, mv)?;
                    let s = tape.sum_all(masked);
                    let lk = tape.scale(s, 1.0 / count.max(1) as f64);
                    total = Some(match total {
                        Some(t) => tape.add(t, lk)?,
                        None => lk,
                    });
                }
                Ok(total.expect("ensemble has members"))
            }
        }
    }

    /// Loss on `batch` and its parameter gradients, without updating anything.
    /// `masks` applies to DD only; other kinds ignore it.
    pub fn loss_and_grads(&self, batch: &SarsBatch, masks: Option<&[Vec<bool>]>) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let loss = self.loss_on_tape(&mut tape, batch, masks)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} training loss at step {} ({value})",
                self.config.kind,
                self.params.step()
            )));
        }
        let grads = tape.backward(loss)?.for_store(&self.params);
        Ok((value, grads))
    }

    /// One Adam step on the model's own regression loss; returns the pre-step loss.
    pub fn train(&mut self, batch: &SarsBatch) -> Result<f64> {
        self.train_inner(batch, None)
    }

    /// As [`train`](Self::train) with explicit DD bootstrap masks.
    pub fn train_with_masks(&mut self, batch: &SarsBatch, masks: &[Vec<bool>]) -> Result<f64> {
        self.train_inner(batch, Some(masks))
    }

    fn train_inner(&mut self, batch: &SarsBatch, masks: Option<&[Vec<bool>]>) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(batch, masks)?;
        self.params.adam_step(&grads, &AdamConfig::with_lr(self.config.lr))?;
        if self.config.normalize_rewards {
            let r = self.raw_rewards(&batch.states, Some(&batch.actions), Some(&batch.next_states))?;
            self.normalizer.update(&r);
        }
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "config": self.config,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "scale": self.scale.to_vec(),
            "seed": self.seed,
            "normalizer": self.normalizer,
        });
        Checkpoint::new(CHECKPOINT_KIND, meta, self.params.clone())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::config(format!("checkpoint kind '{}' is not a curiosity model", ckpt.kind)));
        }
        let field = |name: &str| {
            ckpt.meta.get(name).cloned().ok_or_else(|| Error::config(format!("checkpoint meta lacks '{name}'")))
        };
        let config: CuriosityConfig = serde_json::from_value(field("config")?)?;
        let obs_dim: usize = serde_json::from_value(field("obs_dim")?)?;
        let act_dim: usize = serde_json::from_value(field("act_dim")?)?;
        let scale: Vec<f64> = serde_json::from_value(field("scale")?)?;
        let seed: u64 = serde_json::from_value(field("seed")?)?;
        let normalizer: RewardNormalizer = serde_json::from_value(field("normalizer")?)?;
        let mut mlps = Vec::new();
        for (prefix, spec) in layer_specs(&config, obs_dim, act_dim) {
            mlps.push(Mlp::attach(spec, &ckpt.store, &prefix)?);
        }
        let nets = assemble(config.kind, mlps);
        Ok(Self {
            config,
            obs_dim,
            act_dim,
            scale: Array1::from(scale),
            seed,
            params: ckpt.store.clone(),
            nets,
            normalizer,
        })
    }
}
