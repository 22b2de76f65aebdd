use ndarray::{concatenate, Array1, Array2, Axis};
use serde_json::json;

use super::projection::Support;
use crate::error::{Error, Result};
use crate::funcapprox::{softmax_rows, Checkpoint, Mlp, MlpSpec, ParamStore, Tape, Var};
use crate::rng::stream;

const CHECKPOINT_KIND: &str = "critic";
/// Initial probability on the lowest atom. Returns in this framework are
/// small next to the support's upper end, so starting pessimistic keeps the
/// untrained critic from dominating the advantage with a large shared bias.
const INIT_LOW_MASS: f64 = 0.99;

/// Distributional Q: an MLP from `(s / scale, a)` to logits over fixed
/// return atoms, with a lagged target copy.
#[derive(Clone, Debug)]
pub struct CategoricalCritic {
    obs_dim: usize,
    act_dim: usize,
    scale: Array1<f64>,
    support: Support,
    atoms: Array1<f64>,
    mlp: Mlp,
    params: ParamStore,
    target: ParamStore,
}

impl CategoricalCritic {
    pub fn new(obs_dim: usize, act_dim: usize, scale: Vec<f64>, hidden: &[usize], support: Support, seed: u64) -> Result<Self> {
        if scale.len() != obs_dim || scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("critic state scale must hold one positive entry per observation dimension"));
        }
        let mut rng = stream(seed, "critic-init", 0);
        let mut params = ParamStore::new();
        let mlp = Mlp::new(MlpSpec::new(obs_dim + act_dim, hidden, support.n_atoms), &mut params, "q", &mut rng)?;
        let (_, out_bias) = *mlp.layers().last().expect("output layer");
        let low = (INIT_LOW_MASS * (support.n_atoms - 1) as f64 / (1.0 - INIT_LOW_MASS)).ln();
        params.map_inplace(out_bias, |_| 0.0);
        let mut bias = params.value(out_bias).clone();
        bias[[0, 0]] = low;
        params.set_value(out_bias, bias)?;
        let target = params.clone();
        let atoms = Array1::from(support.atoms());
        Ok(Self { obs_dim, act_dim, scale: Array1::from(scale), support, atoms, mlp, params, target })
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn atoms(&self) -> &Array1<f64> {
        &self.atoms
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn target_params(&self) -> &ParamStore {
        &self.target
    }

    /// Hard copy of the online parameters into the target.
    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_values_from(&self.params)
    }

    fn input(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>> {
        if s.ncols() != self.obs_dim || a.ncols() != self.act_dim || s.nrows() != a.nrows() {
            return Err(Error::config(format!(
                "critic input shapes {:?} / {:?} do not match ({}, {})",
                s.dim(),
                a.dim(),
                self.obs_dim,
                self.act_dim
            )));
        }
        let xs = s / &self.scale;
        Ok(concatenate(Axis(1), &[xs.view(), a.view()]).expect("rows checked"))
    }

    pub fn logits(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>> {
        self.mlp.forward(&self.params, &self.input(s, a)?)
    }

    pub fn probs(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(s, a)?))
    }

    pub fn target_probs(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.mlp.forward(&self.target, &self.input(s, a)?)?))
    }

    /// Expected return `sum_j p_j z_j` per row, from the online parameters.
    pub fn q_values(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.probs(s, a)?.dot(&self.atoms).to_vec())
    }

    /// Online logits recorded on `tape`.
    pub fn logits_tape(&self, tape: &mut Tape, s: &Array2<f64>, a: &Array2<f64>) -> Result<Var> {
        let x = tape.constant(self.input(s, a)?);
        self.mlp.forward_tape(tape, &self.params, x)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "hidden": self.mlp.spec().hidden,
            "support": self.support,
        });
        Checkpoint::new(CHECKPOINT_KIND, meta, self.params.clone()).with_aux("scale", self.scale.to_vec())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::config(format!("checkpoint kind '{}' is not a critic", ckpt.kind)));
        }
        let field = |name: &str| {
            ckpt.meta.get(name).cloned().ok_or_else(|| Error::config(format!("checkpoint meta lacks '{name}'")))
        };
        let obs_dim: usize = serde_json::from_value(field("obs_dim")?)?;
        let act_dim: usize = serde_json::from_value(field("act_dim")?)?;
        let hidden: Vec<usize> = serde_json::from_value(field("hidden")?)?;
        let support: Support = serde_json::from_value(field("support")?)?;
        let scale = ckpt.aux("scale").ok_or_else(|| Error::config("critic checkpoint lacks 'scale'"))?.to_vec();
        let mlp = Mlp::attach(MlpSpec::new(obs_dim + act_dim, &hidden, support.n_atoms), &ckpt.store, "q")?;
        let params = ckpt.store.clone();
        let target = params.clone();
        let atoms = Array1::from(support.atoms());
        Ok(Self { obs_dim, act_dim, scale: Array1::from(scale), support, atoms, mlp, params, target })
    }
}
