use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;

use crate::error::{Error, Result};

static NEXT_STORE_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to one parameter block inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockId(pub(crate) usize);

impl BlockId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct ParamBlock {
    name: String,
    value: Array2<f64>,
    m: Array2<f64>,
    v: Array2<f64>,
}

/// Named, shape-tagged parameter blocks with their Adam moments.
///
/// Shapes are fixed once a block is added. Every store carries a process
/// unique id so a [`Tape`](super::Tape) can route gradients back to the
/// store that owns the parameters; clones get a fresh id.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    blocks: Vec<ParamBlock>,
    by_name: HashMap<String, usize>,
    step: u64,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            uid: fresh_uid(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    name: b.name.clone(),
                    value: b.value.clone(),
                    m: b.m.clone(),
                    v: b.v.clone(),
                })
                .collect(),
            by_name: self.by_name.clone(),
            step: self.step,
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { uid: fresh_uid(), blocks: Vec::new(), by_name: HashMap::new(), step: 0 }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    /// Registers a new block. Names must be unique and values finite.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> Result<BlockId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter block '{name}'")));
        }
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("initial value of parameter block '{name}'")));
        }
        let id = self.blocks.len();
        let dim = value.raw_dim();
        self.blocks.push(ParamBlock {
            name: name.clone(),
            value,
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
        });
        self.by_name.insert(name, id);
        Ok(BlockId(id))
    }

    pub fn id(&self, name: &str) -> Option<BlockId> {
        self.by_name.get(name).copied().map(BlockId)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = BlockId> {
        (0..self.blocks.len()).map(BlockId)
    }

    pub fn name(&self, id: BlockId) -> &str {
        &self.blocks[id.0].name
    }

    pub fn value(&self, id: BlockId) -> &Array2<f64> {
        &self.blocks[id.0].value
    }

    /// Replaces a block's values. The shape must match and values must be finite.
    pub fn set_value(&mut self, id: BlockId, value: Array2<f64>) -> Result<()> {
        let block = &mut self.blocks[id.0];
        if block.value.dim() != value.dim() {
            return Err(Error::config(format!(
                "shape mismatch for '{}': have {:?}, got {:?}",
                block.name,
                block.value.dim(),
                value.dim()
            )));
        }
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("parameter block '{}'", block.name)));
        }
        block.value = value;
        Ok(())
    }

    /// Applies `f` to every entry of a block in place (used for box projections).
    pub fn map_inplace(&mut self, id: BlockId, f: impl Fn(f64) -> f64) {
        self.blocks[id.0].value.mapv_inplace(f);
    }

    /// Number of optimizer steps applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    /// Copies values (not moments) from a store with the identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::config("parameter stores have different block counts"));
        }
        for (dst, src) in self.blocks.iter_mut().zip(&other.blocks) {
            if dst.name != src.name || dst.value.dim() != src.value.dim() {
                return Err(Error::config(format!(
                    "parameter layout mismatch at '{}' vs '{}'",
                    dst.name, src.name
                )));
            }
            dst.value.assign(&src.value);
        }
        Ok(())
    }

    /// True if every block value is bit-identical to `other`'s.
    pub fn values_bit_eq(&self, other: &ParamStore) -> bool {
        self.blocks.len() == other.blocks.len()
            && self.blocks.iter().zip(&other.blocks).all(|(a, b)| {
                a.name == b.name
                    && a.value.dim() == b.value.dim()
                    && a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// One bias-corrected Adam step. Gradients are checked for finiteness
    /// before anything is modified, so a failed step leaves the store intact.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        if grads.store_uid != self.uid || grads.blocks.len() != self.blocks.len() {
            return Err(Error::contract("gradients were computed for a different parameter store"));
        }
        if !(cfg.lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", cfg.lr)));
        }
        for (block, g) in self.blocks.iter().zip(&grads.blocks) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter block '{}'", block.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (block, g) in self.blocks.iter_mut().zip(&grads.blocks) {
            let ParamBlock { value, m, v, .. } = block;
            ndarray::Zip::from(value).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            });
        }
        Ok(())
    }
}

/// Per-block gradients for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) store_uid: u64,
    pub(crate) blocks: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            store_uid: store.uid,
            blocks: store.blocks.iter().map(|b| Array2::zeros(b.value.raw_dim())).collect(),
        }
    }

    pub fn get(&self, id: BlockId) -> &Array2<f64> {
        &self.blocks[id.0]
    }

    pub fn get_mut(&mut self, id: BlockId) -> &mut Array2<f64> {
        &mut self.blocks[id.0]
    }

    /// Adds `other` into `self`; both must belong to the same store.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.store_uid != other.store_uid {
            return Err(Error::contract("cannot add gradients of different stores"));
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.iter()).fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.l2_norm();
        if n > max_norm && n.is_finite() {
            let s = max_norm / n;
            for b in &mut self.blocks {
                b.mapv_inplace(|x| x * s);
            }
        }
    }
}
