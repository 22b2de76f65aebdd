use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::{BlockId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub output: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        Self { input, output, hidden: hidden.to_vec(), activation: Activation::Tanh }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::config(format!("all MLP widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(self.output);
        w
    }
}

/// A multilayer perceptron whose weights live in a [`ParamStore`] under
/// `{prefix}.w{i}` / `{prefix}.b{i}`.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(BlockId, BlockId)>,
}

impl Mlp {
    /// Registers freshly initialized layers: weights uniform in
    /// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new(spec: MlpSpec, store: &mut ParamStore, prefix: &str, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
            let wid = store.add(format!("{prefix}.w{i}"), w)?;
            let bid = store.add(format!("{prefix}.b{i}"), Array2::zeros((1, fan_out)))?;
            layers.push((wid, bid));
        }
        Ok(Self { spec, layers })
    }

    /// Re-binds to layers already present in `store` (e.g. after loading a checkpoint).
    pub fn attach(spec: MlpSpec, store: &ParamStore, prefix: &str) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, pair) in widths.windows(2).enumerate() {
            let lookup = |name: String, shape: (usize, usize)| -> Result<BlockId> {
                let id = store
                    .id(&name)
                    .ok_or_else(|| Error::config(format!("missing parameter block '{name}'")))?;
                if store.value(id).dim() != shape {
                    return Err(Error::config(format!("block '{name}' has wrong shape")));
                }
                Ok(id)
            };
            let w = lookup(format!("{prefix}.w{i}"), (pair[0], pair[1]))?;
            let b = lookup(format!("{prefix}.b{i}"), (1, pair[1]))?;
            layers.push((w, b));
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[(BlockId, BlockId)] {
        &self.layers
    }

    /// Sets the last layer's weights and bias to zero.
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        if let Some(&(w, b)) = self.layers.last() {
            store.map_inplace(w, |_| 0.0);
            store.map_inplace(b, |_| 0.0);
        }
    }

    /// Batched forward pass without gradient recording; rows are samples.
    pub fn forward(&self, store: &ParamStore, input: &Array2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.spec.input {
            return Err(Error::config(format!(
                "MLP input width {} but got {} columns",
                self.spec.input,
                input.ncols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h: Option<Array2<f64>> = None;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let x = h.as_ref().unwrap_or(input);
            let mut z = x.dot(store.value(w));
            z += store.value(b);
            if i != last {
                let act = self.spec.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = Some(z);
        }
        Ok(h.expect("at least one layer"))
    }

    /// Forward pass for a single input vector.
    pub fn forward_one(&self, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::config(e.to_string()))?;
        Ok(self.forward(store, &x)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass recorded on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        if tape.value(input).ncols() != self.spec.input {
            return Err(Error::config(format!(
                "MLP input width {} but got {} columns",
                self.spec.input,
                tape.value(input).ncols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = input;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let z = tape.matmul(h, wv)?;
            let z = tape.add(z, bv)?;
            h = if i == last {
                z
            } else {
                match self.spec.activation {
                    Activation::Tanh => tape.tanh(z),
                    Activation::Relu => tape.relu(z),
                    Activation::Identity => z,
                }
            };
        }
        Ok(h)
    }
}

/// Stacks equal-length row vectors into a matrix.
pub fn rows_to_matrix(rows: &[&[f64]], width: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::config(format!("row of length {} where {width} expected", r.len())));
        }
        data.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), width), data).map_err(|e| Error::config(e.to_string()))
}

/// Per-column affine map `x * scale + shift`.
pub fn affine_cols(x: &Array2<f64>, scale: &Array1<f64>, shift: &Array1<f64>) -> Array2<f64> {
    let mut out = x * scale;
    out += shift;
    out
}
