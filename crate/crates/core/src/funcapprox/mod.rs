//! Reverse-mode autodiff, multilayer perceptrons and Adam.
//!
//! Two evaluation paths share the same parameters: [`Mlp::forward`] for
//! plain batched inference (planning, target networks, evaluation) and
//! [`Mlp::forward_tape`] when gradients are needed.

mod checkpoint;
mod mlp;
mod params;
mod tape;

pub use checkpoint::Checkpoint;
pub use mlp::{affine_cols, rows_to_matrix, Activation, Mlp, MlpSpec};
pub use params::{AdamConfig, BlockId, Gradients, ParamStore};
pub use tape::{log_softmax_rows, softmax_rows, Tape, TapeGrads, Var};

/// Standalone form of [`Mlp::forward_one`].
pub fn mlp_forward(params: &ParamStore, mlp: &Mlp, input: &[f64]) -> crate::Result<Vec<f64>> {
    mlp.forward_one(params, input)
}

/// Standalone form of [`ParamStore::adam_step`].
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> crate::Result<()> {
    params.adam_step(grads, &AdamConfig { lr, beta1, beta2, eps })
}
