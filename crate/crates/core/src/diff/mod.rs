//! Reverse-mode automatic differentiation over dense `f32` arrays, plus the
//! small network builders and the Adam optimizer every trainable component
//! uses.

mod adam;
pub mod checkpoint;
mod gradcheck;
pub mod kernels;
mod nn;
mod real;
mod sparse;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{finite_diff_check, finite_diff_check_sampled, Objective};
pub use nn::{glorot, Activation, ConvLayerSpec, ConvNet, DenseNet, DenseNetSpec, Module};
pub use real::Real;
pub use sparse::SparseRows;
pub use tape::{Tape, Var};
pub use tensor::DiffTensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value at element {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("parameter {index} has no gradient")]
    MissingGrad { index: usize },
    #[error("{0}")]
    Config(String),
}

/// Runs a tape over `module`'s parameters and adds the resulting gradients
/// into them. Returns the loss value.
pub fn backprop_into<M: Module>(
    module: &mut M,
    loss_fn: impl FnOnce(&M, &mut Tape, &[Var]) -> Result<Var, DiffError>,
) -> Result<f32, DiffError> {
    let mut tape = Tape::new();
    let vars = module.bind(&mut tape);
    let loss = loss_fn(module, &mut tape, &vars)?;
    tape.backward(loss)?;
    let value = tape.scalar(loss);
    tape.accumulate_into(&vars, module.params_mut())?;
    Ok(value)
}
