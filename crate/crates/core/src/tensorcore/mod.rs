//! Dense tensors, an expression graph with reverse-mode differentiation, and
//! a central-difference gradient oracle.

pub mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use graph::{Bindings, Evaluation, ExprGraph, NodeId, Op};
pub(crate) use graph::sigmoid;
pub use tensor::{Precision, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at element {index}")]
    NonFiniteData { index: usize },
    #[error("cannot reshape {from:?} to {to:?}")]
    ReshapeMismatch { from: Vec<usize>, to: Vec<usize> },
    #[error("shape mismatch at node `{node}`: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("node `{node}` produced a non-finite value")]
    NonFinite { node: String },
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("input `{0}` declared twice")]
    DuplicateInput(String),
    #[error("input `{name}` expects shape {expected:?}, bound {actual:?}")]
    InputShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("node `{node}` has shape {shape:?}; a scalar output is required")]
    NotScalar { node: String, shape: Vec<usize> },
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}

/// Central-difference estimate of the gradient of `f` at `point`:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff<F, E>(mut f: F, point: &Tensor, step: f64) -> Result<Tensor, E>
where
    F: FnMut(&Tensor) -> Result<f64, E>,
    E: From<TensorError>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(TensorError::BadStep(step).into());
    }
    let mut probe = point.clone();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(Tensor::new(point.shape().to_vec(), grad)?)
}
