//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records primitive operations as they execute; `backward` walks
//! the record once in reverse. Trainable tensors live in a [`ParamStore`] and
//! enter a graph through [`Graph::param`]. The engine is generic over [`Real`]
//! so networks train in `f32` and are gradient-checked in `f64`.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod real;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_TAG,
};
pub use gradcheck::{
    analytic_gradients, compare_gradients, gradient_check, numeric_gradients, GradCheckOptions,
    GradCheckReport, ParamCheck,
};
pub use graph::{Graph, Var};
pub(crate) use graph::sigmoid;
pub use optim::{Adam, PlateauDecay};
pub use params::{ParamId, ParamStore};
pub use real::{Precision, Real};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("data of length {len} does not fill shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("{0} needs at least one input")]
    Empty(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
