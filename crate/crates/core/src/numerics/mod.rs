//! Minimal reverse-mode differentiable tensor engine.
//!
//! Provides exactly what the sentence encoders need: a handful of matrix
//! operations recorded on a [`Tape`], Adam, Xavier initialization and the
//! SSRL1 checkpoint container. Every op output is checked for NaN/Inf.

mod checkpoint;
mod init;
mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError, TensorEntry, MAGIC,
};
pub use init::{uniform, xavier_uniform};
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamGrads, ParamId, ParamSet};
pub use real::{DType, Real};
pub use tape::{Axis, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: got {got:?}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        got: Vec<usize>,
        expected: String,
    },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("tensor is not recorded on this tape")]
    DetachedTensor,
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("parameter `{0}` already exists")]
    DuplicateParam(String),
    #[error("index {index} out of range in {op} (size {len})")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
}
