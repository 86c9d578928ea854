//! Dense reverse-mode automatic differentiation, the Adam optimizer and the
//! parameter checkpoint container.

mod adam;
pub mod checkpoint;
mod params;
pub mod special;
mod tape;
mod tensor;

pub use adam::{clip_global_norm, Adam, AdamConfig, AdamState};
pub use params::{Bound, LoadError, ParamId, ParamStore};
pub use tape::{Activation, CustomBackward, Gradients, Tape, Var, DEFAULT_LEAKY_SLOPE};
pub use tensor::Tensor;

pub(crate) use tape::normalized_with_scaling;
pub use tape::sigmoid;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("expected rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("row_softmax: row {row} is fully masked")]
    DegenerateRow { row: usize },
    #[error("normalize_adjacency: node {node} has non-positive degree")]
    DegenerateDegree { node: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
}
