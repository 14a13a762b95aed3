//! Inference engine for the reduced residual CNN with optional IMU fusion.
//!
//! The network is described by a [`ModelGraph`] (data, not code), its
//! parameters live in a [`WeightStore`], and a forward pass runs inside an
//! [`InferenceContext`] whose activations are laid out in one static arena
//! computed by [`plan_memory`]. A 16-bit fixed-point path ([`Q15Model`])
//! mirrors what an MCU deployment would execute.

mod engine;
mod graph;
pub mod kernels;
mod macc;
mod plan;
pub mod q15;
mod records;
mod tensor;
mod weights;

use std::io;

use crate::codec::FormatError;

pub use engine::{infer, CompiledModel, InferenceContext, InferenceResult, Q15Context, Q15Model, TraceEntry};
pub use graph::{reference_graph, reference_graph_with_imu, ConvSpec, InputSource, Layer, ModelGraph, Op, ParamSpec};
pub use kernels::BnParams;
pub use macc::count_macc;
pub use plan::{plan_memory, ArenaPlan, PlannedTensor};
pub use q15::QTensor;
pub use records::{GoldenCase, GoldenSet};
pub use tensor::{DType, Tensor};
pub use weights::{TensorData, WeightStore, WeightTensor};

/// Largest weight file that fits the 177 kB flash budget.
pub const FLASH_BUDGET_BYTES: usize = 177 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weights do not match graph: {0}")]
    WeightMismatch(String),
    #[error("batch norm {layer}: running variance {value} at channel {channel} is not positive")]
    NonPositiveVariance { layer: String, channel: usize, value: f32 },
    #[error("invalid quantisation scale: {0}")]
    ScaleOverflow(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph line {line}: {message}")]
    GraphSyntax { line: usize, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
