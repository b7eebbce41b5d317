//! Automatic differentiation: scalar second-order duals and a tensor tape.
//!
//! Two cooperating mechanisms live here. [`Dual2`] propagates a value together
//! with a first and second directional derivative through scalar arithmetic,
//! which is what the physics residuals need spatially. [`Tape`] records
//! matrix-level operations (dense layers, pooling, reductions) over whole
//! point clouds and plays them backwards to produce parameter gradients.
//! Networks carry their dual channels *through* the tape, so one recording
//! yields spatial derivatives and remains differentiable in the parameters.

mod dual;
mod net;
mod tape;

pub use dual::{directional_derivatives, fd_check, Dual2, DirectionalDerivatives};
pub use net::{
    laplacian_and_jacobian, Activation, DenseNet, DualRows, LayerSpec, NetDerivatives,
};
pub use tape::{GradientVector, NodeId, ParamId, Real, Tape, UnaryFn};

use thiserror::Error;

/// Errors raised by the differentiation engine.
#[derive(Debug, Error)]
pub enum AdError {
    /// Input slices disagree on dimension.
    #[error("dimension mismatch: {context} expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// Directional derivatives require a unit-norm direction.
    #[error("direction vector has norm {norm:.6e}, expected unit norm")]
    NotUnitDirection { norm: f64 },
    /// A non-finite value appeared during propagation (division by zero,
    /// overflow, or a domain violation upstream).
    #[error("non-finite value produced by {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },
    /// Gradients can only be requested from scalar (1x1) tape nodes.
    #[error("gradient requested from a {rows}x{cols} node; reduce to a scalar first")]
    NotScalar { rows: usize, cols: usize },
    /// A primitive outside the supported set was requested by name.
    #[error("unsupported primitive \"{0}\"; supported: tanh, silu")]
    UnsupportedPrimitive(String),
}
