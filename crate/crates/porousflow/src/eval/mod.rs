//! Model evaluation: physical-unit predictions, region-wise error tables,
//! per-coefficient error grouping, and inference timing.
//!
//! Everything here reports in physical units. Predictions come out of the
//! network Z-scored, so [`predict_field`] undoes the normalization before
//! any error is computed, and [`mae_by_region`] refuses fields that are
//! still normalized.

mod mae;
mod timing;

pub use mae::{
    group_errors_by_coefficient, mae_by_region, FieldMae, RegionCounts, RegionMaeTable,
    RegionMasks,
};
pub use timing::{benchmark_inference, CaseTiming, TimingReport, MIN_REPETITIONS};

use ndarray::s;
use thiserror::Error;

use crate::dataset::{
    normalize_case, DatasetError, FlowField, NormalizationStats, PointCloudCase, Units,
};
use crate::models::{
    normalize_branch, pigano_forward, pipn_forward, select_branch_points, ModelConfig,
    ModelError, ModelParameters,
};

/// Errors produced while evaluating a model or assembling reports.
#[derive(Debug, Error)]
pub enum EvalError {
    /// The caller handed us something unusable.
    #[error("invalid evaluation input: {reason}")]
    Input { reason: String },
    /// A serialized report did not parse back.
    #[error("malformed report: {reason}")]
    Parse { reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn input_err<T>(reason: impl Into<String>) -> Result<T, EvalError> {
    Err(EvalError::Input { reason: reason.into() })
}

fn parse_err<T>(reason: impl Into<String>) -> Result<T, EvalError> {
    Err(EvalError::Parse { reason: reason.into() })
}

/// Runs the model over one case and returns the prediction in physical
/// units.
///
/// The case is normalized with `stats`, evaluated in a single forward pass
/// (no derivatives), and the outputs are mapped back through the same
/// statistics. For the conditioned model the boundary records are drawn
/// with `branch_seed`, so the same seed reproduces the same prediction
/// bit for bit.
pub fn predict_field(
    params: &ModelParameters,
    case: &PointCloudCase,
    stats: &NormalizationStats,
    branch_seed: u64,
) -> Result<FlowField, EvalError> {
    case.validate()?;
    let dim = params.config.dim();
    if case.dim != dim {
        return input_err(format!(
            "case is {}-dimensional but the model expects {dim} coordinates",
            case.dim
        ));
    }
    if stats.dim() != dim {
        return input_err(format!(
            "normalization statistics cover {} coordinates, expected {dim}",
            stats.dim()
        ));
    }
    let normalized = normalize_case(case, stats)?;
    let features = normalized.input_features();
    let outputs = match &params.config {
        ModelConfig::Pipn(_) => pipn_forward(params, &features)?,
        ModelConfig::Pigano(config) => {
            let raw = select_branch_points(case, config.branch_points, branch_seed)?;
            let branch = normalize_branch(&raw, stats)?;
            let coords = normalized.coords_matrix();
            pigano_forward(params, &coords, &features, &branch)?
        }
    };
    let normalized_field = FlowField {
        units: Units::Normalized,
        velocity: outputs.slice(s![.., ..dim]).to_owned(),
        pressure: outputs.column(dim).to_owned(),
    };
    Ok(denormalize(&normalized_field, stats)?)
}

fn denormalize(field: &FlowField, stats: &NormalizationStats) -> Result<FlowField, DatasetError> {
    crate::dataset::denormalize_field(field, stats)
}
