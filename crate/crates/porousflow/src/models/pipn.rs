//! The PointNet-style model: shared local encoder, max-pooled global
//! feature, per-point decoder.
//!
//! One recording serves every caller: the value channel feeds evaluation and
//! the parameter gradient, while optional derivative channels carry first
//! and second derivatives with respect to each point's own coordinates. The
//! signed distance and one-hot annotation columns are frozen per-point
//! features, so derivatives flow through the coordinate columns only.

use ndarray::{s, Array2};

use super::{
    check_dropout_masks, ensure_finite, first_dropout_site, BoundParams, ModelConfig, ModelError,
    ModelParameters,
};
use crate::ad::{DualRows, NodeId, Tape};

/// Handles into a recorded forward pass.
#[derive(Clone, Debug)]
pub struct PipnRecording {
    /// Per-point outputs (velocity components then pressure), with
    /// derivative channels when requested.
    pub output: DualRows,
    /// The 1-row max-pooled global feature.
    pub global_feature: NodeId,
}

/// Records the full model on a tape: local encoder, re-appended (sdf,
/// one-hot) columns, global encoder, max-pool broadcast, and decoder.
/// `features` rows are `coords | sdf | one-hot`; with `derivatives` the
/// output carries first and second derivatives per coordinate direction.
/// Dropout masks (training only) apply to the last two decoder hidden
/// layers; pass `None` for evaluation.
pub fn record_pipn(
    tape: &mut Tape<f64>,
    bound: &BoundParams<'_>,
    features: &Array2<f64>,
    derivatives: bool,
    dropout_masks: Option<&[Array2<f64>]>,
) -> Result<PipnRecording, ModelError> {
    let params = bound.params();
    let config = match &params.config {
        ModelConfig::Pipn(c) => c,
        ModelConfig::Pigano(_) => {
            return Err(ModelError::WrongArchitecture { expected: "pipn", got: "pigano" })
        }
    };
    let (n, width) = features.dim();
    if n < 2 {
        return Err(ModelError::TooFewPoints { got: n });
    }
    if width != config.feature_width() {
        return Err(ModelError::FeatureShape {
            context: "point features",
            expected: config.feature_width(),
            got: width,
        });
    }
    let masks = check_dropout_masks(&params.config, n, dropout_masks)?;
    let dirs = if derivatives { config.dim } else { 0 };

    let annotations = features.slice(s![.., config.dim..]).to_owned();
    let mut x = tape.seed_coordinate_duals(features.clone(), dirs);
    let annot = tape.dual_constant(annotations, dirs);
    let mut cursor = bound.cursor();
    for _ in &config.local_widths {
        let (w, b) = cursor.next_layer();
        x = tape.dual_linear(&x, w, b);
        x = tape.dual_activation(&x, config.activation);
    }
    let local = tape.dual_concat_cols(&x, &annot);

    let mut g = local.clone();
    for _ in &config.global_widths {
        let (w, b) = cursor.next_layer();
        g = tape.dual_linear(&g, w, b);
        g = tape.dual_activation(&g, config.activation);
    }
    let (pooled, global_feature) = tape.dual_max_pool_broadcast(&g, n);

    let mut y = tape.dual_concat_cols(&local, &pooled);
    let first_site = first_dropout_site(config.decoder_widths.len());
    let mut next_mask = 0;
    for i in 0..config.decoder_widths.len() {
        let (w, b) = cursor.next_layer();
        y = tape.dual_linear(&y, w, b);
        y = tape.dual_activation(&y, config.activation);
        if let Some(masks) = masks {
            if i >= first_site {
                let mask = tape.input(masks[next_mask].clone());
                next_mask += 1;
                y = tape.dual_dropout(&y, mask);
            }
        }
    }
    let (w, b) = cursor.next_layer();
    let output = tape.dual_linear(&y, w, b);
    tape.mark_output(output.value);
    Ok(PipnRecording { output, global_feature })
}

/// Evaluates the model on one cloud, returning per-point (velocity,
/// pressure) rows in normalized units.
pub fn pipn_forward(
    params: &ModelParameters,
    features: &Array2<f64>,
) -> Result<Array2<f64>, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let recording = record_pipn(&mut tape, &bound, features, false, None)?;
    let out = tape.value(recording.output.value).clone();
    ensure_finite(&out, "model outputs")?;
    Ok(out)
}

/// Per-point outputs with first and second derivatives along each
/// coordinate direction, read off one recorded pass.
#[derive(Clone, Debug)]
pub struct CloudDerivatives {
    /// n-by-(dim+1) outputs.
    pub values: Array2<f64>,
    /// Per direction k: n-by-(dim+1) first derivatives d out / d x_k.
    pub first: Vec<Array2<f64>>,
    /// Per direction k: n-by-(dim+1) pure second derivatives.
    pub second: Vec<Array2<f64>>,
}

impl CloudDerivatives {
    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn outputs(&self) -> usize {
        self.values.ncols()
    }

    /// Jacobian at one point: `[[i, k]] = d out_i / d x_k`.
    pub fn jacobian(&self, point: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.outputs(), self.dim()), |(i, k)| {
            self.first[k][[point, i]]
        })
    }

    /// Pure second derivatives at one point: `[[i, k]] = d2 out_i / d x_k^2`.
    pub fn second_derivatives(&self, point: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.outputs(), self.dim()), |(i, k)| {
            self.second[k][[point, i]]
        })
    }

    /// Laplacian of every output at one point.
    pub fn laplacian(&self, point: usize) -> Vec<f64> {
        self.second_derivatives(point).rows().into_iter().map(|r| r.sum()).collect()
    }

    pub(crate) fn from_tape(tape: &Tape<f64>, out: &DualRows) -> Result<Self, ModelError> {
        let values = tape.value(out.value).clone();
        ensure_finite(&values, "model outputs")?;
        let read = |ids: &[NodeId]| -> Result<Vec<Array2<f64>>, ModelError> {
            ids.iter()
                .map(|&id| {
                    let v = tape.value(id).clone();
                    ensure_finite(&v, "model derivatives")?;
                    Ok(v)
                })
                .collect()
        };
        Ok(CloudDerivatives { values, first: read(&out.d1)?, second: read(&out.d2)? })
    }
}

/// Evaluates the model and its spatial derivatives on one cloud.
pub fn pipn_derivatives(
    params: &ModelParameters,
    features: &Array2<f64>,
) -> Result<CloudDerivatives, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let recording = record_pipn(&mut tape, &bound, features, true, None)?;
    CloudDerivatives::from_tape(&tape, &recording.output)
}
