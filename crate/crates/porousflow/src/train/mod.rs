//! Physics-informed training: the four-term loss, Adam with exponential
//! learning-rate decay, and the checkpointed training loop.
//!
//! The loss combines mean squared scaled residuals (continuity and momentum,
//! with the porous drag gated per point) over interior collocation points
//! with squared data misfits on boundary and observation points, each term
//! carrying its own weight. Residuals act on normalized network outputs
//! through the chain-rule coefficients of
//! [`ResidualScaling`](crate::physics::ResidualScaling), and every term is
//! assembled twice by construction: once as plain numbers for evaluation and
//! once as tape nodes so the reverse sweep reaches the parameters through
//! the derivative channels.
//!
//! The loop records one case per step for the point-cloud model (its global
//! feature is per-case) and averages a configurable number of cases per step
//! for the conditioned model. Checkpoints carry the model, the optimizer
//! moments, the generator position, and the loss history, which makes a
//! resumed run reproduce the uninterrupted trajectory bitwise.

mod adam;
mod loss;
mod run;
#[cfg(test)]
pub(crate) mod testutil;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use loss::{compute_loss, record_loss, PreparedCase, RecordedLoss};
pub use run::{read_history, train, HistoryRow, TrainOutcome, TrainStart, TrainingSet};

use std::path::PathBuf;
use thiserror::Error;

use crate::ad::AdError;
use crate::dataset::DatasetError;
use crate::models::ModelError;
use crate::physics::PhysicsError;

/// Errors raised while assembling losses, stepping the optimizer, or running
/// the training loop.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {reason}")]
    Config { reason: String },
    #[error("training aborted: non-finite loss at epoch {epoch}, minibatch {minibatch}")]
    NonFiniteLoss { epoch: u64, minibatch: usize },
    #[error("training aborted: non-finite gradient for {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trainer state in {path}: {reason}")]
    State { path: PathBuf, reason: String },
}

/// Weights of the four loss terms: momentum, continuity, boundary data, and
/// observation data. A zero data weight is the label-free configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_m: f64,
    pub lambda_c: f64,
    pub lambda_b: f64,
    pub lambda_d: f64,
}

impl LossWeights {
    pub fn new(
        lambda_m: f64,
        lambda_c: f64,
        lambda_b: f64,
        lambda_d: f64,
    ) -> Result<Self, TrainError> {
        let weights = LossWeights { lambda_m, lambda_c, lambda_b, lambda_d };
        weights.validate()?;
        Ok(weights)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let named = [
            ("momentum", self.lambda_m),
            ("continuity", self.lambda_c),
            ("boundary", self.lambda_b),
            ("data", self.lambda_d),
        ];
        for (name, value) in named {
            if !(value.is_finite() && value >= 0.0) {
                return Err(TrainError::Config {
                    reason: format!("{name} weight must be finite and nonnegative, got {value}"),
                });
            }
        }
        if named.iter().all(|(_, v)| *v == 0.0) {
            return Err(TrainError::Config {
                reason: "at least one loss weight must be positive".to_string(),
            });
        }
        Ok(())
    }
}

/// The four loss terms of one evaluation plus their weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_m: f64,
    pub l_c: f64,
    pub l_b: f64,
    pub l_d: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Bundles the four terms and computes the weighted total, so the
    /// decomposition identity holds by construction.
    pub fn from_parts(l_m: f64, l_c: f64, l_b: f64, l_d: f64, weights: &LossWeights) -> Self {
        let total = weights.lambda_m * l_m
            + weights.lambda_c * l_c
            + weights.lambda_b * l_b
            + weights.lambda_d * l_d;
        LossBreakdown { l_m, l_c, l_b, l_d, total }
    }
}

/// Everything the training loop needs beyond the data and the model.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Learning rate at epoch 0.
    pub base_lr: f64,
    /// Per-epoch multiplicative decay; 1 disables the schedule.
    pub decay: f64,
    /// Cases per optimizer step for the conditioned model; the point-cloud
    /// model always takes one case per step.
    pub minibatch: usize,
    /// Seed of the loop generator (shuffling and dropout masks).
    pub seed: u64,
    pub weights: LossWeights,
    /// Dropout probability; must match the model architecture's rate.
    pub dropout: f64,
    /// Save a checkpoint every this many epochs; 0 keeps only the final
    /// (and best-validation) checkpoints.
    pub checkpoint_every: usize,
    /// Optional global-norm gradient clip; off by default.
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |reason: String| Err(TrainError::Config { reason });
        if self.epochs == 0 {
            return fail("epochs must be positive".to_string());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return fail(format!("base learning rate must be positive, got {}", self.base_lr));
        }
        if !(self.decay.is_finite() && self.decay > 0.0 && self.decay <= 1.0) {
            return fail(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if self.minibatch == 0 {
            return fail("minibatch size must be positive".to_string());
        }
        if !(self.dropout.is_finite() && (0.0..1.0).contains(&self.dropout)) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if let Some(clip) = self.clip_norm {
            if !(clip.is_finite() && clip > 0.0) {
                return fail(format!("clip norm must be positive, got {clip}"));
            }
        }
        self.weights.validate()
    }
}

/// Learning rate under per-epoch exponential decay: `base * alpha^epoch`.
pub fn lr_at(epoch: u64, base_lr: f64, alpha: f64) -> f64 {
    base_lr * alpha.powf(epoch as f64)
}
