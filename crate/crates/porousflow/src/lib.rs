//! Physics-informed point-cloud networks for steady incompressible flow
//! through and around porous obstacles.
//!
//! The crate trains and evaluates two model families on scattered point
//! clouds: PIPN (a PointNet-style shared encoder with a max-pooled global
//! feature) and PI-GANO (a geometry-aware neural operator conditioned on
//! boundary data). Both enforce the Navier-Stokes residual in fluid regions
//! and a Darcy-Forchheimer extension inside porous regions, with derivatives
//! supplied by the built-in second-order automatic differentiation engine.
//!
//! Modules are layered bottom-up:
//!
//! * [`ad`]: dual-number and tape-based differentiation,
//! * [`physics`]: governing equations, porous closure, manufactured solution,
//! * [`geometry`]: obstacle shapes, signed distances, point-cloud sampling,
//! * [`dataset`]: case files, normalization, dataset splits,
//! * [`models`]: PIPN and PI-GANO forward passes and parameter handling,
//! * [`train`]: loss assembly, Adam, the training loop, checkpoints,
//! * [`eval`]: error tables and inference timing.

pub mod ad;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod models;
pub mod physics;
pub(crate) mod textio;
pub mod train;

pub use ad::{Dual2, GradientVector, Tape};
pub use eval::{
    benchmark_inference, group_errors_by_coefficient, mae_by_region, predict_field, EvalError,
    RegionMaeTable, RegionMasks, TimingReport,
};
pub use dataset::{FlowField, NormalizationStats, PointCloudCase, Units};
pub use geometry::{BoundaryTag, DomainSpec, Shape, ShapeSpec};
pub use models::{BranchInput, ModelConfig, ModelParameters, PiganoConfig, PipnConfig};
pub use physics::{FluidProperties, PorousCoefficients, Region, ResidualScaling};
pub use train::{
    train, LossBreakdown, LossWeights, TrainConfig, TrainError, TrainOutcome, TrainStart,
    TrainingSet,
};
