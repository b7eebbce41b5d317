//! Point-cloud cases on disk and in memory: format, validation,
//! normalization, and dataset splits.
//!
//! A case is a directory holding a TOML manifest (`manifest.toml`) and a
//! comma-separated point table (`points.csv`). The manifest records the
//! schema version, dimension, flow conditions, fluid properties, and the
//! case-level porous coefficients; the table holds one row per point with
//! coordinates, the porous indicator, signed distance, boundary one-hot,
//! per-point coefficients, and optional reference fields. All floats are
//! written with 17 significant digits so values round-trip exactly.

mod io;
mod stats;

pub use io::{load_case, load_stats, save_case, save_stats};
pub use stats::{
    compute_normalization, compute_normalization_for_split, denormalize_field, normalize_case,
    normalize_field, split_dataset, DatasetSplit, FeatureStat, NormalizationStats, RangeStat,
    STD_FLOOR,
};

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::geometry::BoundaryTag;
use crate::physics::FluidProperties;

/// Tolerance on |sdf| for points tagged as lying on the porous interface.
pub const INTERFACE_SDF_TOLERANCE: f64 = 1e-9;

/// Errors raised by case validation, file IO, and dataset bookkeeping.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(#[from] toml::de::Error),
    #[error("unsupported schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("malformed point table at line {line}: {reason}")]
    MalformedTable { line: usize, reason: String },
    #[error("point table has {got} rows but the manifest declares {expected}")]
    TruncatedTable { expected: usize, got: usize },
    #[error("invalid case at point {index}: {reason}")]
    InvalidPoint { index: usize, reason: String },
    #[error("invalid case: {reason}")]
    InvalidCase { reason: String },
    #[error("normalization needs at least one case")]
    EmptyDataset,
    #[error("no case carries reference fields; velocity and pressure statistics are undefined")]
    NoReferenceData,
    #[error("dataset split needs at least {min} cases, got {got}")]
    TooFewCases { got: usize, min: usize },
    #[error("case {id} is outside the training split; normalization must not see it")]
    LeakedCase { id: String },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },
    #[error("field is already in {0} units")]
    WrongUnits(&'static str),
}

/// One collocation or boundary point with its input features.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRecord {
    /// Position in meters, `dim` entries.
    pub coords: Vec<f64>,
    /// Porous indicator: 1 inside the porous region, 0 in clear fluid.
    pub chi: u8,
    /// Signed distance to the porous interface in meters.
    pub sdf: f64,
    /// Boundary role; interior points encode as all zeros.
    pub boundary: BoundaryTag,
    /// Darcy coefficient at this point, 1/m^2.
    pub darcy: f64,
    /// Forchheimer coefficient at this point, 1/m.
    pub forchheimer: f64,
}

/// Reference velocity and pressure at one point, in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub velocity: Vec<f64>,
    pub pressure: f64,
}

/// Case-level conditions stored in the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseMeta {
    /// Inlet speed magnitude, m/s.
    pub inlet_speed: f64,
    /// Inlet flow angle from the x axis, radians.
    pub inlet_angle: f64,
    pub fluid: FluidProperties,
    /// Case-level Darcy coefficient, 1/m^2.
    pub darcy: f64,
    /// Case-level Forchheimer coefficient, 1/m.
    pub forchheimer: f64,
    /// When set, residuals include the manufactured forcing term derived
    /// from the trigonometric verification fields.
    pub manufactured_forcing: bool,
    /// Free-form origin note (generator name and seed, CFD export, ...).
    pub provenance: String,
}

impl CaseMeta {
    /// Inlet velocity vector implied by the speed and in-plane angle; the
    /// out-of-plane component is zero in three dimensions.
    pub fn inlet_velocity(&self, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[0] = self.inlet_speed * self.inlet_angle.cos();
        if dim > 1 {
            v[1] = self.inlet_speed * self.inlet_angle.sin();
        }
        v
    }

    /// Placeholder conditions for freshly sampled geometry.
    pub fn unspecified(provenance: String) -> Self {
        CaseMeta {
            inlet_speed: 0.0,
            inlet_angle: 0.0,
            fluid: FluidProperties::unit(),
            darcy: 0.0,
            forchheimer: 0.0,
            manufactured_forcing: false,
            provenance,
        }
    }
}

/// A complete case: labeled points, optional reference fields, observation
/// indices, and the case conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudCase {
    pub dim: usize,
    pub points: Vec<PointRecord>,
    /// Reference fields aligned with `points`, when ground truth exists.
    pub reference: Option<Vec<FlowSample>>,
    /// Strictly increasing indices of points whose reference values feed
    /// the data loss.
    pub observations: Vec<usize>,
    pub meta: CaseMeta,
}

impl PointCloudCase {
    /// Checks every structural invariant, naming the first offending point.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.dim != 2 && self.dim != 3 {
            return Err(DatasetError::InvalidCase {
                reason: format!("dimension must be 2 or 3, got {}", self.dim),
            });
        }
        if self.points.is_empty() {
            return Err(DatasetError::InvalidCase { reason: "case has no points".to_string() });
        }
        let finite = |v: f64| v.is_finite();
        for (i, p) in self.points.iter().enumerate() {
            let fail = |reason: String| Err(DatasetError::InvalidPoint { index: i, reason });
            if p.coords.len() != self.dim {
                return fail(format!("expected {} coordinates, got {}", self.dim, p.coords.len()));
            }
            if !p.coords.iter().copied().all(finite) || !finite(p.sdf) {
                return fail("non-finite coordinate or sdf".to_string());
            }
            if p.chi > 1 {
                return fail(format!("chi must be 0 or 1, got {}", p.chi));
            }
            if !(finite(p.darcy) && p.darcy >= 0.0 && finite(p.forchheimer) && p.forchheimer >= 0.0)
            {
                return fail("porous coefficients must be finite and nonnegative".to_string());
            }
            match p.boundary {
                BoundaryTag::Interface => {
                    if p.chi != 1 {
                        return fail("interface point must have chi = 1".to_string());
                    }
                    if p.sdf.abs() > INTERFACE_SDF_TOLERANCE {
                        return fail(format!("interface point has |sdf| = {:e}", p.sdf.abs()));
                    }
                }
                _ => {
                    let porous = p.sdf < 0.0;
                    if porous != (p.chi == 1) {
                        return fail(format!("chi = {} contradicts sdf = {:e}", p.chi, p.sdf));
                    }
                }
            }
        }
        // The porous subset must share one coefficient pair, matching the
        // case-level values in the manifest.
        for (i, p) in self.points.iter().enumerate() {
            if p.chi == 1 && (p.darcy != self.meta.darcy || p.forchheimer != self.meta.forchheimer)
            {
                return Err(DatasetError::InvalidPoint {
                    index: i,
                    reason: format!(
                        "porous point coefficients ({}, {}) differ from the case values ({}, {})",
                        p.darcy, p.forchheimer, self.meta.darcy, self.meta.forchheimer
                    ),
                });
            }
        }
        if let Some(reference) = &self.reference {
            if reference.len() != self.points.len() {
                return Err(DatasetError::InvalidCase {
                    reason: format!(
                        "reference has {} rows for {} points",
                        reference.len(),
                        self.points.len()
                    ),
                });
            }
            for (i, s) in reference.iter().enumerate() {
                if s.velocity.len() != self.dim {
                    return Err(DatasetError::InvalidPoint {
                        index: i,
                        reason: "reference velocity dimension mismatch".to_string(),
                    });
                }
                if !s.velocity.iter().copied().all(finite) || !finite(s.pressure) {
                    return Err(DatasetError::InvalidPoint {
                        index: i,
                        reason: "non-finite reference value".to_string(),
                    });
                }
            }
        }
        let mut last: Option<usize> = None;
        for &idx in &self.observations {
            if idx >= self.points.len() {
                return Err(DatasetError::InvalidCase {
                    reason: format!("observation index {idx} out of range"),
                });
            }
            if let Some(prev) = last {
                if idx <= prev {
                    return Err(DatasetError::InvalidCase {
                        reason: "observation indices must be strictly increasing".to_string(),
                    });
                }
            }
            last = Some(idx);
        }
        if !self.observations.is_empty() && self.reference.is_none() {
            return Err(DatasetError::InvalidCase {
                reason: "observations require reference fields".to_string(),
            });
        }
        if !(self.meta.fluid.rho > 0.0 && self.meta.fluid.mu > 0.0) {
            return Err(DatasetError::InvalidCase {
                reason: "fluid properties must be positive".to_string(),
            });
        }
        Ok(())
    }

    /// Stamps the case-level porous coefficients onto the manifest and
    /// every porous point; fluid points keep zeros.
    pub fn assign_porous_coefficients(&mut self, darcy: f64, forchheimer: f64) {
        self.meta.darcy = darcy;
        self.meta.forchheimer = forchheimer;
        for p in &mut self.points {
            if p.chi == 1 {
                p.darcy = darcy;
                p.forchheimer = forchheimer;
            } else {
                p.darcy = 0.0;
                p.forchheimer = 0.0;
            }
        }
    }

    /// Network input rows: coordinates, signed distance, boundary one-hot.
    pub fn input_features(&self) -> Array2<f64> {
        let n = self.points.len();
        let mut out = Array2::zeros((n, self.dim + 5));
        for (i, p) in self.points.iter().enumerate() {
            for k in 0..self.dim {
                out[[i, k]] = p.coords[k];
            }
            out[[i, self.dim]] = p.sdf;
            for (k, v) in p.boundary.onehot().into_iter().enumerate() {
                out[[i, self.dim + 1 + k]] = v;
            }
        }
        out
    }

    /// Point positions as an n-by-dim matrix.
    pub fn coords_matrix(&self) -> Array2<f64> {
        let n = self.points.len();
        Array2::from_shape_fn((n, self.dim), |(i, k)| self.points[i].coords[k])
    }

    /// Region of point `i` for residual gating.
    pub fn region(&self, i: usize) -> crate::physics::Region {
        if self.points[i].chi == 1 {
            crate::physics::Region::Porous
        } else {
            crate::physics::Region::Fluid
        }
    }

    /// Reference fields as a physical-units flow field, when present.
    pub fn reference_field(&self) -> Option<FlowField> {
        let reference = self.reference.as_ref()?;
        let n = reference.len();
        let velocity =
            Array2::from_shape_fn((n, self.dim), |(i, k)| reference[i].velocity[k]);
        let pressure = Array1::from_iter(reference.iter().map(|s| s.pressure));
        Some(FlowField { units: Units::Physical, velocity, pressure })
    }
}

/// Whether a field's values are raw or Z-scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Units {
    Physical,
    Normalized,
}

/// Velocity and pressure over a point cloud, tagged with its unit system
/// so physical-unit errors are never computed on normalized values.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub units: Units,
    /// n-by-dim velocity components.
    pub velocity: Array2<f64>,
    pub pressure: Array1<f64>,
}

impl FlowField {
    pub fn rows(&self) -> usize {
        self.pressure.len()
    }

    pub fn dim(&self) -> usize {
        self.velocity.ncols()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.velocity.nrows() != self.pressure.len() {
            return Err(DatasetError::DimensionMismatch {
                context: "flow field rows",
                expected: self.pressure.len(),
                got: self.velocity.nrows(),
            });
        }
        Ok(())
    }
}

/// Deterministically selects `count` observation indices out of `n` points,
/// sorted ascending.
pub fn choose_observations(n: usize, count: usize, seed: u64) -> Vec<usize> {
    use rand::seq::index::sample;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let count = count.min(n);
    let mut picked: Vec<usize> = sample(&mut rng, n, count).into_iter().collect();
    picked.sort_unstable();
    picked
}
