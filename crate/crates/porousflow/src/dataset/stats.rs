//! Normalization statistics and deterministic dataset splits.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{DatasetError, FlowField, PointCloudCase, Units};
use crate::physics::{PhysicsError, ResidualScaling};

/// Minimum standard deviation; smaller values are floored and flagged.
pub const STD_FLOOR: f64 = 1e-12;

/// Z-score parameters of one feature over the training split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureStat {
    pub mean: f64,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: f64,
    /// Set when the raw deviation fell below the floor.
    pub constant: bool,
}

impl FeatureStat {
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

/// Min-max range of a case-level coefficient over the training split.
/// Values outside the range pass through linearly, so unseen coefficients
/// map beyond [0, 1] instead of clamping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeStat {
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

impl RangeStat {
    pub fn normalize(&self, x: f64) -> f64 {
        if self.constant {
            0.0
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        if self.constant {
            self.min
        } else {
            self.min + z * (self.max - self.min)
        }
    }
}

/// Feature statistics computed from the training split only.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub coords: Vec<FeatureStat>,
    pub velocity: Vec<FeatureStat>,
    pub pressure: FeatureStat,
    pub darcy: RangeStat,
    pub forchheimer: RangeStat,
}

impl NormalizationStats {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Identity statistics: Z-scores become the raw values. Useful when no
    /// reference data exists to estimate output scales.
    pub fn identity(dim: usize) -> Self {
        let unit = FeatureStat { mean: 0.0, std: 1.0, constant: false };
        NormalizationStats {
            coords: vec![unit; dim],
            velocity: vec![unit; dim],
            pressure: unit,
            darcy: RangeStat { min: 0.0, max: 1.0, constant: false },
            forchheimer: RangeStat { min: 0.0, max: 1.0, constant: false },
        }
    }

    /// Chain-rule coefficients for evaluating residuals on normalized
    /// network outputs.
    pub fn residual_scaling(&self) -> Result<ResidualScaling, PhysicsError> {
        ResidualScaling::new(
            self.velocity.iter().map(|s| s.mean).collect(),
            self.velocity.iter().map(|s| s.std).collect(),
            self.coords.iter().map(|s| s.std).collect(),
            self.pressure.std,
        )
    }
}

/// Streaming mean and variance (Welford's update).
#[derive(Clone, Copy, Default)]
struct Accumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn finish(self) -> FeatureStat {
        let raw = if self.count == 0 { 0.0 } else { (self.m2 / self.count as f64).sqrt() };
        if raw < STD_FLOOR {
            FeatureStat { mean: self.mean, std: STD_FLOOR, constant: true }
        } else {
            FeatureStat { mean: self.mean, std: raw, constant: false }
        }
    }
}

fn range_over(values: impl Iterator<Item = f64>) -> RangeStat {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        min = min.min(v);
        max = max.max(v);
    }
    RangeStat { min, max, constant: min == max }
}

/// Computes per-feature statistics over every point of the given training
/// cases. Coordinates come from all cases; velocity and pressure from the
/// cases carrying reference fields; D and F ranges from the case-level
/// coefficients.
pub fn compute_normalization(cases: &[&PointCloudCase]) -> Result<NormalizationStats, DatasetError> {
    let first = cases.first().ok_or(DatasetError::EmptyDataset)?;
    let dim = first.dim;
    for case in cases {
        if case.dim != dim {
            return Err(DatasetError::DimensionMismatch {
                context: "normalization cases",
                expected: dim,
                got: case.dim,
            });
        }
    }

    let mut coords = vec![Accumulator::default(); dim];
    let mut velocity = vec![Accumulator::default(); dim];
    let mut pressure = Accumulator::default();
    let mut saw_reference = false;
    for case in cases {
        for p in &case.points {
            for (acc, x) in coords.iter_mut().zip(&p.coords) {
                acc.push(*x);
            }
        }
        if let Some(reference) = &case.reference {
            saw_reference = true;
            for s in reference {
                for (acc, u) in velocity.iter_mut().zip(&s.velocity) {
                    acc.push(*u);
                }
                pressure.push(s.pressure);
            }
        }
    }
    if !saw_reference {
        return Err(DatasetError::NoReferenceData);
    }

    Ok(NormalizationStats {
        coords: coords.into_iter().map(Accumulator::finish).collect(),
        velocity: velocity.into_iter().map(Accumulator::finish).collect(),
        pressure: pressure.finish(),
        darcy: range_over(cases.iter().map(|c| c.meta.darcy)),
        forchheimer: range_over(cases.iter().map(|c| c.meta.forchheimer)),
    })
}

/// Like [`compute_normalization`], but refuses cases outside the training
/// split so validation and test data can never leak into the statistics.
pub fn compute_normalization_for_split(
    cases: &[(&str, &PointCloudCase)],
    split: &DatasetSplit,
) -> Result<NormalizationStats, DatasetError> {
    for (id, _) in cases {
        if !split.train.iter().any(|t| t == id) {
            return Err(DatasetError::LeakedCase { id: (*id).to_string() });
        }
    }
    let refs: Vec<&PointCloudCase> = cases.iter().map(|(_, c)| *c).collect();
    compute_normalization(&refs)
}

/// Returns a copy of the case with coordinates, reference fields, and
/// porous coefficients mapped into normalized space. The indicator,
/// one-hot, and signed distance stay as they are. The result is meant for
/// model input assembly, not for saving: on-disk cases are always physical.
pub fn normalize_case(case: &PointCloudCase, stats: &NormalizationStats) -> Result<PointCloudCase, DatasetError> {
    if case.dim != stats.dim() {
        return Err(DatasetError::DimensionMismatch {
            context: "normalize case",
            expected: stats.dim(),
            got: case.dim,
        });
    }
    let mut out = case.clone();
    for p in &mut out.points {
        for k in 0..case.dim {
            p.coords[k] = stats.coords[k].normalize(p.coords[k]);
        }
        p.darcy = stats.darcy.normalize(p.darcy);
        p.forchheimer = stats.forchheimer.normalize(p.forchheimer);
    }
    if let Some(reference) = &mut out.reference {
        for s in reference {
            for k in 0..case.dim {
                s.velocity[k] = stats.velocity[k].normalize(s.velocity[k]);
            }
            s.pressure = stats.pressure.normalize(s.pressure);
        }
    }
    out.meta.darcy = stats.darcy.normalize(case.meta.darcy);
    out.meta.forchheimer = stats.forchheimer.normalize(case.meta.forchheimer);
    Ok(out)
}

/// Z-scores a physical flow field.
pub fn normalize_field(field: &FlowField, stats: &NormalizationStats) -> Result<FlowField, DatasetError> {
    if field.units != Units::Physical {
        return Err(DatasetError::WrongUnits("normalized"));
    }
    convert(field, stats, Units::Normalized)
}

/// Restores physical units from a Z-scored flow field.
pub fn denormalize_field(field: &FlowField, stats: &NormalizationStats) -> Result<FlowField, DatasetError> {
    if field.units != Units::Normalized {
        return Err(DatasetError::WrongUnits("physical"));
    }
    convert(field, stats, Units::Physical)
}

fn convert(
    field: &FlowField,
    stats: &NormalizationStats,
    target: Units,
) -> Result<FlowField, DatasetError> {
    field.validate()?;
    if field.dim() != stats.dim() {
        return Err(DatasetError::DimensionMismatch {
            context: "flow field components",
            expected: stats.dim(),
            got: field.dim(),
        });
    }
    let n = field.rows();
    let mut velocity = Array2::zeros((n, field.dim()));
    let mut pressure = Array1::zeros(n);
    for i in 0..n {
        for k in 0..field.dim() {
            velocity[[i, k]] = match target {
                Units::Normalized => stats.velocity[k].normalize(field.velocity[[i, k]]),
                Units::Physical => stats.velocity[k].denormalize(field.velocity[[i, k]]),
            };
        }
        pressure[i] = match target {
            Units::Normalized => stats.pressure.normalize(field.pressure[i]),
            Units::Physical => stats.pressure.denormalize(field.pressure[i]),
        };
    }
    Ok(FlowField { units: target, velocity, pressure })
}

/// Case identifiers partitioned 60/20/20.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles the identifiers with the seed, then assigns one fifth each to
/// validation and test (rounded down) and the remainder to training.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<DatasetSplit, DatasetError> {
    if ids.len() < 5 {
        return Err(DatasetError::TooFewCases { got: ids.len(), min: 5 });
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let n_val = n / 5;
    let n_test = n / 5;
    let n_train = n - n_val - n_test;
    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Ok(DatasetSplit { train: shuffled, validation, test })
}
