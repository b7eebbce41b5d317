//! Inference timing.
//!
//! Measures plain forward passes (no derivative channels, no tape reuse
//! across calls) over a set of cases. All inputs are prepared before the
//! clock starts, one untimed warm-up absorbs first-call effects, and the
//! report keeps every raw sample so the aggregation can be audited.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use serde::Deserialize;

use crate::dataset::{normalize_case, NormalizationStats, PointCloudCase};
use crate::models::{
    normalize_branch, pigano_forward, pipn_forward, select_branch_points, BranchInput,
    ModelConfig, ModelParameters,
};
use crate::textio::{fmt_float, toml_escape};

use super::{input_err, parse_err, EvalError};

/// Fewest repetitions that make the per-case mean meaningful.
pub const MIN_REPETITIONS: usize = 5;

const TIMING_SCHEMA_VERSION: u64 = 1;

/// Wall-clock measurements for one case.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseTiming {
    pub id: String,
    /// Mean seconds per forward pass over the repetitions.
    pub seconds: f64,
    /// Raw per-repetition samples, in measurement order.
    pub samples: Vec<f64>,
}

/// Timing summary over a set of cases.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    /// Timed repetitions per case, excluding the warm-up pass.
    pub repetitions: usize,
    pub per_case: Vec<CaseTiming>,
    /// Mean of the per-case means, in seconds.
    pub mean_seconds: f64,
    /// Population standard deviation of the per-case means.
    pub std_seconds: f64,
    /// Optional externally supplied solver time for context. Never
    /// measured here; it is carried through verbatim when the caller
    /// provides one.
    pub reference_seconds: Option<f64>,
}

impl TimingReport {
    /// Assembles a report from per-case measurements, recomputing the
    /// aggregate mean and population standard deviation.
    pub fn from_cases(
        repetitions: usize,
        per_case: Vec<CaseTiming>,
        reference_seconds: Option<f64>,
    ) -> Result<Self, EvalError> {
        if repetitions < MIN_REPETITIONS {
            return input_err(format!(
                "need at least {MIN_REPETITIONS} repetitions, got {repetitions}"
            ));
        }
        if per_case.is_empty() {
            return input_err("no cases were timed");
        }
        for case in &per_case {
            if case.samples.len() != repetitions {
                return input_err(format!(
                    "case {} has {} samples for {repetitions} repetitions",
                    case.id,
                    case.samples.len()
                ));
            }
            if case.samples.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
                return input_err(format!("case {} has a non-positive sample", case.id));
            }
            let mean = case.samples.iter().sum::<f64>() / repetitions as f64;
            if (case.seconds - mean).abs() > 1e-12 * mean.max(1.0) {
                return input_err(format!(
                    "case {} reports {} seconds but its samples average {mean}",
                    case.id, case.seconds
                ));
            }
        }
        if let Some(r) = reference_seconds {
            if r <= 0.0 || !r.is_finite() {
                return input_err("the reference time must be a positive number of seconds");
            }
        }
        let n = per_case.len() as f64;
        let mean_seconds = per_case.iter().map(|c| c.seconds).sum::<f64>() / n;
        let variance = per_case
            .iter()
            .map(|c| (c.seconds - mean_seconds).powi(2))
            .sum::<f64>()
            / n;
        let std_seconds = variance.sqrt();
        Ok(TimingReport {
            repetitions,
            per_case,
            mean_seconds,
            std_seconds,
            reference_seconds,
        })
    }

    /// Serializes the report as a small TOML document:
    ///
    /// ```toml
    /// schema_version = 1
    /// repetitions = 20
    /// mean_seconds = 1.2e-2
    /// std_seconds = 3.0e-4
    /// # reference_seconds appears only when supplied
    ///
    /// [[cases]]
    /// id = "duct-000"
    /// seconds = 1.2e-2
    /// samples = [1.19e-2, ...]
    /// ```
    ///
    /// Floats are written with full precision, so parsing the document
    /// reproduces the report exactly.
    pub fn to_toml_string(&self) -> String {
        let mut doc = String::new();
        let _ = writeln!(doc, "schema_version = {TIMING_SCHEMA_VERSION}");
        let _ = writeln!(doc, "repetitions = {}", self.repetitions);
        let _ = writeln!(doc, "mean_seconds = {}", fmt_float(self.mean_seconds));
        let _ = writeln!(doc, "std_seconds = {}", fmt_float(self.std_seconds));
        if let Some(r) = self.reference_seconds {
            let _ = writeln!(doc, "reference_seconds = {}", fmt_float(r));
        }
        for case in &self.per_case {
            let _ = writeln!(doc, "\n[[cases]]");
            let _ = writeln!(doc, "id = \"{}\"", toml_escape(&case.id));
            let _ = writeln!(doc, "seconds = {}", fmt_float(case.seconds));
            let samples: Vec<String> = case.samples.iter().map(|&s| fmt_float(s)).collect();
            let _ = writeln!(doc, "samples = [{}]", samples.join(", "));
        }
        doc
    }

    /// Parses a report back from its TOML form.
    pub fn from_toml_str(text: &str) -> Result<Self, EvalError> {
        #[derive(Deserialize)]
        struct CaseDoc {
            id: String,
            seconds: f64,
            samples: Vec<f64>,
        }
        #[derive(Deserialize)]
        struct ReportDoc {
            schema_version: u64,
            repetitions: usize,
            mean_seconds: f64,
            std_seconds: f64,
            reference_seconds: Option<f64>,
            cases: Vec<CaseDoc>,
        }
        let doc: ReportDoc = toml::from_str(text)
            .map_err(|e| EvalError::Parse { reason: e.to_string() })?;
        if doc.schema_version != TIMING_SCHEMA_VERSION {
            return parse_err(format!(
                "unsupported timing schema version {}",
                doc.schema_version
            ));
        }
        let per_case: Vec<CaseTiming> = doc
            .cases
            .into_iter()
            .map(|c| CaseTiming { id: c.id, seconds: c.seconds, samples: c.samples })
            .collect();
        let report = TimingReport::from_cases(
            doc.repetitions,
            per_case,
            doc.reference_seconds,
        )?;
        if (report.mean_seconds - doc.mean_seconds).abs()
            > 1e-12 * doc.mean_seconds.max(1.0)
            || (report.std_seconds - doc.std_seconds).abs() > 1e-12
        {
            return parse_err("stored aggregates disagree with the per-case samples");
        }
        Ok(report)
    }

    /// Renders a short human-readable summary.
    pub fn text_summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "inference over {} case(s), {} repetitions each",
            self.per_case.len(),
            self.repetitions
        );
        for case in &self.per_case {
            let _ = writeln!(out, "  {:<20} {:>12.6e} s", case.id, case.seconds);
        }
        let _ = writeln!(
            out,
            "mean {:.6e} s, std {:.6e} s",
            self.mean_seconds, self.std_seconds
        );
        if let Some(r) = self.reference_seconds {
            let _ = writeln!(out, "reference solver time {r:.6e} s (supplied, not measured)");
        }
        out
    }
}

/// Inputs for one timed case, fully prepared before the clock starts.
enum PreparedInference {
    Pipn { features: Array2<f64> },
    Pigano { coords: Array2<f64>, features: Array2<f64>, branch: BranchInput },
}

/// Times plain forward passes of `params` over `cases`.
///
/// Input preparation (validation, normalization, branch sampling with
/// `branch_seed`) happens before any timing. Each case gets one untimed
/// warm-up pass, then `repetitions` timed passes; the per-case time is
/// the mean of its samples, and the report aggregates over cases.
pub fn benchmark_inference(
    params: &ModelParameters,
    cases: &[(String, PointCloudCase)],
    stats: &NormalizationStats,
    repetitions: usize,
    branch_seed: u64,
) -> Result<TimingReport, EvalError> {
    if repetitions < MIN_REPETITIONS {
        return input_err(format!(
            "need at least {MIN_REPETITIONS} repetitions, got {repetitions}"
        ));
    }
    if cases.is_empty() {
        return input_err("no cases to time");
    }
    let dim = params.config.dim();
    let mut prepared = Vec::with_capacity(cases.len());
    for (id, case) in cases {
        case.validate()?;
        if case.dim != dim {
            return input_err(format!(
                "case {id} is {}-dimensional but the model expects {dim} coordinates",
                case.dim
            ));
        }
        let normalized = normalize_case(case, stats)?;
        let features = normalized.input_features();
        let inputs = match &params.config {
            ModelConfig::Pipn(_) => PreparedInference::Pipn { features },
            ModelConfig::Pigano(config) => {
                let raw = select_branch_points(case, config.branch_points, branch_seed)?;
                PreparedInference::Pigano {
                    coords: normalized.coords_matrix(),
                    features,
                    branch: normalize_branch(&raw, stats)?,
                }
            }
        };
        prepared.push((id.clone(), inputs));
    }
    let forward = |inputs: &PreparedInference| -> Result<(), EvalError> {
        match inputs {
            PreparedInference::Pipn { features } => {
                pipn_forward(params, features)?;
            }
            PreparedInference::Pigano { coords, features, branch } => {
                pigano_forward(params, coords, features, branch)?;
            }
        }
        Ok(())
    };
    let mut per_case = Vec::with_capacity(prepared.len());
    for (id, inputs) in &prepared {
        forward(inputs)?;
        let mut samples = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            forward(inputs)?;
            samples.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
        }
        let seconds = samples.iter().sum::<f64>() / repetitions as f64;
        per_case.push(CaseTiming { id: id.clone(), seconds, samples });
    }
    TimingReport::from_cases(repetitions, per_case, None)
}
