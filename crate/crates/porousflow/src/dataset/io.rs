//! Case directory format: `manifest.toml` plus `points.csv`.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{
    CaseMeta, DatasetError, FeatureStat, FlowSample, NormalizationStats, PointCloudCase,
    PointRecord, RangeStat,
};
use crate::geometry::BoundaryTag;
use crate::physics::FluidProperties;
use crate::textio::{fmt_float, toml_escape};

/// Version stamp written into every manifest.
pub const SCHEMA_VERSION: u32 = 1;

const MANIFEST_FILE: &str = "manifest.toml";
const POINTS_FILE: &str = "points.csv";

#[derive(Deserialize)]
struct ManifestDoc {
    schema_version: u32,
    dim: usize,
    point_count: usize,
    has_reference: bool,
    observations: Vec<usize>,
    case: CaseSection,
    fluid: FluidSection,
}

#[derive(Deserialize)]
struct CaseSection {
    inlet_speed: f64,
    inlet_angle: f64,
    darcy: f64,
    forchheimer: f64,
    manufactured_forcing: bool,
    provenance: String,
}

#[derive(Deserialize)]
struct FluidSection {
    rho: f64,
    mu: f64,
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io { path: path.to_path_buf(), source }
}

/// Column names for the point table, in on-disk order.
fn header(dim: usize, has_reference: bool) -> String {
    let mut cols: Vec<&str> = Vec::new();
    cols.extend_from_slice(&["x", "y", "z"][..dim]);
    cols.extend_from_slice(&[
        "chi",
        "sdf",
        "b_inlet",
        "b_outlet",
        "b_wall",
        "b_interface",
        "darcy",
        "forchheimer",
    ]);
    if has_reference {
        cols.extend_from_slice(&["u", "v", "w"][..dim]);
        cols.push("p");
    }
    cols.join(",")
}

/// Writes a validated case into `dir`, creating it if needed.
pub fn save_case(case: &PointCloudCase, dir: &Path) -> Result<(), DatasetError> {
    case.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let mut manifest = String::new();
    let m = &case.meta;
    let _ = writeln!(manifest, "schema_version = {SCHEMA_VERSION}");
    let _ = writeln!(manifest, "dim = {}", case.dim);
    let _ = writeln!(manifest, "point_count = {}", case.points.len());
    let _ = writeln!(manifest, "has_reference = {}", case.reference.is_some());
    let obs: Vec<String> = case.observations.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(manifest, "observations = [{}]", obs.join(", "));
    let _ = writeln!(manifest);
    let _ = writeln!(manifest, "[case]");
    let _ = writeln!(manifest, "inlet_speed = {}", fmt_float(m.inlet_speed));
    let _ = writeln!(manifest, "inlet_angle = {}", fmt_float(m.inlet_angle));
    let _ = writeln!(manifest, "darcy = {}", fmt_float(m.darcy));
    let _ = writeln!(manifest, "forchheimer = {}", fmt_float(m.forchheimer));
    let _ = writeln!(manifest, "manufactured_forcing = {}", m.manufactured_forcing);
    let _ = writeln!(manifest, "provenance = \"{}\"", toml_escape(&m.provenance));
    let _ = writeln!(manifest);
    let _ = writeln!(manifest, "[fluid]");
    let _ = writeln!(manifest, "rho = {}", fmt_float(m.fluid.rho));
    let _ = writeln!(manifest, "mu = {}", fmt_float(m.fluid.mu));
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, manifest).map_err(|e| io_err(&manifest_path, e))?;

    let mut table = String::new();
    let _ = writeln!(table, "{}", header(case.dim, case.reference.is_some()));
    for (i, p) in case.points.iter().enumerate() {
        let mut fields: Vec<String> = Vec::new();
        fields.extend(p.coords.iter().map(|c| fmt_float(*c)));
        fields.push(p.chi.to_string());
        fields.push(fmt_float(p.sdf));
        fields.extend(p.boundary.onehot().iter().map(|b| format!("{}", *b as u8)));
        fields.push(fmt_float(p.darcy));
        fields.push(fmt_float(p.forchheimer));
        if let Some(reference) = &case.reference {
            let s = &reference[i];
            fields.extend(s.velocity.iter().map(|u| fmt_float(*u)));
            fields.push(fmt_float(s.pressure));
        }
        let _ = writeln!(table, "{}", fields.join(","));
    }
    let points_path = dir.join(POINTS_FILE);
    std::fs::write(&points_path, table).map_err(|e| io_err(&points_path, e))
}

/// Loads and validates a case from `dir`.
pub fn load_case(dir: &Path) -> Result<PointCloudCase, DatasetError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_text =
        std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let doc: ManifestDoc = toml::from_str(&manifest_text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(DatasetError::SchemaVersion {
            found: doc.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    if doc.dim != 2 && doc.dim != 3 {
        return Err(DatasetError::InvalidCase {
            reason: format!("dimension must be 2 or 3, got {}", doc.dim),
        });
    }

    let points_path = dir.join(POINTS_FILE);
    let table = std::fs::read_to_string(&points_path).map_err(|e| io_err(&points_path, e))?;
    let mut lines = table.lines();
    let expected_header = header(doc.dim, doc.has_reference);
    match lines.next() {
        Some(h) if h.trim() == expected_header => {}
        other => {
            return Err(DatasetError::MalformedTable {
                line: 1,
                reason: format!(
                    "expected header \"{expected_header}\", got \"{}\"",
                    other.unwrap_or("")
                ),
            })
        }
    }

    let n_cols = expected_header.split(',').count();
    let mut points = Vec::with_capacity(doc.point_count);
    let mut reference = doc.has_reference.then(|| Vec::with_capacity(doc.point_count));
    for (row, line) in lines.enumerate() {
        let line_no = row + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(DatasetError::MalformedTable {
                line: line_no,
                reason: format!("expected {n_cols} columns, got {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64, DatasetError> {
            s.trim().parse::<f64>().map_err(|_| DatasetError::MalformedTable {
                line: line_no,
                reason: format!("cannot parse {what} from \"{s}\""),
            })
        };
        let mut col = 0usize;
        let mut next = |what: &str| -> Result<f64, DatasetError> {
            let v = parse(fields[col], what)?;
            col += 1;
            Ok(v)
        };

        let mut coords = Vec::with_capacity(doc.dim);
        for _ in 0..doc.dim {
            coords.push(next("coordinate")?);
        }
        let chi_raw = next("chi")?;
        if chi_raw != 0.0 && chi_raw != 1.0 {
            return Err(DatasetError::MalformedTable {
                line: line_no,
                reason: format!("chi must be 0 or 1, got {chi_raw}"),
            });
        }
        let sdf = next("sdf")?;
        let onehot = [
            next("one-hot")?,
            next("one-hot")?,
            next("one-hot")?,
            next("one-hot")?,
        ];
        let boundary =
            BoundaryTag::from_onehot(onehot).ok_or_else(|| DatasetError::MalformedTable {
                line: line_no,
                reason: format!("invalid boundary one-hot {onehot:?}"),
            })?;
        let darcy = next("darcy")?;
        let forchheimer = next("forchheimer")?;
        points.push(PointRecord {
            coords,
            chi: chi_raw as u8,
            sdf,
            boundary,
            darcy,
            forchheimer,
        });
        if let Some(reference) = reference.as_mut() {
            let mut velocity = Vec::with_capacity(doc.dim);
            for _ in 0..doc.dim {
                velocity.push(next("velocity")?);
            }
            let pressure = next("pressure")?;
            reference.push(FlowSample { velocity, pressure });
        }
    }
    if points.len() != doc.point_count {
        return Err(DatasetError::TruncatedTable { expected: doc.point_count, got: points.len() });
    }

    let case = PointCloudCase {
        dim: doc.dim,
        points,
        reference,
        observations: doc.observations,
        meta: CaseMeta {
            inlet_speed: doc.case.inlet_speed,
            inlet_angle: doc.case.inlet_angle,
            fluid: FluidProperties { rho: doc.fluid.rho, mu: doc.fluid.mu },
            darcy: doc.case.darcy,
            forchheimer: doc.case.forchheimer,
            manufactured_forcing: doc.case.manufactured_forcing,
            provenance: doc.case.provenance,
        },
    };
    case.validate()?;
    Ok(case)
}

/// Writes normalization statistics next to a trained model so evaluation
/// can reproduce the exact feature scaling of the training run.
pub fn save_stats(stats: &NormalizationStats, path: &Path) -> Result<(), DatasetError> {
    let mut doc = String::new();
    let _ = writeln!(doc, "schema_version = {SCHEMA_VERSION}");
    let _ = writeln!(doc, "dim = {}", stats.dim());
    let feature = |doc: &mut String, section: &str, s: &FeatureStat| {
        let _ = writeln!(doc, "\n[[{section}]]");
        let _ = writeln!(doc, "mean = {}", fmt_float(s.mean));
        let _ = writeln!(doc, "std = {}", fmt_float(s.std));
        let _ = writeln!(doc, "constant = {}", s.constant);
    };
    for s in &stats.coords {
        feature(&mut doc, "coords", s);
    }
    for s in &stats.velocity {
        feature(&mut doc, "velocity", s);
    }
    let _ = writeln!(doc, "\n[pressure]");
    let _ = writeln!(doc, "mean = {}", fmt_float(stats.pressure.mean));
    let _ = writeln!(doc, "std = {}", fmt_float(stats.pressure.std));
    let _ = writeln!(doc, "constant = {}", stats.pressure.constant);
    let range = |doc: &mut String, section: &str, r: &RangeStat| {
        let _ = writeln!(doc, "\n[{section}]");
        let _ = writeln!(doc, "min = {}", fmt_float(r.min));
        let _ = writeln!(doc, "max = {}", fmt_float(r.max));
        let _ = writeln!(doc, "constant = {}", r.constant);
    };
    range(&mut doc, "darcy", &stats.darcy);
    range(&mut doc, "forchheimer", &stats.forchheimer);
    std::fs::write(path, doc).map_err(|e| io_err(path, e))
}

/// Reads statistics written by [`save_stats`]; the round trip is exact.
pub fn load_stats(path: &Path) -> Result<NormalizationStats, DatasetError> {
    #[derive(Deserialize)]
    struct FeatureDoc {
        mean: f64,
        std: f64,
        constant: bool,
    }
    #[derive(Deserialize)]
    struct RangeDoc {
        min: f64,
        max: f64,
        constant: bool,
    }
    #[derive(Deserialize)]
    struct StatsDoc {
        schema_version: u32,
        dim: usize,
        coords: Vec<FeatureDoc>,
        velocity: Vec<FeatureDoc>,
        pressure: FeatureDoc,
        darcy: RangeDoc,
        forchheimer: RangeDoc,
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let doc: StatsDoc = toml::from_str(&text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(DatasetError::SchemaVersion {
            found: doc.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let feature = |f: &FeatureDoc| FeatureStat { mean: f.mean, std: f.std, constant: f.constant };
    let stats = NormalizationStats {
        coords: doc.coords.iter().map(feature).collect(),
        velocity: doc.velocity.iter().map(feature).collect(),
        pressure: feature(&doc.pressure),
        darcy: RangeStat { min: doc.darcy.min, max: doc.darcy.max, constant: doc.darcy.constant },
        forchheimer: RangeStat {
            min: doc.forchheimer.min,
            max: doc.forchheimer.max,
            constant: doc.forchheimer.constant,
        },
    };
    if stats.coords.len() != doc.dim || stats.velocity.len() != doc.dim {
        return Err(DatasetError::InvalidCase {
            reason: format!(
                "statistics claim dimension {} but carry {} coordinate and {} velocity entries",
                doc.dim,
                stats.coords.len(),
                stats.velocity.len()
            ),
        });
    }
    Ok(stats)
}
