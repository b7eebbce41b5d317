//! Checkpoint directory format: `model.toml` plus `parameters.csv`.
//!
//! The manifest carries the architecture, the initialization seed, and the
//! epoch the parameters were saved at. The parameter table is flat text,
//! one scalar per line in registration order, written with 17 significant
//! digits so a load reproduces the tensors bitwise.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{
    expected_tensor_layout, ModelConfig, ModelError, ModelParameters, NamedTensor, PiganoConfig,
    PipnConfig,
};
use crate::ad::Activation;
use crate::textio::fmt_float;
use ndarray::Array2;

/// Version stamp written into every checkpoint manifest.
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

const MANIFEST_FILE: &str = "model.toml";
const PARAMETERS_FILE: &str = "parameters.csv";

#[derive(Deserialize)]
struct CheckpointDoc {
    schema_version: u32,
    kind: String,
    seed: u64,
    epoch: u64,
    dim: usize,
    activation: String,
    dropout: f64,
    pipn: Option<PipnSection>,
    pigano: Option<PiganoSection>,
}

#[derive(Deserialize)]
struct PipnSection {
    local_widths: Vec<usize>,
    global_widths: Vec<usize>,
    decoder_widths: Vec<usize>,
}

#[derive(Deserialize)]
struct PiganoSection {
    geometry_widths: Vec<usize>,
    branch_widths: Vec<usize>,
    branch_points: usize,
    trunk_widths: Vec<usize>,
    head_widths: Vec<usize>,
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io { path: path.to_path_buf(), source }
}

fn widths(list: &[usize]) -> String {
    let inner: Vec<String> = list.iter().map(usize::to_string).collect();
    format!("[{}]", inner.join(", "))
}

/// Writes `model.toml` and `parameters.csv` into `dir`, creating it first.
pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParameters,
    epoch: u64,
) -> Result<(), ModelError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "schema_version = {CHECKPOINT_SCHEMA_VERSION}");
    let _ = writeln!(manifest, "kind = \"{}\"", params.config.kind());
    let _ = writeln!(manifest, "seed = {}", params.seed);
    let _ = writeln!(manifest, "epoch = {epoch}");
    let _ = writeln!(manifest, "dim = {}", params.config.dim());
    let _ = writeln!(manifest, "activation = \"{}\"", params.config.activation().name());
    let _ = writeln!(manifest, "dropout = {}", fmt_float(params.config.dropout()));
    let _ = writeln!(manifest);
    match &params.config {
        ModelConfig::Pipn(c) => {
            let _ = writeln!(manifest, "[pipn]");
            let _ = writeln!(manifest, "local_widths = {}", widths(&c.local_widths));
            let _ = writeln!(manifest, "global_widths = {}", widths(&c.global_widths));
            let _ = writeln!(manifest, "decoder_widths = {}", widths(&c.decoder_widths));
        }
        ModelConfig::Pigano(c) => {
            let _ = writeln!(manifest, "[pigano]");
            let _ = writeln!(manifest, "geometry_widths = {}", widths(&c.geometry_widths));
            let _ = writeln!(manifest, "branch_widths = {}", widths(&c.branch_widths));
            let _ = writeln!(manifest, "branch_points = {}", c.branch_points);
            let _ = writeln!(manifest, "trunk_widths = {}", widths(&c.trunk_widths));
            let _ = writeln!(manifest, "head_widths = {}", widths(&c.head_widths));
        }
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, manifest).map_err(|e| io_err(&manifest_path, e))?;

    let mut table = String::from("tensor,row,col,value\n");
    for t in params.tensors() {
        for ((r, c), v) in t.values.indexed_iter() {
            let _ = writeln!(table, "{},{},{},{}", t.name, r, c, fmt_float(*v));
        }
    }
    let table_path = dir.join(PARAMETERS_FILE);
    std::fs::write(&table_path, table).map_err(|e| io_err(&table_path, e))
}

/// Loads a checkpoint directory back into parameters and the saved epoch.
pub fn load_checkpoint(dir: &Path) -> Result<(ModelParameters, u64), ModelError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let doc: CheckpointDoc = toml::from_str(&text)?;
    if doc.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(ModelError::SchemaVersion {
            found: doc.schema_version,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }
    let activation = Activation::from_name(&doc.activation)
        .map_err(|e| ModelError::InvalidConfig { reason: e.to_string() })?;
    let config = match doc.kind.as_str() {
        "pipn" => {
            let section = doc.pipn.ok_or_else(|| ModelError::InvalidConfig {
                reason: "kind is pipn but the [pipn] table is missing".to_string(),
            })?;
            ModelConfig::Pipn(PipnConfig {
                dim: doc.dim,
                local_widths: section.local_widths,
                global_widths: section.global_widths,
                decoder_widths: section.decoder_widths,
                activation,
                dropout: doc.dropout,
            })
        }
        "pigano" => {
            let section = doc.pigano.ok_or_else(|| ModelError::InvalidConfig {
                reason: "kind is pigano but the [pigano] table is missing".to_string(),
            })?;
            ModelConfig::Pigano(PiganoConfig {
                dim: doc.dim,
                geometry_widths: section.geometry_widths,
                branch_widths: section.branch_widths,
                branch_points: section.branch_points,
                trunk_widths: section.trunk_widths,
                head_widths: section.head_widths,
                activation,
                dropout: doc.dropout,
            })
        }
        other => {
            return Err(ModelError::InvalidConfig {
                reason: format!("unknown model kind \"{other}\""),
            })
        }
    };
    config.validate()?;

    let table_path = dir.join(PARAMETERS_FILE);
    let table = std::fs::read_to_string(&table_path).map_err(|e| io_err(&table_path, e))?;
    let tensors = read_parameter_table(&table, &config)?;
    let params = ModelParameters::from_tensors(config, doc.seed, tensors)?;
    Ok((params, doc.epoch))
}

/// Parses the flat table, insisting on the exact canonical entry order so
/// corrupted or reordered files are caught with a line number.
fn read_parameter_table(
    table: &str,
    config: &ModelConfig,
) -> Result<Vec<NamedTensor>, ModelError> {
    let mut lines = table.lines().enumerate();
    let bad = |line: usize, reason: String| ModelError::MalformedTable { line: line + 1, reason };
    match lines.next() {
        Some((_, "tensor,row,col,value")) => {}
        Some((i, other)) => return Err(bad(i, format!("unexpected header \"{other}\""))),
        None => return Err(bad(0, "empty parameter table".to_string())),
    }

    let mut tensors = Vec::new();
    for (name, (rows, cols)) in expected_tensor_layout(config) {
        let mut values = Array2::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                let (i, line) = lines.next().ok_or_else(|| {
                    ModelError::ParameterMismatch {
                        reason: format!("table ends before {name} ({r},{c})"),
                    }
                })?;
                let mut fields = line.splitn(4, ',');
                let mut field = |what: &str| {
                    fields
                        .next()
                        .ok_or_else(|| bad(i, format!("missing {what} field")))
                };
                let tensor = field("tensor")?;
                let row = field("row")?;
                let col = field("col")?;
                let value = field("value")?;
                if tensor != name {
                    return Err(bad(i, format!("expected tensor {name}, found {tensor}")));
                }
                let row: usize =
                    row.parse().map_err(|_| bad(i, format!("bad row index \"{row}\"")))?;
                let col: usize =
                    col.parse().map_err(|_| bad(i, format!("bad column index \"{col}\"")))?;
                if (row, col) != (r, c) {
                    return Err(bad(i, format!("expected entry ({r},{c}), found ({row},{col})")));
                }
                values[[r, c]] = value
                    .parse()
                    .map_err(|_| bad(i, format!("bad value \"{value}\"")))?;
            }
        }
        tensors.push(NamedTensor { name, values });
    }
    if let Some((i, line)) = lines.next() {
        return Err(bad(i, format!("unexpected trailing data \"{line}\"")));
    }
    Ok(tensors)
}
