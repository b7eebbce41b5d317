//! The training loop: shuffled minibatches, Adam, validation-tracked
//! checkpoints, and resumable on-disk state.
//!
//! A checkpoint directory holds the model (manifest and parameter table),
//! the optimizer moments, the trainer manifest with the generator word
//! position, and the loss history so far. Resuming restores all four and
//! continues the uninterrupted trajectory bitwise: the generator is only
//! consumed by epoch shuffles and dropout masks, both of which replay in
//! the same order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

use crate::ad::{NodeId, Tape};
use crate::dataset::{
    compute_normalization, compute_normalization_for_split, split_dataset, DatasetSplit,
    NormalizationStats, PointCloudCase,
};
use crate::models::{
    load_checkpoint, pigano_derivatives, pipn_derivatives, record_pigano, record_pipn,
    sample_dropout_masks, save_checkpoint, ModelConfig, ModelParameters,
};
use crate::textio::{fmt_float, toml_escape};

use super::adam::{adam_step, AdamState};
use super::loss::{compute_loss, record_loss, PreparedCase};
use super::{lr_at, LossBreakdown, TrainConfig, TrainError};

const TRAINER_SCHEMA_VERSION: u32 = 1;
const TRAINER_FILE: &str = "trainer.toml";
const OPTIMIZER_FILE: &str = "optimizer.csv";
const HISTORY_FILE: &str = "history.csv";
const OPTIMIZER_HEADER: &str = "tensor,row,col,m,v";
const HISTORY_HEADER: &str = "epoch,lr,l_m,l_c,l_b,l_d,total";
const BEST_DIR: &str = "best";

/// Identified cases with their split and normalization statistics.
///
/// Construction validates every case, checks that the split covers the
/// case set exactly, and pins the statistics, so the loop itself can trust
/// the data.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    cases: Vec<(String, PointCloudCase)>,
    split: DatasetSplit,
    stats: NormalizationStats,
}

impl TrainingSet {
    /// Wraps cases with a caller-supplied split and statistics.
    pub fn with_stats(
        cases: Vec<(String, PointCloudCase)>,
        split: DatasetSplit,
        stats: NormalizationStats,
    ) -> Result<Self, TrainError> {
        if split.train.is_empty() {
            return Err(TrainError::Config {
                reason: "the training split has no cases".to_string(),
            });
        }
        for (i, (id, _)) in cases.iter().enumerate() {
            if cases[..i].iter().any(|(other, _)| other == id) {
                return Err(TrainError::Config {
                    reason: format!("duplicate case identifier {id}"),
                });
            }
        }
        let mut seen = 0usize;
        for (part, ids) in
            [("train", &split.train), ("validation", &split.validation), ("test", &split.test)]
        {
            for id in ids {
                if !cases.iter().any(|(cid, _)| cid == id) {
                    return Err(TrainError::Config {
                        reason: format!("{part} split names unknown case {id}"),
                    });
                }
                seen += 1;
            }
        }
        let mut all: Vec<&String> = split
            .train
            .iter()
            .chain(&split.validation)
            .chain(&split.test)
            .collect();
        all.sort();
        all.dedup();
        if all.len() != seen {
            return Err(TrainError::Config {
                reason: "split parts assign some case more than once".to_string(),
            });
        }
        if all.len() != cases.len() {
            return Err(TrainError::Config {
                reason: format!(
                    "split covers {} cases but {} were supplied",
                    all.len(),
                    cases.len()
                ),
            });
        }
        for (id, case) in &cases {
            case.validate().map_err(|e| TrainError::Config {
                reason: format!("case {id}: {e}"),
            })?;
            if case.dim != stats.dim() {
                return Err(TrainError::Config {
                    reason: format!(
                        "case {id} has dimension {} but the statistics expect {}",
                        case.dim,
                        stats.dim()
                    ),
                });
            }
        }
        Ok(TrainingSet { cases, split, stats })
    }

    /// Computes normalization statistics from the training split.
    pub fn with_split(
        cases: Vec<(String, PointCloudCase)>,
        split: DatasetSplit,
    ) -> Result<Self, TrainError> {
        let train_cases: Vec<(&str, &PointCloudCase)> = split
            .train
            .iter()
            .filter_map(|id| {
                cases.iter().find(|(cid, _)| cid == id).map(|(cid, c)| (cid.as_str(), c))
            })
            .collect();
        if train_cases.len() != split.train.len() {
            return Err(TrainError::Config {
                reason: "train split names unknown case".to_string(),
            });
        }
        let stats = compute_normalization_for_split(&train_cases, &split)?;
        TrainingSet::with_stats(cases, split, stats)
    }

    /// Splits the cases deterministically, then computes statistics.
    pub fn from_cases(
        cases: Vec<(String, PointCloudCase)>,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let ids: Vec<String> = cases.iter().map(|(id, _)| id.clone()).collect();
        let split = split_dataset(&ids, seed)?;
        TrainingSet::with_split(cases, split)
    }

    /// A single training case with no held-out splits.
    pub fn single(id: &str, case: PointCloudCase) -> Result<Self, TrainError> {
        let stats = compute_normalization(&[&case])?;
        let split = DatasetSplit {
            train: vec![id.to_string()],
            validation: vec![],
            test: vec![],
        };
        TrainingSet::with_stats(vec![(id.to_string(), case)], split, stats)
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    pub fn split(&self) -> &DatasetSplit {
        &self.split
    }

    pub fn cases(&self) -> &[(String, PointCloudCase)] {
        &self.cases
    }

    pub fn case(&self, id: &str) -> Option<&PointCloudCase> {
        self.cases.iter().find(|(cid, _)| cid == id).map(|(_, c)| c)
    }
}

/// Where the loop starts: fresh parameters or a checkpoint directory.
#[derive(Clone, Debug)]
pub enum TrainStart {
    Fresh(ModelParameters),
    Resume(PathBuf),
}

/// One epoch's learning rate and mean training loss over the cases seen.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    /// One-based epoch number.
    pub epoch: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Final state of a finished run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub params: ModelParameters,
    /// Parameters at the lowest validation loss; the final parameters when
    /// no validation cases exist.
    pub best_params: ModelParameters,
    /// One-based epoch of `best_params`.
    pub best_epoch: u64,
    /// Mean validation loss of `best_params`, when measured.
    pub best_validation: Option<f64>,
    /// One row per completed epoch.
    pub history: Vec<HistoryRow>,
}

/// Runs the loop from `start` over the training split.
///
/// With an output directory, checkpoints land in `epoch-NNNNN`
/// subdirectories at the configured cadence, the last epoch writes
/// `final`, any validation improvement refreshes `best`, and the loss
/// history lands at the root. Without one the run stays in memory.
pub fn train(
    start: TrainStart,
    data: &TrainingSet,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let (mut params, mut adam, mut rng, mut history, start_epoch, mut best) = match start {
        TrainStart::Fresh(params) => {
            params.config.validate()?;
            let rng = ChaCha20Rng::seed_from_u64(config.seed);
            (params, None, rng, Vec::new(), 0u64, None)
        }
        TrainStart::Resume(dir) => {
            let (params, adam, rng, history, done, best) = resume_state(&dir, config)?;
            (params, Some(adam), rng, history, done, best)
        }
    };
    let mut adam = match adam.take() {
        Some(state) => state,
        None => AdamState::new(&params),
    };
    if params.config.dim() != data.stats().dim() {
        return Err(TrainError::Config {
            reason: format!(
                "model dimension {} does not match the data dimension {}",
                params.config.dim(),
                data.stats().dim()
            ),
        });
    }
    if params.config.dropout() != config.dropout {
        return Err(TrainError::Config {
            reason: format!(
                "configured dropout {} does not match the model's rate {}",
                config.dropout,
                params.config.dropout()
            ),
        });
    }
    let epochs = config.epochs as u64;
    if start_epoch >= epochs {
        return Err(TrainError::Config {
            reason: format!(
                "checkpoint already covers {start_epoch} epochs, configuration asks for {epochs}"
            ),
        });
    }

    // Branch seeds derive from the case's position in the split so a
    // resumed run selects the same records.
    let branch_records = match &params.config {
        ModelConfig::Pigano(c) => Some(c.branch_points),
        ModelConfig::Pipn(_) => None,
    };
    let golden = 0x9E37_79B9_7F4A_7C15u64;
    let prepare = |id: &String, ordinal: usize| -> Result<PreparedCase, TrainError> {
        let case = data.case(id).expect("split validated against the case set");
        if config.weights.lambda_d > 0.0 && case.observations.is_empty() {
            return Err(TrainError::Config {
                reason: format!(
                    "data weight is positive but case {id} has no observation points"
                ),
            });
        }
        let branch = branch_records
            .map(|m| (m, config.seed ^ (ordinal as u64 + 1).wrapping_mul(golden)));
        PreparedCase::build(id, case, data.stats(), branch)
    };
    let train_cases: Vec<PreparedCase> = data
        .split
        .train
        .iter()
        .enumerate()
        .map(|(i, id)| prepare(id, i))
        .collect::<Result<_, _>>()?;
    let val_cases: Vec<PreparedCase> = data
        .split
        .validation
        .iter()
        .enumerate()
        .map(|(i, id)| prepare(id, data.split.train.len() + i))
        .collect::<Result<_, _>>()?;

    let batch = match &params.config {
        ModelConfig::Pipn(_) => 1,
        ModelConfig::Pigano(_) => config.minibatch,
    };

    for epoch in start_epoch..epochs {
        let lr = lr_at(epoch, config.base_lr, config.decay);
        let mut order: Vec<usize> = (0..train_cases.len()).collect();
        order.shuffle(&mut rng);

        let mut sums = [0.0f64; 4];
        for (minibatch, chunk) in order.chunks(batch).enumerate() {
            let mut grads = {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape, true);
                let mut case_totals: Vec<NodeId> = Vec::with_capacity(chunk.len());
                for &ci in chunk {
                    let prepared = &train_cases[ci];
                    let masks = if config.dropout > 0.0 {
                        Some(sample_dropout_masks(&params.config, prepared.points(), &mut rng))
                    } else {
                        None
                    };
                    let output = match &params.config {
                        ModelConfig::Pipn(_) => {
                            record_pipn(
                                &mut tape,
                                &bound,
                                prepared.features(),
                                true,
                                masks.as_deref(),
                            )?
                            .output
                        }
                        ModelConfig::Pigano(_) => {
                            record_pigano(
                                &mut tape,
                                &bound,
                                prepared.coords(),
                                prepared.features(),
                                prepared.branch().expect("prepared with branch records"),
                                true,
                                masks.as_deref(),
                            )?
                            .output
                        }
                    };
                    let recorded = record_loss(&mut tape, &output, prepared, &config.weights)?;
                    if !recorded.breakdown.total.is_finite() {
                        return Err(TrainError::NonFiniteLoss { epoch: epoch + 1, minibatch });
                    }
                    sums[0] += recorded.breakdown.l_m;
                    sums[1] += recorded.breakdown.l_c;
                    sums[2] += recorded.breakdown.l_b;
                    sums[3] += recorded.breakdown.l_d;
                    case_totals.push(recorded.total);
                }
                let objective = mean_nodes(&mut tape, &case_totals);
                tape.backward(objective)?
            };
            if let Some(limit) = config.clip_norm {
                let norm = grads.norm();
                if norm > limit {
                    grads.scale(limit / norm);
                }
            }
            adam_step(&mut params, &grads, &mut adam, lr)?;
        }

        let n = train_cases.len() as f64;
        let loss = LossBreakdown::from_parts(
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            sums[3] / n,
            &config.weights,
        );
        history.push(HistoryRow { epoch: epoch + 1, lr, loss });

        let cadence = config.checkpoint_every as u64;
        let at_cadence = cadence > 0 && (epoch + 1) % cadence == 0;
        let at_end = epoch + 1 == epochs;
        if at_cadence || at_end {
            if let Some(score) = validation_loss(&params, &val_cases, data, config)? {
                let improved = match &best {
                    Some((_, _, prev)) => score < *prev,
                    None => true,
                };
                if improved {
                    best = Some((params.clone(), epoch + 1, score));
                    if let Some(root) = out_dir {
                        save_state(
                            &root.join(BEST_DIR),
                            &params,
                            &adam,
                            epoch + 1,
                            &rng,
                            config.seed,
                            &history,
                            Some((epoch + 1, score)),
                        )?;
                    }
                }
            }
            if let Some(root) = out_dir {
                let name = if at_end {
                    "final".to_string()
                } else {
                    format!("epoch-{:05}", epoch + 1)
                };
                let best_note = best.as_ref().map(|(_, e, s)| (*e, *s));
                save_state(
                    &root.join(name),
                    &params,
                    &adam,
                    epoch + 1,
                    &rng,
                    config.seed,
                    &history,
                    best_note,
                )?;
            }
        }
    }

    if let Some(root) = out_dir {
        write_file(&root.join(HISTORY_FILE), &history_text(&history))?;
    }
    let (best_params, best_epoch, best_validation) = match best {
        Some((p, e, s)) => (p, e, Some(s)),
        None => (params.clone(), epochs, None),
    };
    Ok(TrainOutcome { params, best_params, best_epoch, best_validation, history })
}

/// Mean validation loss in evaluation mode, `None` without validation
/// cases. Consumes no randomness, so checkpoint replay stays exact.
fn validation_loss(
    params: &ModelParameters,
    prepared: &[PreparedCase],
    data: &TrainingSet,
    config: &TrainConfig,
) -> Result<Option<f64>, TrainError> {
    if prepared.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for pc in prepared {
        let case = data.case(pc.id()).expect("split validated against the case set");
        let derivs = match &params.config {
            ModelConfig::Pipn(_) => pipn_derivatives(params, pc.features())?,
            ModelConfig::Pigano(_) => pigano_derivatives(
                params,
                pc.coords(),
                pc.features(),
                pc.branch().expect("prepared with branch records"),
            )?,
        };
        sum += compute_loss(&derivs, case, data.stats(), &config.weights)?.total;
    }
    Ok(Some(sum / prepared.len() as f64))
}

fn mean_nodes(tape: &mut Tape<f64>, nodes: &[NodeId]) -> NodeId {
    let mut acc = nodes[0];
    for &node in &nodes[1..] {
        acc = tape.add(acc, node);
    }
    tape.scale(acc, 1.0 / nodes.len() as f64)
}

/// Writes one complete checkpoint: model, optimizer moments, trainer
/// manifest with the generator position, and the history so far.
#[allow(clippy::too_many_arguments)]
fn save_state(
    dir: &Path,
    params: &ModelParameters,
    adam: &AdamState,
    epochs_done: u64,
    rng: &ChaCha20Rng,
    seed: u64,
    history: &[HistoryRow],
    best: Option<(u64, f64)>,
) -> Result<(), TrainError> {
    save_checkpoint(dir, params, epochs_done)?;

    let mut text = String::from(OPTIMIZER_HEADER);
    text.push('\n');
    for (t, (m, v)) in adam.m.iter().zip(&adam.v).enumerate() {
        for ((r, c), value) in m.indexed_iter() {
            let _ = writeln!(
                text,
                "{t},{r},{c},{},{}",
                fmt_float(*value),
                fmt_float(v[[r, c]])
            );
        }
    }
    write_file(&dir.join(OPTIMIZER_FILE), &text)?;

    let mut doc = String::new();
    let _ = writeln!(doc, "schema_version = {TRAINER_SCHEMA_VERSION}");
    let _ = writeln!(doc, "epochs_done = {epochs_done}");
    let _ = writeln!(doc, "adam_steps = {}", adam.step_count());
    let _ = writeln!(doc, "train_seed = {seed}");
    let _ = writeln!(doc, "rng_word_pos = \"{}\"", rng.get_word_pos());
    if let Some((epoch, score)) = best {
        let _ = writeln!(doc, "\n[best]");
        let _ = writeln!(doc, "epoch = {epoch}");
        let _ = writeln!(doc, "validation = \"{}\"", toml_escape(&fmt_float(score)));
    }
    write_file(&dir.join(TRAINER_FILE), &doc)?;
    write_file(&dir.join(HISTORY_FILE), &history_text(history))?;
    Ok(())
}

#[derive(Deserialize)]
struct TrainerDoc {
    schema_version: u32,
    epochs_done: u64,
    adam_steps: u64,
    train_seed: u64,
    rng_word_pos: String,
    best: Option<BestDoc>,
}

#[derive(Deserialize)]
struct BestDoc {
    epoch: u64,
    validation: String,
}

type ResumeState = (
    ModelParameters,
    AdamState,
    ChaCha20Rng,
    Vec<HistoryRow>,
    u64,
    Option<(ModelParameters, u64, f64)>,
);

/// Restores a checkpoint directory for continuation under `config`.
fn resume_state(dir: &Path, config: &TrainConfig) -> Result<ResumeState, TrainError> {
    let (params, model_epoch) = load_checkpoint(dir)?;
    let trainer_path = dir.join(TRAINER_FILE);
    let text = read_file(&trainer_path)?;
    let doc: TrainerDoc = toml::from_str(&text)
        .map_err(|e| state_err(&trainer_path, format!("not valid TOML: {e}")))?;
    if doc.schema_version != TRAINER_SCHEMA_VERSION {
        return Err(state_err(
            &trainer_path,
            format!(
                "schema version {} unsupported, expected {TRAINER_SCHEMA_VERSION}",
                doc.schema_version
            ),
        ));
    }
    if doc.epochs_done != model_epoch {
        return Err(state_err(
            &trainer_path,
            format!(
                "trainer covers {} epochs but the model checkpoint says {model_epoch}",
                doc.epochs_done
            ),
        ));
    }
    if doc.train_seed != config.seed {
        return Err(TrainError::Config {
            reason: format!(
                "checkpoint was trained with seed {} but the configuration has {}",
                doc.train_seed, config.seed
            ),
        });
    }
    let word_pos: u128 = doc
        .rng_word_pos
        .parse()
        .map_err(|_| state_err(&trainer_path, "rng_word_pos is not an integer".to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_word_pos(word_pos);

    let adam = load_adam(&dir.join(OPTIMIZER_FILE), &params, doc.adam_steps)?;
    let history = read_history(&dir.join(HISTORY_FILE))?;
    if history.len() as u64 != doc.epochs_done {
        return Err(state_err(
            &dir.join(HISTORY_FILE),
            format!(
                "history holds {} rows for {} completed epochs",
                history.len(),
                doc.epochs_done
            ),
        ));
    }

    // The best checkpoint lives beside this one; restore it when present
    // so continued runs keep comparing against it.
    let best = match doc.best {
        Some(note) => {
            let score: f64 = note.validation.parse().map_err(|_| {
                state_err(&trainer_path, "best validation is not a number".to_string())
            })?;
            let sibling = dir.parent().map(|p| p.join(BEST_DIR));
            match sibling {
                Some(path) if path.is_dir() => {
                    let (best_params, _) = load_checkpoint(&path)?;
                    Some((best_params, note.epoch, score))
                }
                _ => None,
            }
        }
        None => None,
    };
    Ok((params, adam, rng, history, doc.epochs_done, best))
}

/// Reads the optimizer moments back into the parameter layout.
fn load_adam(
    path: &Path,
    params: &ModelParameters,
    steps: u64,
) -> Result<AdamState, TrainError> {
    let text = read_file(path)?;
    let mut state = AdamState::new(params);
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == OPTIMIZER_HEADER => {}
        _ => return Err(state_err(path, format!("expected header {OPTIMIZER_HEADER}"))),
    }
    let mut filled = 0usize;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| state_err(path, format!("line {}: {reason}", i + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", fields.len())));
        }
        let tensor: usize =
            fields[0].parse().map_err(|_| bad("tensor index is not an integer".into()))?;
        let row: usize =
            fields[1].parse().map_err(|_| bad("row is not an integer".into()))?;
        let col: usize =
            fields[2].parse().map_err(|_| bad("column is not an integer".into()))?;
        let m: f64 = fields[3].parse().map_err(|_| bad("first moment is not a number".into()))?;
        let v: f64 = fields[4].parse().map_err(|_| bad("second moment is not a number".into()))?;
        if tensor >= state.m.len() {
            return Err(bad(format!("tensor index {tensor} out of range")));
        }
        let shape = state.m[tensor].dim();
        if row >= shape.0 || col >= shape.1 {
            return Err(bad(format!("entry ({row}, {col}) outside shape {shape:?}")));
        }
        state.m[tensor][[row, col]] = m;
        state.v[tensor][[row, col]] = v;
        filled += 1;
    }
    let expected = params.count();
    if filled != expected {
        return Err(state_err(
            path,
            format!("{filled} moment entries for {expected} parameters"),
        ));
    }
    state.step = steps;
    Ok(state)
}

fn history_text(history: &[HistoryRow]) -> String {
    let mut text = String::from(HISTORY_HEADER);
    text.push('\n');
    for row in history {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            row.epoch,
            fmt_float(row.lr),
            fmt_float(row.loss.l_m),
            fmt_float(row.loss.l_c),
            fmt_float(row.loss.l_b),
            fmt_float(row.loss.l_d),
            fmt_float(row.loss.total),
        );
    }
    text
}

/// Reads a loss-history table written by [`train`].
pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>, TrainError> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == HISTORY_HEADER => {}
        _ => return Err(state_err(path, format!("expected header {HISTORY_HEADER}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| state_err(path, format!("line {}: {reason}", i + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", fields.len())));
        }
        let epoch: u64 =
            fields[0].parse().map_err(|_| bad("epoch is not an integer".into()))?;
        let mut numbers = [0.0f64; 6];
        for (slot, field) in numbers.iter_mut().zip(&fields[1..]) {
            *slot = field.parse().map_err(|_| bad(format!("{field} is not a number")))?;
        }
        rows.push(HistoryRow {
            epoch,
            lr: numbers[0],
            loss: LossBreakdown {
                l_m: numbers[1],
                l_c: numbers[2],
                l_b: numbers[3],
                l_d: numbers[4],
                total: numbers[5],
            },
        });
    }
    Ok(rows)
}

fn write_file(path: &Path, text: &str) -> Result<(), TrainError> {
    std::fs::write(path, text).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, TrainError> {
    std::fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn state_err(path: &Path, reason: String) -> TrainError {
    TrainError::State { path: path.to_path_buf(), reason }
}
