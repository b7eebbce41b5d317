//! The two point-cloud architectures and their parameter handling.
//!
//! PIPN runs a shared per-point encoder, max-pools a global feature over the
//! cloud, and decodes each point against that feature. PI-GANO splits the
//! conditioning into a geometry encoder (pooled over the case cloud) and a
//! boundary-condition branch (pooled over a fixed set of boundary records),
//! combines both latents with a per-point trunk embedding, and maps the
//! result through one shared output stack. Layer widths live in the configs;
//! nothing is hard-coded. Parameters are stored flat, in layer order, so
//! tape gradients line up by index.

mod branch;
mod io;
mod pigano;
mod pipn;

pub use branch::{normalize_branch, select_branch_points, BranchInput, BranchRecord};
pub use io::{load_checkpoint, save_checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use pigano::{pigano_derivatives, pigano_forward, record_pigano, PiganoRecording};
pub use pipn::{pipn_derivatives, pipn_forward, record_pipn, CloudDerivatives, PipnRecording};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::ad::{Activation, DualRows, NodeId, ParamId, Tape};

/// Errors from model configuration, evaluation, and checkpoint files.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("point cloud has {got} points; max-pooling needs at least 2")]
    TooFewPoints { got: usize },
    #[error("{context} must have {expected} columns, got {got}")]
    FeatureShape { context: &'static str, expected: usize, got: usize },
    #[error("{context} must not be empty")]
    EmptyCloud { context: &'static str },
    #[error("parameters were built for a {got} model, not {expected}")]
    WrongArchitecture { expected: &'static str, got: &'static str },
    #[error("case has no {tag} points; every boundary type must be present")]
    MissingBoundary { tag: &'static str },
    #[error("branch wants {requested} records but the case has {available} boundary points")]
    BranchTooLarge { requested: usize, available: usize },
    #[error("branch carries {got} records, the model expects {expected}")]
    BranchCount { expected: usize, got: usize },
    #[error("invalid branch record {index}: {reason}")]
    InvalidBranchRecord { index: usize, reason: String },
    #[error("dropout masks malformed: {reason}")]
    DropoutMasks { reason: String },
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint manifest: {0}")]
    Manifest(#[from] toml::de::Error),
    #[error("unsupported checkpoint schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("malformed parameter table at line {line}: {reason}")]
    MalformedTable { line: usize, reason: String },
    #[error("checkpoint does not match its configuration: {reason}")]
    ParameterMismatch { reason: String },
}

/// Configuration of the PointNet-style model: per-point local encoder,
/// global encoder feeding the max pool, and a decoder over the concatenated
/// local and global features. The output layer is always `dim + 1` wide
/// (velocity components plus pressure) and is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct PipnConfig {
    /// Spatial dimension, 2 or 3.
    pub dim: usize,
    /// Hidden widths of the shared per-point encoder.
    pub local_widths: Vec<usize>,
    /// Widths of the global encoder; the last entry is the pooled global
    /// feature size.
    pub global_widths: Vec<usize>,
    /// Hidden widths of the decoder; may be empty for a linear head.
    pub decoder_widths: Vec<usize>,
    pub activation: Activation,
    /// Probability of dropping a unit in the last two decoder hidden
    /// layers during training.
    pub dropout: f64,
}

impl PipnConfig {
    /// The published layer plan: local (64, 64), global (64, 128, 1024)
    /// with a 1024-wide pooled feature, decoder (512, 256, 128).
    pub fn paper(dim: usize, activation: Activation, dropout: f64) -> Self {
        PipnConfig {
            dim,
            local_widths: vec![64, 64],
            global_widths: vec![64, 128, 1024],
            decoder_widths: vec![512, 256, 128],
            activation,
            dropout,
        }
    }

    /// Width of one input row: coordinates, signed distance, boundary
    /// one-hot.
    pub fn feature_width(&self) -> usize {
        self.dim + 5
    }

    /// Size of the max-pooled global feature.
    pub fn global_feature_size(&self) -> usize {
        *self.global_widths.last().expect("validated non-empty")
    }

    /// Per-point features carried past the local encoder: its output plus
    /// the re-appended signed distance and one-hot columns.
    fn local_concat_width(&self) -> usize {
        self.local_widths.last().expect("validated non-empty") + 5
    }

    fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| Err(ModelError::InvalidConfig { reason });
        if self.dim != 2 && self.dim != 3 {
            return fail(format!("dimension must be 2 or 3, got {}", self.dim));
        }
        if self.local_widths.is_empty() || self.global_widths.is_empty() {
            return fail("local and global encoders need at least one layer".to_string());
        }
        if let Some(w) = all_widths_positive(&[&self.local_widths, &self.global_widths, &self.decoder_widths]) {
            return fail(format!("layer width must be positive, got {w}"));
        }
        validate_dropout(self.dropout)
    }

    fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::new();
        push_stack(&mut shapes, "local", self.feature_width(), &self.local_widths);
        push_stack(&mut shapes, "global", self.local_concat_width(), &self.global_widths);
        let decoder_in = self.local_concat_width() + self.global_feature_size();
        let last = push_stack(&mut shapes, "decoder", decoder_in, &self.decoder_widths);
        shapes.push(LayerShape { name: "output".to_string(), fan_in: last, fan_out: self.dim + 1 });
        shapes
    }
}

/// Configuration of the geometry-aware operator: geometry encoder pooled
/// over the case cloud, boundary-condition branch pooled over `branch_points`
/// records, per-point trunk, and a shared output stack over the concatenated
/// embeddings. The `dim + 1` output layer is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct PiganoConfig {
    /// Spatial dimension, 2 or 3.
    pub dim: usize,
    /// Widths of the shared geometry encoder; the last entry is the pooled
    /// geometry latent size.
    pub geometry_widths: Vec<usize>,
    /// Widths of the shared branch encoder; the last entry is the pooled
    /// condition latent size.
    pub branch_widths: Vec<usize>,
    /// Fixed number of boundary records fed to the branch.
    pub branch_points: usize,
    /// Widths of the per-point trunk over raw coordinates.
    pub trunk_widths: Vec<usize>,
    /// Hidden widths of the shared output stack; may be empty.
    pub head_widths: Vec<usize>,
    pub activation: Activation,
    /// Probability of dropping a unit in the last two head hidden layers
    /// during training.
    pub dropout: f64,
}

impl PiganoConfig {
    /// Default layer plan: 128-wide geometry and condition latents in 2D
    /// (512-wide geometry latent in 3D), trunk (128, 128), and a
    /// (128, 64) output stack.
    pub fn paper(dim: usize, branch_points: usize, activation: Activation, dropout: f64) -> Self {
        let geometry_widths = if dim == 3 { vec![64, 256, 512] } else { vec![64, 128, 128] };
        PiganoConfig {
            dim,
            geometry_widths,
            branch_widths: vec![64, 128],
            branch_points,
            trunk_widths: vec![128, 128],
            head_widths: vec![128, 64],
            activation,
            dropout,
        }
    }

    /// Width of one geometry-cloud row: coordinates, signed distance,
    /// boundary one-hot.
    pub fn geometry_feature_width(&self) -> usize {
        self.dim + 5
    }

    /// Width of one branch record: position, boundary velocity, and the
    /// two porous coefficients.
    pub fn record_width(&self) -> usize {
        2 * self.dim + 2
    }

    pub fn geometry_latent(&self) -> usize {
        *self.geometry_widths.last().expect("validated non-empty")
    }

    pub fn branch_latent(&self) -> usize {
        *self.branch_widths.last().expect("validated non-empty")
    }

    fn trunk_out(&self) -> usize {
        *self.trunk_widths.last().expect("validated non-empty")
    }

    fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| Err(ModelError::InvalidConfig { reason });
        if self.dim != 2 && self.dim != 3 {
            return fail(format!("dimension must be 2 or 3, got {}", self.dim));
        }
        if self.geometry_widths.is_empty() || self.branch_widths.is_empty() || self.trunk_widths.is_empty() {
            return fail("geometry, branch, and trunk stacks need at least one layer".to_string());
        }
        if self.branch_points == 0 {
            return fail("branch needs a positive record count".to_string());
        }
        let stacks: [&[usize]; 4] =
            [&self.geometry_widths, &self.branch_widths, &self.trunk_widths, &self.head_widths];
        if let Some(w) = all_widths_positive(&stacks) {
            return fail(format!("layer width must be positive, got {w}"));
        }
        validate_dropout(self.dropout)
    }

    fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::new();
        push_stack(&mut shapes, "geometry", self.geometry_feature_width(), &self.geometry_widths);
        push_stack(&mut shapes, "branch", self.record_width(), &self.branch_widths);
        push_stack(&mut shapes, "trunk", self.dim, &self.trunk_widths);
        let head_in = self.trunk_out() + self.geometry_latent() + self.branch_latent();
        let last = push_stack(&mut shapes, "head", head_in, &self.head_widths);
        shapes.push(LayerShape { name: "output".to_string(), fan_in: last, fan_out: self.dim + 1 });
        shapes
    }
}

fn validate_dropout(p: f64) -> Result<(), ModelError> {
    if !(p.is_finite() && (0.0..1.0).contains(&p)) {
        return Err(ModelError::InvalidConfig {
            reason: format!("dropout probability must lie in [0, 1), got {p}"),
        });
    }
    Ok(())
}

/// Returns the first non-positive width, if any.
fn all_widths_positive(stacks: &[&[usize]]) -> Option<usize> {
    stacks.iter().flat_map(|s| s.iter()).copied().find(|&w| w == 0)
}

/// Appends one affine layer per width and returns the final output width.
fn push_stack(shapes: &mut Vec<LayerShape>, stage: &str, mut fan_in: usize, widths: &[usize]) -> usize {
    for (i, &w) in widths.iter().enumerate() {
        shapes.push(LayerShape { name: format!("{stage}.{i}"), fan_in, fan_out: w });
        fan_in = w;
    }
    fan_in
}

/// Either architecture, as stored in parameters and checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelConfig {
    Pipn(PipnConfig),
    Pigano(PiganoConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Pipn(_) => "pipn",
            ModelConfig::Pigano(_) => "pigano",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelConfig::Pipn(c) => c.dim,
            ModelConfig::Pigano(c) => c.dim,
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            ModelConfig::Pipn(c) => c.activation,
            ModelConfig::Pigano(c) => c.activation,
        }
    }

    pub fn dropout(&self) -> f64 {
        match self {
            ModelConfig::Pipn(c) => c.dropout,
            ModelConfig::Pigano(c) => c.dropout,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelConfig::Pipn(c) => c.validate(),
            ModelConfig::Pigano(c) => c.validate(),
        }
    }

    /// Every affine layer in registration order.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        match self {
            ModelConfig::Pipn(c) => c.layer_shapes(),
            ModelConfig::Pigano(c) => c.layer_shapes(),
        }
    }

    /// Total scalar parameter count: weights plus biases over all layers.
    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|s| (s.fan_in + 1) * s.fan_out).sum()
    }

    /// Hidden-layer widths that receive dropout (the last two hidden layers
    /// of the decoder or output stack).
    fn dropout_widths(&self) -> Vec<usize> {
        let hiddens = match self {
            ModelConfig::Pipn(c) => &c.decoder_widths,
            ModelConfig::Pigano(c) => &c.head_widths,
        };
        let skip = hiddens.len().saturating_sub(2);
        hiddens[skip..].to_vec()
    }
}

/// Shape and name of one affine layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// One named tensor of the flat parameter store. Biases are rows.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub values: Array2<f64>,
}

/// A model's trainable state: the architecture, the seed it was initialized
/// from, and every tensor in registration order (weight then bias per
/// layer). Gradient and optimizer vectors index tensors by this order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub seed: u64,
    tensors: Vec<NamedTensor>,
}

impl ModelParameters {
    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    /// Mutable access for optimizer updates; the layout must not change.
    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    /// Looks a tensor up by its layer-qualified name.
    pub fn tensor(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.values)
    }

    /// Records every tensor on the tape and returns the handles in
    /// registration order. Trainable parameters receive contiguous ids so
    /// the gradient vector aligns with [`Self::tensors`]; a non-trainable
    /// bind records plain constants. Bind once per tape, before recording
    /// any forward pass, and reuse the handles across cases in a batch.
    pub fn bind<'p>(&'p self, tape: &mut Tape<f64>, trainable: bool) -> BoundParams<'p> {
        let nodes = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if trainable {
                    tape.param(ParamId(i as u32), t.values.clone())
                } else {
                    tape.input(t.values.clone())
                }
            })
            .collect();
        BoundParams { params: self, nodes }
    }

    fn from_tensors(
        config: ModelConfig,
        seed: u64,
        tensors: Vec<NamedTensor>,
    ) -> Result<Self, ModelError> {
        let expected = expected_tensor_layout(&config);
        if tensors.len() != expected.len() {
            return Err(ModelError::ParameterMismatch {
                reason: format!(
                    "{} tensors for a configuration with {}",
                    tensors.len(),
                    expected.len()
                ),
            });
        }
        for (t, (name, shape)) in tensors.iter().zip(&expected) {
            if &t.name != name || t.values.dim() != *shape {
                return Err(ModelError::ParameterMismatch {
                    reason: format!(
                        "tensor {} with shape {:?}, expected {} with {:?}",
                        t.name,
                        t.values.dim(),
                        name,
                        shape
                    ),
                });
            }
        }
        Ok(ModelParameters { config, seed, tensors })
    }
}

/// Canonical (name, shape) sequence for a configuration.
fn expected_tensor_layout(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let mut layout = Vec::new();
    for shape in config.layer_shapes() {
        layout.push((format!("{}.weight", shape.name), (shape.fan_in, shape.fan_out)));
        layout.push((format!("{}.bias", shape.name), (1, shape.fan_out)));
    }
    layout
}

/// Parameter tensors registered on one tape, in the model's layer order.
pub struct BoundParams<'p> {
    params: &'p ModelParameters,
    nodes: Vec<NodeId>,
}

impl<'p> BoundParams<'p> {
    pub fn params(&self) -> &'p ModelParameters {
        self.params
    }

    pub(crate) fn cursor(&self) -> LayerCursor<'_> {
        LayerCursor { nodes: &self.nodes, at: 0 }
    }
}

/// Walks (weight, bias) node pairs in registration order.
pub(crate) struct LayerCursor<'a> {
    nodes: &'a [NodeId],
    at: usize,
}

impl LayerCursor<'_> {
    pub(crate) fn next_layer(&mut self) -> (NodeId, NodeId) {
        let pair = (self.nodes[self.at], self.nodes[self.at + 1]);
        self.at += 2;
        pair
    }
}

/// Draws fresh parameters for a configuration: weights uniform on
/// ±sqrt(3 / fan_in) so their variance is 1 / fan_in, biases zero. The same
/// (config, seed) pair always produces bitwise-identical tensors.
pub fn init_parameters(config: &ModelConfig, seed: u64) -> Result<ModelParameters, ModelError> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for shape in config.layer_shapes() {
        let bound = (3.0 / shape.fan_in as f64).sqrt();
        let mut draws = Vec::with_capacity(shape.fan_in * shape.fan_out);
        for _ in 0..shape.fan_in * shape.fan_out {
            draws.push(rng.random_range(-bound..bound));
        }
        let weight = Array2::from_shape_vec((shape.fan_in, shape.fan_out), draws)
            .expect("weight shape matches draw count");
        tensors.push(NamedTensor { name: format!("{}.weight", shape.name), values: weight });
        tensors.push(NamedTensor {
            name: format!("{}.bias", shape.name),
            values: Array2::zeros((1, shape.fan_out)),
        });
    }
    Ok(ModelParameters { config: config.clone(), seed, tensors })
}

/// Expected mask shapes for a training forward pass over `points` rows.
pub fn dropout_mask_shapes(config: &ModelConfig, points: usize) -> Vec<(usize, usize)> {
    config.dropout_widths().into_iter().map(|w| (points, w)).collect()
}

/// Draws inverted-dropout masks for one training forward pass: entries are
/// 0 with the configured probability and 1/(1-p) otherwise, so evaluation
/// needs no rescaling. With probability 0 every entry is exactly 1.
pub fn sample_dropout_masks(
    config: &ModelConfig,
    points: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<Array2<f64>> {
    let p = config.dropout();
    let keep = 1.0 / (1.0 - p);
    dropout_mask_shapes(config, points)
        .into_iter()
        .map(|(r, c)| {
            let mut mask = Array2::zeros((r, c));
            for v in mask.iter_mut() {
                *v = if rng.random::<f64>() < p { 0.0 } else { keep };
            }
            mask
        })
        .collect()
}

/// Checks a caller-supplied mask set against the configuration and applies
/// them to dropout-site indices within the hidden stack.
pub(crate) fn check_dropout_masks<'m>(
    config: &ModelConfig,
    points: usize,
    masks: Option<&'m [Array2<f64>]>,
) -> Result<Option<&'m [Array2<f64>]>, ModelError> {
    let Some(masks) = masks else { return Ok(None) };
    let shapes = dropout_mask_shapes(config, points);
    if masks.len() != shapes.len() {
        return Err(ModelError::DropoutMasks {
            reason: format!("{} masks supplied, {} dropout sites", masks.len(), shapes.len()),
        });
    }
    for (m, s) in masks.iter().zip(&shapes) {
        if m.dim() != *s {
            return Err(ModelError::DropoutMasks {
                reason: format!("mask shape {:?} does not match site shape {:?}", m.dim(), s),
            });
        }
    }
    Ok(Some(masks))
}

/// Index of the first hidden layer that receives dropout, within a hidden
/// stack of the given length.
pub(crate) fn first_dropout_site(hidden_count: usize) -> usize {
    hidden_count.saturating_sub(2)
}

/// Rejects matrices containing NaN or infinities.
pub(crate) fn ensure_finite(values: &Array2<f64>, context: &'static str) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite { context })
    }
}

/// Wraps a 1-row node as a per-point bundle whose spatial derivatives are
/// zero: the value is broadcast (keeping parameter gradients flowing), the
/// derivative channels are constant zeros.
pub(crate) fn broadcast_constant_dual(
    tape: &mut Tape<f64>,
    node: NodeId,
    rows: usize,
    dirs: usize,
) -> DualRows {
    let cols = tape.value(node).ncols();
    let value = tape.broadcast_row(node, rows);
    let mut d1 = Vec::with_capacity(dirs);
    let mut d2 = Vec::with_capacity(dirs);
    for _ in 0..dirs {
        d1.push(tape.input(Array2::zeros((rows, cols))));
        d2.push(tape.input(Array2::zeros((rows, cols))));
    }
    DualRows { value, d1, d2 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_pipn() -> ModelConfig {
        ModelConfig::Pipn(PipnConfig::paper(2, Activation::Tanh, 0.0))
    }

    fn paper_pigano() -> ModelConfig {
        ModelConfig::Pigano(PiganoConfig::paper(2, 40, Activation::Tanh, 0.0))
    }

    #[test]
    fn published_pipn_layer_arithmetic_is_frozen() {
        // Hand arithmetic: inputs are 7 wide (2 coords, sdf, 4 one-hot),
        // the local output re-appends 5 feature columns (69), and the
        // decoder sees 69 + 1024. Summing (fan_in + 1) * fan_out:
        //   local   7->64, 64->64           =     512 +   4160
        //   global  69->64, 64->128, ->1024 =    4480 +   8320 + 132096
        //   decoder 1093->512, ->256, ->128 =  560128 + 131328 + 32896
        //   output  128->3                  =     387
        assert_eq!(paper_pipn().parameter_count(), 874_307);
    }

    #[test]
    fn published_pigano_layer_arithmetic_is_frozen() {
        // geometry 7->64->128->128 = 512 + 8320 + 16512
        // branch   6->64->128      = 448 + 8320
        // trunk    2->128->128     = 384 + 16512
        // head     384->128->64    = 49280 + 8256, output 64->3 = 195
        assert_eq!(paper_pigano().parameter_count(), 108_739);
    }

    #[test]
    fn init_matches_the_layer_arithmetic_and_is_deterministic() {
        for config in [paper_pipn(), paper_pigano()] {
            let a = init_parameters(&config, 7).unwrap();
            assert_eq!(a.count(), config.parameter_count());
            let b = init_parameters(&config, 7).unwrap();
            for (ta, tb) in a.tensors().iter().zip(b.tensors()) {
                assert_eq!(ta.name, tb.name);
                assert!(ta.values.iter().zip(tb.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            let c = init_parameters(&config, 8).unwrap();
            let differs = a
                .tensors()
                .iter()
                .zip(c.tensors())
                .any(|(x, y)| x.values != y.values);
            assert!(differs, "different seeds must draw different weights");
        }
    }

    #[test]
    fn init_draws_fan_in_scaled_weights_and_zero_biases() {
        // local.1 of this config is a 64 x 16 weight: 1024 draws with
        // fan-in 64, so the target standard deviation is 1/8.
        let config = ModelConfig::Pipn(PipnConfig {
            dim: 2,
            local_widths: vec![64, 16],
            global_widths: vec![8],
            decoder_widths: vec![],
            activation: Activation::Tanh,
            dropout: 0.0,
        });
        let target = (1.0_f64 / 64.0).sqrt();
        let bound = (3.0_f64 / 64.0).sqrt();
        for seed in 0..50 {
            let params = init_parameters(&config, seed).unwrap();
            let w = params.tensor("local.1.weight").unwrap();
            assert_eq!(w.len(), 1024);
            assert!(w.iter().all(|v| v.abs() < bound));
            let mean = w.sum() / w.len() as f64;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
            let std = var.sqrt();
            assert!(
                (std - target).abs() / target < 0.2,
                "seed {seed}: sample std {std} strays from {target}"
            );
            for t in params.tensors() {
                if t.name.ends_with(".bias") {
                    assert!(t.values.iter().all(|&v| v == 0.0), "{} not zero", t.name);
                }
            }
        }
    }

    #[test]
    fn config_validation_rejects_degenerate_plans() {
        let bad_dim = PipnConfig { dim: 4, ..PipnConfig::paper(2, Activation::Tanh, 0.0) };
        assert!(matches!(
            ModelConfig::Pipn(bad_dim).validate(),
            Err(ModelError::InvalidConfig { .. })
        ));
        let empty_local =
            PipnConfig { local_widths: vec![], ..PipnConfig::paper(2, Activation::Tanh, 0.0) };
        assert!(ModelConfig::Pipn(empty_local).validate().is_err());
        let full_dropout = PipnConfig::paper(2, Activation::Tanh, 1.0);
        assert!(ModelConfig::Pipn(full_dropout).validate().is_err());
        let zero_width =
            PipnConfig { global_widths: vec![64, 0], ..PipnConfig::paper(2, Activation::Tanh, 0.0) };
        assert!(ModelConfig::Pipn(zero_width).validate().is_err());
        let no_branch = PiganoConfig { branch_points: 0, ..PiganoConfig::paper(2, 40, Activation::Tanh, 0.0) };
        assert!(ModelConfig::Pigano(no_branch).validate().is_err());
    }

    #[test]
    fn dropout_sites_cover_the_last_two_hidden_layers() {
        let config = paper_pipn();
        assert_eq!(dropout_mask_shapes(&config, 10), vec![(10, 256), (10, 128)]);
        let one_hidden = ModelConfig::Pipn(PipnConfig {
            decoder_widths: vec![32],
            ..PipnConfig::paper(2, Activation::Tanh, 0.0)
        });
        assert_eq!(dropout_mask_shapes(&one_hidden, 4), vec![(4, 32)]);
        let linear_head = ModelConfig::Pipn(PipnConfig {
            decoder_widths: vec![],
            ..PipnConfig::paper(2, Activation::Tanh, 0.0)
        });
        assert!(dropout_mask_shapes(&linear_head, 4).is_empty());
    }

    #[test]
    fn dropout_masks_are_inverted_and_exact_at_zero_rate() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let keep_all = ModelConfig::Pipn(PipnConfig::paper(2, Activation::Tanh, 0.0));
        for mask in sample_dropout_masks(&keep_all, 6, &mut rng) {
            assert!(mask.iter().all(|&v| v == 1.0));
        }
        let half = ModelConfig::Pipn(PipnConfig::paper(2, Activation::Tanh, 0.5));
        let masks = sample_dropout_masks(&half, 50, &mut rng);
        let total: usize = masks.iter().map(|m| m.len()).sum();
        let zeros: usize = masks.iter().map(|m| m.iter().filter(|&&v| v == 0.0).count()).sum();
        assert!(masks.iter().all(|m| m.iter().all(|&v| v == 0.0 || v == 2.0)));
        let rate = zeros as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.05, "observed drop rate {rate}");
    }

    #[test]
    fn mask_checks_reject_wrong_counts_and_shapes() {
        let config = paper_pipn();
        let wrong_count = vec![Array2::<f64>::zeros((10, 256))];
        assert!(matches!(
            check_dropout_masks(&config, 10, Some(&wrong_count)),
            Err(ModelError::DropoutMasks { .. })
        ));
        let wrong_shape = vec![Array2::<f64>::zeros((10, 256)), Array2::<f64>::zeros((9, 128))];
        assert!(check_dropout_masks(&config, 10, Some(&wrong_shape)).is_err());
        assert!(check_dropout_masks(&config, 10, None).unwrap().is_none());
    }

    #[test]
    fn tensor_layout_names_follow_the_stage_order() {
        let names: Vec<String> = expected_tensor_layout(&paper_pigano())
            .into_iter()
            .map(|(name, _)| name)
            .collect();
        assert_eq!(names[0], "geometry.0.weight");
        assert_eq!(names[1], "geometry.0.bias");
        assert!(names.contains(&"branch.1.weight".to_string()));
        assert!(names.contains(&"trunk.0.weight".to_string()));
        assert_eq!(names.last().unwrap(), "output.bias");
    }
}
