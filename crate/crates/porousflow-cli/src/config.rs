//! Run configuration files.
//!
//! One TOML file covers the trainer, the loss weights, the model
//! architecture, and (for the generators) the point sampler. The seed is
//! deliberately not part of the file: it always comes from the command
//! line so that one config can drive many seeded runs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use porousflow::ad::Activation;
use porousflow::geometry::SamplerOptions;
use porousflow::models::{PiganoConfig, PipnConfig};
use porousflow::train::{LossWeights, TrainConfig};
use porousflow::ModelConfig;
use serde::Deserialize;

/// Parsed contents of a run configuration file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    train: TrainSection,
    weights: WeightsSection,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    sampler: SamplerSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    epochs: usize,
    base_lr: f64,
    decay: f64,
    #[serde(default = "default_minibatch")]
    minibatch: usize,
    #[serde(default)]
    dropout: f64,
    #[serde(default)]
    checkpoint_every: usize,
    #[serde(default)]
    clip_norm: Option<f64>,
}

fn default_minibatch() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsSection {
    lambda_m: f64,
    lambda_c: f64,
    lambda_b: f64,
    #[serde(default)]
    lambda_d: f64,
}

/// Architecture overrides; anything omitted falls back to the published
/// layer widths for the chosen model kind.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    #[serde(default)]
    activation: Option<String>,
    #[serde(default)]
    local_widths: Option<Vec<usize>>,
    #[serde(default)]
    global_widths: Option<Vec<usize>>,
    #[serde(default)]
    decoder_widths: Option<Vec<usize>>,
    #[serde(default)]
    geometry_widths: Option<Vec<usize>>,
    #[serde(default)]
    branch_widths: Option<Vec<usize>>,
    #[serde(default)]
    branch_points: Option<usize>,
    #[serde(default)]
    trunk_widths: Option<Vec<usize>>,
    #[serde(default)]
    head_widths: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplerSection {
    #[serde(default)]
    interface_mixture_weight: Option<f64>,
    #[serde(default)]
    interface_sigma_fraction: Option<f64>,
    #[serde(default)]
    interface_boundary_quota: Option<f64>,
    #[serde(default)]
    max_attempts: Option<usize>,
}

impl RunFile {
    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let file: RunFile = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;
        Ok(file)
    }

    /// Trainer settings with the seed injected from the command line.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let t = &self.train;
        let config = TrainConfig {
            epochs: t.epochs,
            base_lr: t.base_lr,
            decay: t.decay,
            minibatch: t.minibatch,
            seed,
            weights: self.loss_weights()?,
            dropout: t.dropout,
            checkpoint_every: t.checkpoint_every,
            clip_norm: t.clip_norm,
        };
        config.validate().context("invalid [train] section")?;
        Ok(config)
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        let w = &self.weights;
        LossWeights::new(w.lambda_m, w.lambda_c, w.lambda_b, w.lambda_d)
            .context("invalid [weights] section")
    }

    /// Builds the architecture for the requested model kind, starting
    /// from the published widths and applying any overrides.
    pub fn model_config(&self, kind: &str, dim: usize) -> Result<ModelConfig> {
        let m = &self.model;
        let activation = match &m.activation {
            Some(name) => Activation::from_name(name)
                .with_context(|| format!("unknown activation {name:?}"))?,
            None => Activation::Tanh,
        };
        let dropout = self.train.dropout;
        let config = match kind {
            "pipn" => {
                for (name, set) in [
                    ("geometry_widths", m.geometry_widths.is_some()),
                    ("branch_widths", m.branch_widths.is_some()),
                    ("branch_points", m.branch_points.is_some()),
                    ("trunk_widths", m.trunk_widths.is_some()),
                    ("head_widths", m.head_widths.is_some()),
                ] {
                    if set {
                        bail!("[model] {name} does not apply to the point-cloud model");
                    }
                }
                let mut config = PipnConfig::paper(dim, activation, dropout);
                if let Some(w) = &m.local_widths {
                    config.local_widths = w.clone();
                }
                if let Some(w) = &m.global_widths {
                    config.global_widths = w.clone();
                }
                if let Some(w) = &m.decoder_widths {
                    config.decoder_widths = w.clone();
                }
                ModelConfig::Pipn(config)
            }
            "pigano" => {
                for (name, set) in [
                    ("local_widths", m.local_widths.is_some()),
                    ("global_widths", m.global_widths.is_some()),
                    ("decoder_widths", m.decoder_widths.is_some()),
                ] {
                    if set {
                        bail!("[model] {name} does not apply to the conditioned model");
                    }
                }
                let branch_points = m.branch_points.context(
                    "[model] branch_points is required for the conditioned model",
                )?;
                let mut config = PiganoConfig::paper(dim, branch_points, activation, dropout);
                if let Some(w) = &m.geometry_widths {
                    config.geometry_widths = w.clone();
                }
                if let Some(w) = &m.branch_widths {
                    config.branch_widths = w.clone();
                }
                if let Some(w) = &m.trunk_widths {
                    config.trunk_widths = w.clone();
                }
                if let Some(w) = &m.head_widths {
                    config.head_widths = w.clone();
                }
                ModelConfig::Pigano(config)
            }
            other => bail!("unknown model kind {other:?}; expected pipn or pigano"),
        };
        config.validate().context("invalid [model] section")?;
        Ok(config)
    }

    /// Sampler settings for the generators; defaults where unspecified.
    pub fn sampler_options(&self) -> SamplerOptions {
        let s = &self.sampler;
        let mut options = SamplerOptions::default();
        if let Some(v) = s.interface_mixture_weight {
            options.interface_mixture_weight = v;
        }
        if let Some(v) = s.interface_sigma_fraction {
            options.interface_sigma_fraction = v;
        }
        if let Some(v) = s.interface_boundary_quota {
            options.interface_boundary_quota = v;
        }
        if let Some(v) = s.max_attempts {
            options.max_attempts = v;
        }
        options
    }
}

/// The default configuration used when a generator runs without a config
/// file: published trainer settings for the manufactured-solution row and
/// default sampler behavior.
impl Default for RunFile {
    fn default() -> Self {
        RunFile {
            train: TrainSection {
                epochs: 3000,
                base_lr: 1e-3,
                decay: 0.9995,
                minibatch: 1,
                dropout: 0.0,
                checkpoint_every: 0,
                clip_norm: None,
            },
            weights: WeightsSection {
                lambda_m: 1.0,
                lambda_c: 1.0,
                lambda_b: 1.0,
                lambda_d: 0.0,
            },
            model: ModelSection::default(),
            sampler: SamplerSection::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> RunFile {
        toml::from_str(text).unwrap()
    }

    const MINIMAL: &str = "\
[train]
epochs = 10
base_lr = 1e-3
decay = 0.999

[weights]
lambda_m = 1.0
lambda_c = 1.0
lambda_b = 1.0
";

    #[test]
    fn a_minimal_file_fills_in_published_defaults() {
        let file = parse(MINIMAL);
        let train = file.train_config(7).unwrap();
        assert_eq!(train.epochs, 10);
        assert_eq!(train.seed, 7);
        assert_eq!(train.minibatch, 1);
        assert_eq!(train.weights.lambda_d, 0.0);
        let model = file.model_config("pipn", 2).unwrap();
        match model {
            ModelConfig::Pipn(c) => {
                assert_eq!(c.local_widths, vec![64, 64]);
                assert_eq!(c.global_widths, vec![64, 128, 1024]);
                assert_eq!(c.decoder_widths, vec![512, 256, 128]);
            }
            _ => panic!("expected the point-cloud model"),
        }
        let options = file.sampler_options();
        assert_eq!(options, SamplerOptions::default());
    }

    #[test]
    fn overrides_replace_only_what_they_name() {
        let text = format!(
            "{MINIMAL}\n[model]\nactivation = \"silu\"\nlocal_widths = [8, 8]\n\n\
             [sampler]\ninterface_mixture_weight = 0.5\n"
        );
        let file = parse(&text);
        match file.model_config("pipn", 2).unwrap() {
            ModelConfig::Pipn(c) => {
                assert_eq!(c.local_widths, vec![8, 8]);
                assert_eq!(c.global_widths, vec![64, 128, 1024]);
                assert_eq!(c.activation, Activation::Silu);
            }
            _ => panic!("expected the point-cloud model"),
        }
        let options = file.sampler_options();
        assert_eq!(options.interface_mixture_weight, 0.5);
        assert_eq!(
            options.interface_sigma_fraction,
            SamplerOptions::default().interface_sigma_fraction
        );
    }

    #[test]
    fn the_conditioned_model_requires_a_branch_size_and_rejects_foreign_keys() {
        let file = parse(MINIMAL);
        assert!(file.model_config("pigano", 2).is_err());
        let text = format!("{MINIMAL}\n[model]\nbranch_points = 12\n");
        let file = parse(&text);
        assert!(file.model_config("pigano", 2).is_ok());
        assert!(file.model_config("pipn", 2).is_err());
        assert!(file.model_config("resnet", 2).is_err());
    }

    #[test]
    fn unknown_keys_are_parse_errors() {
        let text = format!("{MINIMAL}\nunrelated = 1\n");
        assert!(toml::from_str::<RunFile>(&text).is_err());
        let text = MINIMAL.replace("epochs = 10", "epochs = 10\nlearning_rate = 2.0");
        assert!(toml::from_str::<RunFile>(&text).is_err());
    }
}
