//! Plain-text `key = value` run configuration. Blank lines and `#` comments
//! are allowed; unknown or duplicate keys are rejected; `parse(render(c))`
//! reproduces `c` exactly.

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::fusion::{Modality, ModelConfig, Variant};
use crate::image::AugmentConfig;
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // training
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub rms_decay: f64,
    pub eps: f64,
    pub epochs: usize,
    pub multi_start_k: usize,
    pub seed: u64,
    pub augment: bool,
    // backbone
    pub input_hw: usize,
    pub stem_channels: usize,
    pub num_blocks: usize,
    // fusion
    pub proj_dim: usize,
    pub memory: usize,
    pub gate_biases: bool,
    pub reverse_sequence: bool,
    // dataset: "synth" or a directory path
    pub dataset: String,
    pub synth_shapes: usize,
    pub synth_hues: usize,
    pub synth_train_per_class: usize,
    pub synth_test_per_class: usize,
    pub synth_noise_std: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            batch_size: 64,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0002,
            max_grad_norm: 4.0,
            rms_decay: 0.9,
            eps: 1e-8,
            epochs: 30,
            multi_start_k: 3,
            seed: 0,
            augment: false,
            input_hw: 64,
            stem_channels: 16,
            num_blocks: 3,
            proj_dim: 64,
            memory: 32,
            gate_biases: true,
            reverse_sequence: false,
            dataset: "synth".to_string(),
            synth_shapes: 4,
            synth_hues: 4,
            synth_train_per_class: 20,
            synth_test_per_class: 10,
            synth_noise_std: 0.02,
        }
    }
}

macro_rules! config_keys {
    ($macro:ident) => {
        $macro!(
            (batch_size, usize),
            (learning_rate, f64),
            (momentum, f64),
            (weight_decay, f64),
            (max_grad_norm, f64),
            (rms_decay, f64),
            (eps, f64),
            (epochs, usize),
            (multi_start_k, usize),
            (seed, u64),
            (augment, bool),
            (input_hw, usize),
            (stem_channels, usize),
            (num_blocks, usize),
            (proj_dim, usize),
            (memory, usize),
            (gate_biases, bool),
            (reverse_sequence, bool),
            (dataset, String),
            (synth_shapes, usize),
            (synth_hues, usize),
            (synth_train_per_class, usize),
            (synth_test_per_class, usize),
            (synth_noise_std, f64)
        );
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        macro_rules! apply {
            ($(($field:ident, $ty:ty)),*) => {
                match key {
                    $(stringify!($field) => {
                        self.$field = value
                            .parse::<$ty>()
                            .map_err(|_| format!(
                                "bad {} value '{value}' for key '{key}'",
                                stringify!($ty)
                            ))?;
                    })*
                    _ => return Err(format!("unknown key '{key}'")),
                }
            };
        }
        config_keys!(apply);
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($(($field:ident, $ty:ty)),*) => {
                $(out.push_str(&format!("{} = {}\n", stringify!($field), self.$field));)*
            };
        }
        config_keys!(emit);
        out
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            input_hw: self.input_hw,
            stem_channels: self.stem_channels,
            num_blocks: self.num_blocks,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            max_grad_norm: self.max_grad_norm,
            rms_decay: self.rms_decay,
            eps: self.eps,
            epochs: self.epochs,
            multi_start_k: self.multi_start_k,
            seed: self.seed,
            augment: if self.augment {
                AugmentConfig::standard()
            } else {
                AugmentConfig::disabled()
            },
        }
    }

    pub fn model_config(
        &self,
        num_classes: usize,
        variant: Variant,
        modality: Modality,
    ) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone_config(),
            proj_dim: self.proj_dim,
            memory: self.memory,
            gate_biases: self.gate_biases,
            reverse_sequence: self.reverse_sequence,
            num_classes,
            variant,
            modality,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_shapes: self.synth_shapes,
            num_hues: self.synth_hues,
            train_per_class: self.synth_train_per_class,
            test_per_class: self.synth_test_per_class,
            image_hw: self.input_hw,
            noise_std: self.synth_noise_std,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_default() {
        let c = RunConfig::default();
        let parsed = RunConfig::parse(&c.render()).unwrap();
        assert_eq!(c, parsed);
    }

    #[test]
    fn roundtrip_modified() {
        let c = RunConfig {
            learning_rate: 0.0035,
            eps: 3e-9,
            dataset: "/tmp/some/dir".into(),
            augment: true,
            epochs: 7,
            ..Default::default()
        };
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse("lr = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("unknown key 'lr'")));
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = RunConfig::parse("epochs = 1\nepochs = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("duplicate")));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let c = RunConfig::parse("# a comment\n\n  epochs = 5\n").unwrap();
        assert_eq!(c.epochs, 5);
    }

    #[test]
    fn bad_value_names_key() {
        let err = RunConfig::parse("epochs = banana\n").unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("epochs")));
    }
}
