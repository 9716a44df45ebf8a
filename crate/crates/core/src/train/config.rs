//! Training configurations and the full/desk presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::mel2mel::{LossKind, Mel2MelConfig, Variant};
use crate::wavenet::WaveNetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTarget {
    Mel2mel,
    Wavenet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePreset {
    Full,
    Desk,
}

impl fmt::Display for ScalePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalePreset::Full => "full",
            ScalePreset::Desk => "desk",
        })
    }
}

impl FromStr for ScalePreset {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(ScalePreset::Full),
            "desk" => Ok(ScalePreset::Desk),
            other => Err(TrainError::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub target: TrainTarget,
    pub preset: ScalePreset,
    pub loss: LossKind,
    pub batch_size: usize,
    /// Samples per training sequence; a multiple of the 128-sample hop.
    pub sequence_length: usize,
    pub iterations: u64,
    pub learning_rate: f64,
    pub lr_halve_every: u64,
    pub seed: u64,
    pub variant: Variant,
    pub embed_dim: usize,
    pub hidden: usize,
    pub lstm_units: usize,
    pub wavenet: WaveNetConfig,
    /// Iterations between validation checkpoints.
    pub validation_every: u64,
    /// Batches of held-out slices scored at each checkpoint.
    pub validation_batches: usize,
    /// Global gradient-norm clip; zero disables clipping.
    pub grad_clip: f64,
}

impl TrainConfig {
    /// The reference hyperparameters.
    pub fn full(target: TrainTarget) -> Self {
        let full = Mel2MelConfig::full(10, 2);
        let base = Self {
            target,
            preset: ScalePreset::Full,
            loss: LossKind::TanhLogAbsMse,
            batch_size: 128,
            sequence_length: 65_536,
            iterations: 100_000,
            learning_rate: 0.002,
            lr_halve_every: 40_000,
            seed: 0,
            variant: Variant::Proposed,
            embed_dim: full.embed_dim,
            hidden: full.hidden,
            lstm_units: full.lstm_units,
            wavenet: WaveNetConfig::full(),
            validation_every: 5_000,
            validation_batches: 4,
            grad_clip: 0.0,
        };
        match target {
            TrainTarget::Mel2mel => base,
            TrainTarget::Wavenet => Self {
                batch_size: 4,
                sequence_length: 16_384,
                iterations: 1_000_000,
                learning_rate: 0.001,
                lr_halve_every: 100_000,
                validation_every: 50_000,
                ..base
            },
        }
    }

    /// Scaled-down configuration that trains on a single CPU core.
    pub fn desk(target: TrainTarget) -> Self {
        let base = Self {
            preset: ScalePreset::Desk,
            batch_size: 8,
            sequence_length: 8_192,
            iterations: 3_000,
            learning_rate: 0.002,
            lr_halve_every: 1_200,
            hidden: 64,
            lstm_units: 32,
            wavenet: WaveNetConfig::desk(),
            validation_every: 150,
            validation_batches: 4,
            grad_clip: 1.0,
            ..Self::full(target)
        };
        match target {
            TrainTarget::Mel2mel => base,
            TrainTarget::Wavenet => Self {
                batch_size: 2,
                sequence_length: 4_096,
                iterations: 10_000,
                learning_rate: 0.001,
                lr_halve_every: 2_500,
                validation_every: 500,
                validation_batches: 2,
                ..base
            },
        }
    }

    pub fn preset(target: TrainTarget, preset: ScalePreset) -> Self {
        match preset {
            ScalePreset::Full => Self::full(target),
            ScalePreset::Desk => Self::desk(target),
        }
    }

    pub fn mel2mel_config(&self, n_instruments: usize) -> Mel2MelConfig {
        Mel2MelConfig {
            n_instruments,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            lstm_units: self.lstm_units,
            variant: self.variant,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Preset values overridden by the keys present in `text`.
    pub fn from_toml_over(preset: &TrainConfig, text: &str) -> Result<Self, TrainError> {
        let mut base = toml::Value::try_from(preset).map_err(|e| TrainError::Config(e.to_string()))?;
        let overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))?;
        merge(&mut base, toml::Value::Table(overrides));
        let config: TrainConfig = base.try_into().map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 || self.iterations == 0 || self.validation_batches == 0 {
            return fail("batch size, iterations and validation batches must be positive");
        }
        if self.sequence_length == 0 || self.sequence_length % crate::dsp::HOP != 0 {
            return fail("sequence length must be a positive multiple of 128");
        }
        if !(self.learning_rate > 0.0) || self.lr_halve_every == 0 || self.validation_every == 0 {
            return fail("learning rate, halving interval and validation cadence must be positive");
        }
        if self.grad_clip < 0.0 {
            return fail("grad_clip must be non-negative");
        }
        self.wavenet.validate().map_err(|e| TrainError::Config(e.to_string()))
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
