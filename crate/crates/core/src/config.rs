//! Run configuration: one TOML document with `[model]`, `[train]`,
//! `[features]`, `[synth]` and `[abx]` sections. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abx::AbxOptions;
use crate::corpus::{FeatureConfig, SynthSpec};
use crate::error::{Error, Result};
use crate::nn::Width;
use crate::objectives::{CpcMode, LossScope, MaskFill};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "cpc")]
    Cpc,
    #[serde(rename = "cpc-last")]
    CpcLast,
    #[serde(rename = "bestrq")]
    BestRq,
}

impl Objective {
    pub fn cpc_mode(self) -> Option<CpcMode> {
        match self {
            Objective::Cpc => Some(CpcMode::Average),
            Objective::CpcLast => Some(CpcMode::Last),
            Objective::BestRq => None,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cpc" => Ok(Objective::Cpc),
            "cpc-last" => Ok(Objective::CpcLast),
            "bestrq" | "best-rq" => Ok(Objective::BestRq),
            other => Err(format!("unknown objective {other:?}; expected cpc, cpc-last or bestrq")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub objective: Objective,
    /// Encoder channels, which is also the latent width.
    pub channels: usize,
    pub encoder_kernels: Vec<usize>,
    pub encoder_strides: Vec<usize>,
    pub encoder_layer_norm: bool,
    /// Stacked attention layers in the context network.
    pub layers: usize,
    /// Attention width of the context network.
    pub width: Width,
    pub heads: usize,
    pub ff_hidden: usize,
    /// Width of the exported context frames.
    pub context_dim: usize,
    pub positional_encoding: bool,
    /// Prediction steps.
    pub steps: usize,
    /// Candidates per prediction, positive included.
    pub negatives: usize,
    pub predictor_width: Width,
    pub predictor_ff_hidden: usize,
    pub codebook_size: usize,
    pub mask_prob: f64,
    pub mask_span: usize,
    pub mask_fill: MaskFill,
    pub loss_scope: LossScope,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Cpc,
            channels: 256,
            encoder_kernels: vec![10, 8, 4, 4, 4],
            encoder_strides: vec![5, 4, 2, 2, 2],
            encoder_layer_norm: false,
            layers: 1,
            width: Width::Bounded(4),
            heads: 8,
            ff_hidden: 1024,
            context_dim: 256,
            positional_encoding: true,
            steps: 12,
            negatives: 128,
            predictor_width: Width::Unbounded,
            predictor_ff_hidden: 1024,
            codebook_size: 8192,
            mask_prob: 0.01,
            mask_span: 12,
            mask_fill: MaskFill::Zero,
            loss_scope: LossScope::All,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradient-norm clipping threshold, applied when `clip` is set.
    pub clip_norm: f64,
    pub clip: bool,
    pub seed: u64,
    /// Fraction of utterances held out for validation.
    pub validation_fraction: f64,
    /// Subsets used for training; empty means all.
    pub subsets: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 12,
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            clip: true,
            seed: 0,
            validation_fraction: 0.05,
            subsets: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.learning_rate < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("learning rate must be >= 0 and moment decays in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub features: FeatureConfig,
    pub synth: SynthSpec,
    pub abx: AbxOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Canonical text form, stable for a given value.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
