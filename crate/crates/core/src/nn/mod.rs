//! Network components: the strided convolutional encoder, causal chunked
//! multi-head self-attention, the transformer layer and the stacked
//! context network built from it.

mod attention;
mod encoder;
mod linear;
mod params;
mod transformer;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use attention::MultiHeadAttention;
pub use encoder::ConvEncoder;
pub use linear::{Linear, Norm, NORM_EPS};
pub use params::{Bound, ParamId, ParamSet};
pub use transformer::{sinusoidal_positions, ContextNetwork, TransformerLayer};

use crate::error::{Error, Result};

/// Number of latent frames one attention layer can see, current frame
/// included.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WidthRepr", into = "WidthRepr")]
pub enum Width {
    Bounded(usize),
    Unbounded,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WidthRepr {
    Frames(usize),
    Name(String),
}

impl TryFrom<WidthRepr> for Width {
    type Error = String;
    fn try_from(r: WidthRepr) -> Result<Self, String> {
        match r {
            WidthRepr::Frames(n) => Ok(Width::Bounded(n)),
            WidthRepr::Name(s) => s.parse(),
        }
    }
}

impl From<Width> for WidthRepr {
    fn from(w: Width) -> Self {
        match w {
            Width::Bounded(n) => WidthRepr::Frames(n),
            Width::Unbounded => WidthRepr::Name("unbounded".into()),
        }
    }
}

impl std::str::FromStr for Width {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unbounded" | "inf" => Ok(Width::Unbounded),
            n => n
                .parse()
                .map(Width::Bounded)
                .map_err(|_| format!("width must be an integer or \"unbounded\", got {n:?}")),
        }
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Width::Bounded(n) => write!(f, "{n}"),
            Width::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Width {
    pub fn frames(self) -> Option<usize> {
        match self {
            Width::Bounded(n) => Some(n),
            Width::Unbounded => None,
        }
    }
}

/// Total receptive field, in frames, of `layers` stacked attention layers
/// of width `width`.
pub fn total_context(layers: usize, width: usize) -> usize {
    layers * (width - 1) + 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub channels: usize,
    /// Channel normalization between convolutions.
    pub layer_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kernels: vec![10, 8, 4, 4, 4],
            strides: vec![5, 4, 2, 2, 2],
            channels: 256,
            layer_norm: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernels.len() != self.strides.len() || self.kernels.is_empty() {
            return Err(Error::Config(format!(
                "encoder kernels {:?} and strides {:?} must be non-empty and of equal length",
                self.kernels, self.strides
            )));
        }
        if self.channels == 0 || self.strides.contains(&0) {
            return Err(Error::Config("encoder channels and strides must be positive".into()));
        }
        if self.kernels.iter().zip(&self.strides).any(|(k, s)| k < s) {
            return Err(Error::Config("encoder kernels must be at least their strides".into()));
        }
        Ok(())
    }

    /// Samples per latent frame.
    pub fn hop(&self) -> usize {
        self.strides.iter().product()
    }

    /// Samples that can influence one latent frame.
    pub fn receptive_field(&self) -> usize {
        let mut jump = 1;
        let mut field = 1;
        for (k, s) in self.kernels.iter().zip(&self.strides) {
            field += (k - 1) * jump;
            jump *= s;
        }
        field
    }

    /// Latent frames produced for `samples` input samples.
    pub fn frames_for(&self, samples: usize) -> usize {
        self.strides.iter().fold(samples, |len, s| len / s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub width: Width,
    pub heads: usize,
    pub model_dim: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dimension {} must be a positive multiple of the head count {}",
                self.model_dim, self.heads
            )));
        }
        if let Width::Bounded(w) = self.width {
            if w < 2 {
                return Err(Error::Config(format!("context width must be at least 2, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayerConfig {
    pub attention: AttentionConfig,
    pub ff_hidden: usize,
    pub out_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArConfig {
    pub layers: usize,
    pub layer: TransformerLayerConfig,
    /// Width of the final feed-forward map.
    pub final_dim: usize,
    pub positional_encoding: bool,
}
