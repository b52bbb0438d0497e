use super::attention::MultiHeadAttention;
use super::linear::{Linear, Norm};
use super::params::{Bound, ParamSet};
use super::{ArConfig, TransformerLayerConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Float, Graph, Tensor, Var};

/// Attention sub-layer then feed-forward sub-layer, each followed by a
/// residual connection and layer normalization.
///
/// When the feed-forward output width differs from the model width (the
/// predictor emits `S * H2` channels) the second residual is dropped.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    cfg: TransformerLayerConfig,
    pub attention: MultiHeadAttention,
    pub norm1: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: Norm,
}

impl TransformerLayer {
    pub fn new<T: Float>(ps: &mut ParamSet<T>, name: &str, cfg: &TransformerLayerConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.ff_hidden == 0 || cfg.out_dim == 0 {
            return Err(Error::Config("feed-forward widths must be positive".into()));
        }
        let d = cfg.attention.model_dim;
        Ok(Self {
            cfg: cfg.clone(),
            attention: MultiHeadAttention::new(ps, &format!("{name}.attn"), &cfg.attention, rng)?,
            norm1: Norm::new(ps, &format!("{name}.norm1"), d),
            ff1: Linear::new(ps, &format!("{name}.ff1"), d, cfg.ff_hidden, rng),
            ff2: Linear::new(ps, &format!("{name}.ff2"), cfg.ff_hidden, cfg.out_dim, rng),
            norm2: Norm::new(ps, &format!("{name}.norm2"), cfg.out_dim),
        })
    }

    pub fn config(&self) -> &TransformerLayerConfig {
        &self.cfg
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let a = self.attention.forward(g, p, x)?;
        let h = g.add(x, a)?;
        let h = self.norm1.forward(g, p, h)?;
        let f = self.ff1.forward(g, p, h)?;
        let f = g.relu(f)?;
        let f = self.ff2.forward(g, p, f)?;
        let f = if self.cfg.out_dim == self.cfg.attention.model_dim {
            g.add(h, f)?
        } else {
            f
        };
        self.norm2.forward(g, p, f)
    }
}

/// Sinusoidal absolute position codes, `[frames, dim]`.
pub fn sinusoidal_positions<T: Float>(frames: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn(&[frames, dim], |i| {
        let (t, c) = ((i / dim) as f64, i % dim);
        let rate = 10_000f64.powf(-((c - c % 2) as f64) / dim as f64);
        T::of(if c % 2 == 0 { (t * rate).sin() } else { (t * rate).cos() })
    })
}

/// `D` stacked transformer layers followed by a feed-forward map to the
/// context width: latent frames in, context frames out.
#[derive(Clone, Debug)]
pub struct ContextNetwork {
    cfg: ArConfig,
    pub layers: Vec<TransformerLayer>,
    pub out: Linear,
}

impl ContextNetwork {
    pub fn new<T: Float>(ps: &mut ParamSet<T>, name: &str, cfg: &ArConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.layers == 0 {
            return Err(Error::Config("the context network needs at least one layer".into()));
        }
        if cfg.layer.out_dim != cfg.layer.attention.model_dim {
            return Err(Error::Config("stacked layers must preserve the model width".into()));
        }
        let layers = (0..cfg.layers)
            .map(|i| TransformerLayer::new(ps, &format!("{name}.{i}"), &cfg.layer, rng))
            .collect::<Result<Vec<_>>>()?;
        let out = Linear::new(ps, &format!("{name}.out"), cfg.layer.out_dim, cfg.final_dim, rng);
        Ok(Self {
            cfg: cfg.clone(),
            layers,
            out,
        })
    }

    pub fn config(&self) -> &ArConfig {
        &self.cfg
    }

    /// Output of the transformer stack, before the final map.
    pub fn hidden<T: Float>(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        let mut x = z;
        if self.cfg.positional_encoding {
            let (t, d) = (g.shape(z)[0], g.shape(z)[1]);
            let pe = g.input(sinusoidal_positions(t, d))?;
            x = g.add(x, pe)?;
        }
        for layer in &self.layers {
            x = layer.forward(g, p, x)?;
        }
        Ok(x)
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        let h = self.hidden(g, p, z)?;
        self.out.forward(g, p, h)
    }
}
