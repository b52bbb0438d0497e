use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, AttentionConfig, Bound, ParamSet, TransformerLayer, TransformerLayerConfig, Width};
use crate::rng::Rng;
use crate::tensor::{Float, Graph, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorConfig {
    /// Number of future steps `S`.
    pub steps: usize,
    /// Width of the context frames fed in.
    pub input_dim: usize,
    /// Width of each prediction, which must match the latent width.
    pub out_dim: usize,
    pub heads: usize,
    pub width: Width,
    pub ff_hidden: usize,
    pub positional_encoding: bool,
}

impl PredictorConfig {
    pub fn layer(&self) -> TransformerLayerConfig {
        TransformerLayerConfig {
            attention: AttentionConfig {
                width: self.width,
                heads: self.heads,
                model_dim: self.input_dim,
            },
            ff_hidden: self.ff_hidden,
            out_dim: self.steps * self.out_dim,
        }
    }
}

/// One causal transformer layer whose output of width `S * out_dim` is cut
/// into `S` prediction sequences.
#[derive(Clone, Debug)]
pub struct Predictor {
    cfg: PredictorConfig,
    pub layer: TransformerLayer,
}

impl Predictor {
    pub fn new<T: Float>(ps: &mut ParamSet<T>, name: &str, cfg: &PredictorConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.steps == 0 {
            return Err(Error::Config("the predictor needs at least one step".into()));
        }
        Ok(Self {
            cfg: cfg.clone(),
            layer: TransformerLayer::new(ps, name, &cfg.layer(), rng)?,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }

    /// `v[s - 1]` predicts the latent `s` frames ahead.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, c: Var) -> Result<Vec<Var>> {
        let mut x = c;
        if self.cfg.positional_encoding {
            let (t, d) = (g.shape(c)[0], g.shape(c)[1]);
            let pe = g.input(sinusoidal_positions(t, d))?;
            x = g.add(x, pe)?;
        }
        let y = self.layer.forward(g, p, x)?;
        if self.cfg.steps == 1 {
            return Ok(vec![y]);
        }
        g.split(y, 1, &vec![self.cfg.out_dim; self.cfg.steps])
    }
}
