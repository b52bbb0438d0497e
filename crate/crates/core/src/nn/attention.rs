use super::linear::Linear;
use super::params::{Bound, ParamSet};
use super::AttentionConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Float, Graph, Var};

/// Multi-head scaled dot-product self-attention in which frame `t` attends
/// to frames `t - W + 1 ..= t` only.
///
/// Chunking is a band mask applied before the softmax, so bounded and
/// unbounded widths run through the same kernel.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    cfg: AttentionConfig,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl MultiHeadAttention {
    pub fn new<T: Float>(ps: &mut ParamSet<T>, name: &str, cfg: &AttentionConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        Ok(Self {
            cfg: cfg.clone(),
            q: Linear::new(ps, &format!("{name}.q"), d, d, rng),
            k: Linear::new(ps, &format!("{name}.k"), d, d, rng),
            v: Linear::new(ps, &format!("{name}.v"), d, d, rng),
            o: Linear::new(ps, &format!("{name}.o"), d, d, rng),
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    /// Projection weights, for tests that zero them.
    pub fn projections(&self) -> [&Linear; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let d = self.cfg.model_dim;
        if g.shape(x).len() != 2 || g.shape(x)[1] != d {
            return Err(Error::shape("attention", g.shape(x), &[0, d]));
        }
        let heads = self.cfg.heads;
        let dh = d / heads;
        let q = self.q.forward(g, p, x)?;
        let k = self.k.forward(g, p, x)?;
        let v = self.v.forward(g, p, x)?;
        let q = g.scale(q, 1.0 / (dh as f64).sqrt())?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (g.narrow(q, 1, h * dh, dh)?, g.narrow(k, 1, h * dh, dh)?, g.narrow(v, 1, h * dh, dh)?)
            };
            let scores = g.matmul_t(qh, kh, false, true)?;
            let weights = g.window_softmax(scores, self.cfg.width.frames())?;
            outs.push(g.matmul(weights, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
        self.o.forward(g, p, joined)
    }
}
