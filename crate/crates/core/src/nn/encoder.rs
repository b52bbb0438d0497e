use super::linear::Norm;
use super::params::{Bound, ParamId, ParamSet};
use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Float, Graph, Var};

#[derive(Clone, Debug)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    norm: Option<Norm>,
    kernel: usize,
    stride: usize,
}

/// Stack of strided causal convolutions mapping raw audio `[T1, 1]` to
/// latent frames `[T1 / hop, channels]`.
///
/// Each layer pads `kernel - stride` zeros on the left only, so frame `t`
/// sees samples up to `(t + 1) * hop - 1` and nothing later.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    cfg: EncoderConfig,
    layers: Vec<ConvLayer>,
}

impl ConvEncoder {
    pub fn new<T: Float>(ps: &mut ParamSet<T>, name: &str, cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut cin = 1;
        let mut layers = Vec::new();
        for (i, (&k, &s)) in cfg.kernels.iter().zip(&cfg.strides).enumerate() {
            let fan_in = k * cin;
            let w = ps.add_uniform(format!("{name}.{i}.w"), &[k, cin, cfg.channels], fan_in, rng);
            let b = ps.add_uniform(format!("{name}.{i}.b"), &[cfg.channels], fan_in, rng);
            let norm = cfg
                .layer_norm
                .then(|| Norm::new(ps, &format!("{name}.{i}.norm"), cfg.channels));
            layers.push(ConvLayer {
                w,
                b,
                norm,
                kernel: k,
                stride: s,
            });
            cin = cfg.channels;
        }
        Ok(Self {
            cfg: cfg.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, audio: Var) -> Result<Var> {
        let shape = g.shape(audio).to_vec();
        if shape.len() != 2 || shape[1] != 1 {
            return Err(Error::invalid(format!("encoder expects audio shaped [T, 1], got {shape:?}")));
        }
        if shape[0] < self.cfg.hop() {
            return Err(Error::invalid(format!(
                "audio of {} samples is shorter than one hop of {}",
                shape[0],
                self.cfg.hop()
            )));
        }
        let mut x = audio;
        for layer in &self.layers {
            x = g.conv1d(x, p[layer.w], p[layer.b], layer.stride, layer.kernel - layer.stride)?;
            if let Some(norm) = &layer.norm {
                x = norm.forward(g, p, x)?;
            }
            x = g.relu(x)?;
        }
        Ok(x)
    }
}
