//! Full pre-training model: encoder (or log-Mel front end), context
//! network, and the objective-specific head.

use crate::config::{ModelConfig, Objective};
use crate::corpus::{log_mel, FeatureConfig, Utterance};
use crate::error::{Error, Result};
use crate::nn::{ArConfig, AttentionConfig, Bound, ContextNetwork, ConvEncoder, EncoderConfig, ParamSet, TransformerLayerConfig};
use crate::objectives::{apply_mask, bestrq_terms, cpc_loss, mask_spans, Codebook, CpcConfig, Predictor, PredictorConfig};
use crate::rng::{rng, rng_for, split, split_index};
use crate::tensor::{Float, Graph, Tensor, Var};

/// An utterance turned into model input.
#[derive(Clone, Debug, PartialEq)]
pub enum Prepared {
    /// Raw samples `[T1, 1]`.
    Audio { id: String, samples: Tensor<f32> },
    /// Log-Mel frames with their codebook targets computed on clean input.
    Features { id: String, features: Tensor<f32>, targets: Vec<usize> },
}

impl Prepared {
    pub fn id(&self) -> &str {
        match self {
            Prepared::Audio { id, .. } | Prepared::Features { id, .. } => id,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    features: FeatureConfig,
    pub params: ParamSet<f32>,
    encoder: Option<ConvEncoder>,
    context: ContextNetwork,
    predictor: Option<Predictor>,
    codebook: Option<Codebook>,
}

/// Name of the codebook blob inside checkpoints.
pub const CODEBOOK_BLOB: &str = "codebook.prototypes";

impl Model {
    /// Fresh weights drawn from `seed`.
    pub fn new(cfg: &ModelConfig, features: &FeatureConfig, seed: u64) -> Result<Self> {
        let mut ps = ParamSet::new();
        let mut r = rng_for(seed, "init");
        let bestrq = cfg.objective == Objective::BestRq;
        let (encoder, latent) = if bestrq {
            features.validate()?;
            (None, features.n_mels)
        } else {
            let enc = EncoderConfig {
                kernels: cfg.encoder_kernels.clone(),
                strides: cfg.encoder_strides.clone(),
                channels: cfg.channels,
                layer_norm: cfg.encoder_layer_norm,
            };
            (Some(ConvEncoder::new(&mut ps, "enc", &enc, &mut r)?), cfg.channels)
        };
        let ar = ArConfig {
            layers: cfg.layers,
            layer: TransformerLayerConfig {
                attention: AttentionConfig {
                    width: cfg.width,
                    heads: cfg.heads,
                    model_dim: latent,
                },
                ff_hidden: cfg.ff_hidden,
                out_dim: latent,
            },
            final_dim: if bestrq { cfg.codebook_size } else { cfg.context_dim },
            positional_encoding: cfg.positional_encoding,
        };
        let context = ContextNetwork::new(&mut ps, "ar", &ar, &mut r)?;
        let (predictor, codebook) = if bestrq {
            if !(0.0..=1.0).contains(&cfg.mask_prob) || cfg.mask_span == 0 {
                return Err(Error::Config("mask probability must lie in [0, 1] and span be positive".into()));
            }
            (None, Some(Codebook::new(cfg.codebook_size, latent, split(seed, "codebook"))?))
        } else {
            CpcConfig {
                steps: cfg.steps,
                negatives: cfg.negatives,
                mode: cfg.objective.cpc_mode().expect("cpc objective"),
            }
            .validate()?;
            let pc = PredictorConfig {
                steps: cfg.steps,
                input_dim: cfg.context_dim,
                out_dim: latent,
                heads: cfg.heads,
                width: cfg.predictor_width,
                ff_hidden: cfg.predictor_ff_hidden,
                positional_encoding: cfg.positional_encoding,
            };
            (Some(Predictor::new(&mut ps, "pred", &pc, &mut r)?), None)
        };
        Ok(Self {
            cfg: cfg.clone(),
            features: features.clone(),
            params: ps,
            encoder,
            context,
            predictor,
            codebook,
        })
    }

    /// Rebuilds a model from stored weights, checking names and shapes.
    pub fn from_weights(cfg: &ModelConfig, features: &FeatureConfig, weights: &[(String, Tensor<f32>)]) -> Result<Self> {
        let mut m = Self::new(cfg, features, 0)?;
        let lookup = |name: &str| weights.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        for id in m.params.ids().collect::<Vec<_>>() {
            let name = m.params.name(id).to_string();
            let t = lookup(&name).ok_or_else(|| Error::invalid(format!("checkpoint lacks weight {name}")))?;
            if t.shape() != m.params.get(id).shape() {
                return Err(Error::shape("load weights", t.shape(), m.params.get(id).shape()));
            }
            *m.params.get_mut(id) = t.clone();
        }
        if let Some(cb) = &mut m.codebook {
            let protos = lookup(CODEBOOK_BLOB).ok_or_else(|| Error::invalid("checkpoint lacks the codebook"))?;
            *cb = Codebook::from_parts(protos.clone(), cb.seed())?;
        }
        Ok(m)
    }

    /// Every weight plus the codebook, by name.
    pub fn weights(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out: Vec<(String, Tensor<f32>)> = self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        if let Some(cb) = &self.codebook {
            out.push((CODEBOOK_BLOB.to_string(), cb.prototypes().clone()));
        }
        out
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn encoder(&self) -> Option<&ConvEncoder> {
        self.encoder.as_ref()
    }

    pub fn context(&self) -> &ContextNetwork {
        &self.context
    }

    pub fn predictor(&self) -> Option<&Predictor> {
        self.predictor.as_ref()
    }

    pub fn codebook(&self) -> Option<&Codebook> {
        self.codebook.as_ref()
    }

    /// Frames of context produced for `samples` of audio.
    pub fn frames_for(&self, samples: usize) -> usize {
        match &self.encoder {
            Some(e) => e.config().frames_for(samples),
            None => self.features.frames_for(samples),
        }
    }

    /// Smallest utterance, in samples, the front end accepts.
    pub fn min_input_samples(&self) -> usize {
        match &self.encoder {
            Some(e) => e.config().hop(),
            None => self.features.window(),
        }
    }

    /// Smallest utterance, in samples, the objective can score.
    pub fn min_samples(&self) -> usize {
        match &self.encoder {
            Some(e) => (self.cfg.steps + 1) * e.config().hop(),
            None => self.features.window(),
        }
    }

    /// Width of exported representations.
    pub fn representation_dim(&self) -> usize {
        match self.cfg.objective {
            Objective::BestRq => self.features.n_mels,
            _ => self.cfg.context_dim,
        }
    }

    pub fn prepare(&self, u: &Utterance) -> Result<Prepared> {
        if u.samples.len() < self.min_input_samples() {
            return Err(Error::invalid(format!(
                "utterance {} has {} samples, fewer than the {} the front end needs",
                u.id,
                u.samples.len(),
                self.min_input_samples()
            )));
        }
        Ok(match &self.codebook {
            None => Prepared::Audio {
                id: u.id.clone(),
                samples: Tensor::new(&[u.samples.len(), 1], u.samples.clone())?,
            },
            Some(cb) => {
                let features = log_mel(&u.samples, &self.features)?;
                let targets = cb.targets(&features)?;
                Prepared::Features {
                    id: u.id.clone(),
                    features,
                    targets,
                }
            }
        })
    }

    fn latents<T: Float>(&self, g: &mut Graph<T>, p: &Bound, input: &Prepared) -> Result<Var> {
        match (input, &self.encoder) {
            (Prepared::Audio { samples, .. }, Some(enc)) => {
                let x = g.input(samples.cast())?;
                enc.forward(g, p, x)
            }
            (Prepared::Features { features, .. }, None) => g.input(features.cast()),
            _ => Err(Error::invalid("input kind does not match the model objective")),
        }
    }

    /// Objective on one batch; `None` when no frame is scored.
    pub fn batch_loss<T: Float>(&self, g: &mut Graph<T>, p: &Bound, batch: &[&Prepared], seed: u64) -> Result<Option<Var>> {
        if batch.is_empty() {
            return Ok(None);
        }
        match self.cfg.objective.cpc_mode() {
            Some(mode) => {
                let pred = self.predictor.as_ref().expect("cpc model has a predictor");
                let (mut zs, mut vs) = (Vec::new(), Vec::new());
                for input in batch {
                    let z = self.latents(g, p, input)?;
                    let c = self.context.forward(g, p, z)?;
                    vs.push(pred.forward(g, p, c)?);
                    zs.push(z);
                }
                let cfg = CpcConfig {
                    steps: self.cfg.steps,
                    negatives: self.cfg.negatives,
                    mode,
                };
                cpc_loss(g, &zs, &vs, &cfg, split(seed, "negatives")).map(Some)
            }
            None => {
                let (mut sums, mut count) = (Vec::new(), 0);
                for (u, input) in batch.iter().enumerate() {
                    let Prepared::Features { targets, .. } = input else {
                        return Err(Error::invalid("input kind does not match the model objective"));
                    };
                    let z = self.latents(g, p, input)?;
                    let t = g.shape(z)[0];
                    let mut r = rng(split_index(split(seed, "mask"), u as u64));
                    let mask = mask_spans(t, self.cfg.mask_prob, self.cfg.mask_span, &mut r)?;
                    let masked = apply_mask(g, z, &mask, self.cfg.mask_fill, &mut r)?;
                    let logits = self.context.forward(g, p, masked)?;
                    if let Some((s, n)) = bestrq_terms(g, logits, targets, &mask, self.cfg.loss_scope)? {
                        sums.push(s);
                        count += n;
                    }
                }
                if count == 0 {
                    return Ok(None);
                }
                let total = if sums.len() == 1 { sums[0] } else {
                    let all = g.concat(&sums, 0)?;
                    g.sum(all)?
                };
                g.scale(total, -1.0 / count as f64).map(Some)
            }
        }
    }

    /// Context frames exported as the representation: the context network
    /// output for the contrastive objectives, the attention stack output
    /// (before the codebook logits) for masked prediction.
    pub fn represent(&self, input: &Prepared) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false)?;
        let z = self.latents(&mut g, &p, input)?;
        let c = match self.cfg.objective {
            Objective::BestRq => self.context.hidden(&mut g, &p, z)?,
            _ => self.context.forward(&mut g, &p, z)?,
        };
        Ok(g.value(c).clone())
    }
}
