use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng, Rng};
use crate::tensor::{Float, Graph, Tensor, Var};

/// Frozen random prototypes used to turn feature frames into class targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    prototypes: Tensor<f32>,
    seed: u64,
}

impl Codebook {
    /// `size` prototypes of width `dim`: standard normal coordinates,
    /// scaled to unit norm so that they live on the same sphere as the
    /// normalized frames they are compared with.
    pub fn new(size: usize, dim: usize, seed: u64) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::Config("codebook size and width must be positive".into()));
        }
        let mut r = rng(seed);
        let mut data = Vec::with_capacity(size * dim);
        for _ in 0..size {
            let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            data.extend(row.iter().map(|v| (v / norm) as f32));
        }
        let prototypes = Tensor::new(&[size, dim], data)?;
        Ok(Self { prototypes, seed })
    }

    /// Rebuilds a codebook from stored prototypes.
    pub fn from_parts(prototypes: Tensor<f32>, seed: u64) -> Result<Self> {
        if prototypes.rank() != 2 {
            return Err(Error::invalid(format!(
                "codebook prototypes must be a matrix, got {:?}",
                prototypes.shape()
            )));
        }
        Ok(Self { prototypes, seed })
    }

    pub fn size(&self) -> usize {
        self.prototypes.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.prototypes.shape()[1]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn prototypes(&self) -> &Tensor<f32> {
        &self.prototypes
    }

    /// Index of the prototype nearest to `z / |z|`, lowest index on ties.
    pub fn quantize(&self, z: &[f32]) -> Result<usize> {
        if z.len() != self.dim() {
            return Err(Error::shape("quantize", &[z.len()], &[self.dim()]));
        }
        let norm = z.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::invalid("quantize: frame has zero or non-finite norm"));
        }
        let unit: Vec<f64> = z.iter().map(|&v| v as f64 / norm).collect();
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.prototypes.data().chunks(self.dim()).enumerate() {
            let d: f64 = unit.iter().zip(p).map(|(a, &b)| (a - b as f64).powi(2)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok(best.1)
    }

    /// Targets for every row of a `[T, dim]` feature matrix.
    pub fn targets(&self, features: &Tensor<f32>) -> Result<Vec<usize>> {
        let (_, d) = features
            .dims2()
            .ok_or_else(|| Error::invalid(format!("features must be a matrix, got {:?}", features.shape())))?;
        features.data().chunks(d).map(|row| self.quantize(row)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskFill {
    #[default]
    Zero,
    Gaussian,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossScope {
    /// Every frame contributes.
    #[default]
    All,
    /// Only masked frames contribute.
    Masked,
}

/// Each frame starts a span of `span` frames with probability `p`; a frame
/// is masked when any span covers it.
pub fn mask_spans(frames: usize, p: f64, span: usize, rng: &mut Rng) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&p) || span == 0 {
        return Err(Error::invalid(format!(
            "mask probability {p} must lie in [0, 1] and span {span} must be positive"
        )));
    }
    let mut mask = vec![false; frames];
    let mut covered_until = 0;
    for t in 0..frames {
        if rng.random_bool(p) {
            covered_until = covered_until.max(t + span);
        }
        if t < covered_until {
            mask[t] = true;
        }
    }
    Ok(mask)
}

/// Replaces masked rows of `x: [T, D]` by zeros or standard normal noise.
/// Masked inputs receive exactly zero gradient.
pub fn apply_mask<T: Float>(g: &mut Graph<T>, x: Var, mask: &[bool], fill: MaskFill, rng: &mut Rng) -> Result<Var> {
    let (t, d) = (g.shape(x)[0], g.shape(x)[1]);
    if mask.len() != t {
        return Err(Error::shape("apply_mask", g.shape(x), &[mask.len()]));
    }
    if !mask.contains(&true) {
        return Ok(x);
    }
    let keep = g.input(Tensor::from_fn(&[t, d], |i| if mask[i / d] { T::zero() } else { T::one() }))?;
    let kept = g.mul(x, keep)?;
    match fill {
        MaskFill::Zero => Ok(kept),
        MaskFill::Gaussian => {
            let noise = Tensor::from_fn(&[t, d], |i| {
                if mask[i / d] {
                    T::of(StandardNormal.sample(rng))
                } else {
                    T::zero()
                }
            });
            let noise = g.input(noise)?;
            g.add(kept, noise)
        }
    }
}

/// Summed negative log-likelihood of `targets` under `logits: [T, H3]` over
/// the frames selected by `scope`, with the number of frames scored.
/// Returns `None` when no frame is scored.
pub fn bestrq_terms<T: Float>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[usize],
    mask: &[bool],
    scope: LossScope,
) -> Result<Option<(Var, usize)>> {
    let (t, _) = (g.shape(logits)[0], g.shape(logits)[1]);
    if targets.len() != t || mask.len() != t {
        return Err(Error::shape("bestrq_loss", g.shape(logits), &[targets.len(), mask.len()]));
    }
    let logp = g.log_softmax(logits, 1)?;
    let picked = g.pick(logp, targets.to_vec())?;
    match scope {
        LossScope::All => Ok(Some((g.sum(picked)?, t))),
        LossScope::Masked => {
            let n = mask.iter().filter(|&&m| m).count();
            if n == 0 {
                return Ok(None);
            }
            let sel = g.input(Tensor::from_fn(&[t], |i| if mask[i] { T::one() } else { T::zero() }))?;
            let kept = g.mul(picked, sel)?;
            Ok(Some((g.sum(kept)?, n)))
        }
    }
}

/// Mean negative log-likelihood of the codebook targets over scored frames.
pub fn bestrq_loss<T: Float>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[usize],
    mask: &[bool],
    scope: LossScope,
    codebook_size: usize,
) -> Result<Var> {
    if g.shape(logits).len() != 2 || g.shape(logits)[1] != codebook_size {
        return Err(Error::shape("bestrq_loss", g.shape(logits), &[targets.len(), codebook_size]));
    }
    let (sum, n) = bestrq_terms(g, logits, targets, mask, scope)?
        .ok_or_else(|| Error::invalid("bestrq_loss: no frame is masked"))?;
    g.scale(sum, -1.0 / n as f64)
}
