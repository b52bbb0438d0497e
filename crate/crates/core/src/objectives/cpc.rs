use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng, split_index, Rng};
use crate::tensor::{Float, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CpcMode {
    /// Mean of the per-step losses for steps `1..=S`.
    Average,
    /// Only the loss at step `S`.
    Last,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpcConfig {
    pub steps: usize,
    /// Candidates per prediction: the positive plus `negatives - 1` draws.
    pub negatives: usize,
    pub mode: CpcMode,
}

impl CpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("CPC needs at least one prediction step".into()));
        }
        if self.negatives < 2 {
            return Err(Error::Config(format!(
                "CPC needs at least 2 candidates per prediction, got {}",
                self.negatives
            )));
        }
        Ok(())
    }

    /// Steps that contribute to the loss.
    pub fn scored_steps(&self) -> Vec<usize> {
        match self.mode {
            CpcMode::Average => (1..=self.steps).collect(),
            CpcMode::Last => vec![self.steps],
        }
    }
}

/// Candidate indices for one prediction: the positive first, then `m - 1`
/// draws uniform with replacement over a pool of `pool` frames. The
/// positive may be redrawn.
pub fn sample_negatives(pool: usize, positive: usize, m: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if pool == 0 {
        return Err(Error::invalid("negative sampling needs a non-empty frame pool"));
    }
    if positive >= pool || m < 2 {
        return Err(Error::invalid(format!(
            "positive {positive} must lie in the pool of {pool} and M = {m} must be at least 2"
        )));
    }
    let mut out = Vec::with_capacity(m);
    out.push(positive);
    out.extend((1..m).map(|_| rng.random_range(0..pool)));
    Ok(out)
}

/// Candidate table for one prediction step: for each utterance, `T - S`
/// rows of `M` pool indices, positive first.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub step: usize,
    pub rows: Vec<Vec<usize>>,
}

/// Draws every candidate for a batch whose utterances have `lengths`
/// latent frames. The pool is all frames of the batch, concatenated in
/// utterance order. Each step draws from its own stream, so the plan for
/// step `s` does not depend on which other steps are scored.
pub fn plan_candidates(lengths: &[usize], cfg: &CpcConfig, seed: u64) -> Result<Vec<StepPlan>> {
    cfg.validate()?;
    for &t in lengths {
        if t <= cfg.steps {
            return Err(Error::invalid(format!(
                "CPC needs more latent frames than prediction steps, got {t} frames for S = {}",
                cfg.steps
            )));
        }
    }
    let pool: usize = lengths.iter().sum();
    let mut plans = Vec::new();
    for s in cfg.scored_steps() {
        let mut r = rng(split_index(seed, s as u64));
        let mut rows = Vec::with_capacity(lengths.len());
        let mut offset = 0;
        for &t in lengths {
            let n = t - cfg.steps;
            let mut row = Vec::with_capacity(n * cfg.negatives);
            for i in 0..n {
                row.extend(sample_negatives(pool, offset + i + s, cfg.negatives, &mut r)?);
            }
            rows.push(row);
            offset += t;
        }
        plans.push(StepPlan { step: s, rows });
    }
    Ok(plans)
}

/// Contrastive loss over a batch.
///
/// `z[u]` are the latents `[T_u, H]` of utterance `u` and `v[u][s - 1]` its
/// predictions `s` steps ahead, each `[T_u, H]`. For every scored step and
/// every frame `t < T_u - S`, the prediction `v_t` scores the positive
/// `z_{t+s}` against its sampled candidates; the negative log softmax of
/// the positive is averaged over frames of the whole batch and over steps.
pub fn cpc_loss<T: Float>(g: &mut Graph<T>, z: &[Var], v: &[Vec<Var>], cfg: &CpcConfig, seed: u64) -> Result<Var> {
    if z.is_empty() || z.len() != v.len() {
        return Err(Error::invalid(format!(
            "CPC loss over {} latent sequences and {} prediction sets",
            z.len(),
            v.len()
        )));
    }
    let lengths: Vec<usize> = z.iter().map(|&x| g.shape(x)[0]).collect();
    let width = g.shape(z[0])[1];
    for (u, preds) in v.iter().enumerate() {
        if preds.len() != cfg.steps {
            return Err(Error::invalid(format!(
                "utterance {u}: {} prediction sequences for S = {}",
                preds.len(),
                cfg.steps
            )));
        }
        for &p in preds {
            if g.shape(p) != [lengths[u], width] {
                return Err(Error::shape("cpc_loss", g.shape(p), &[lengths[u], width]));
            }
        }
    }
    let plans = plan_candidates(&lengths, cfg, seed)?;
    let pool = if z.len() == 1 { z[0] } else { g.concat(z, 0)? };
    let mut terms = Vec::new();
    for plan in plans {
        for (u, idx) in plan.rows.into_iter().enumerate() {
            let n = lengths[u] - cfg.steps;
            let pred = g.narrow(v[u][plan.step - 1], 0, 0, n)?;
            let scores = g.gather_dot(pred, pool, idx, cfg.negatives)?;
            let logp = g.log_softmax(scores, 1)?;
            let pos = g.pick(logp, vec![0; n])?;
            terms.push(g.sum(pos)?);
        }
    }
    let total = if terms.len() == 1 { terms[0] } else {
        let stacked = g.concat(&terms, 0)?;
        g.sum(stacked)?
    };
    let frames: usize = lengths.iter().map(|t| t - cfg.steps).sum();
    let denom = (frames * cfg.scored_steps().len()) as f64;
    g.scale(total, -1.0 / denom)
}
