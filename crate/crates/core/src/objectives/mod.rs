//! Pre-training objectives: the multi-step predictor, contrastive
//! prediction over sampled negatives (average or last step), and masked
//! prediction of random-prototype codes.

mod bestrq;
mod cpc;
mod predictor;

pub use bestrq::{apply_mask, bestrq_loss, bestrq_terms, mask_spans, Codebook, LossScope, MaskFill};
pub use cpc::{cpc_loss, plan_candidates, sample_negatives, CpcConfig, CpcMode, StepPlan};
pub use predictor::{Predictor, PredictorConfig};
