//! Pre-training loop: batching in corpus order, Adam updates, validation
//! after every epoch with best-checkpoint retention, resumption, and
//! representation extraction.

mod adam;
mod checkpoint;

use std::ops::Range;
use std::path::Path;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, EpochLoss, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::abx::write_rep;
use crate::config::RunConfig;
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::model::{Model, Prepared};
use crate::rng::{split, split_index};
use crate::tensor::{Graph, Tensor};

/// Consecutive groups of `batch_size` items in order; the last may be short.
pub fn make_batches(n: usize, batch_size: usize) -> Vec<Range<usize>> {
    let size = batch_size.max(1);
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

/// Which of `n` items are held out: `round(n * fraction)` of them (at least
/// one when the fraction is positive and `n >= 2`), evenly spread.
pub fn validation_mask(n: usize, fraction: f64) -> Vec<bool> {
    let mut k = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        k = k.clamp(1, n - 1);
    }
    let mut mask = vec![false; n];
    for j in 0..k {
        mask[(2 * j + 1) * n / (2 * k)] = true;
    }
    mask
}

/// Splits utterances into disjoint training and validation lists.
pub fn split_validation(utts: Vec<Utterance>, fraction: f64) -> (Vec<Utterance>, Vec<Utterance>) {
    let mask = validation_mask(utts.len(), fraction);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (u, held) in utts.into_iter().zip(mask) {
        if held {
            val.push(u)
        } else {
            train.push(u)
        }
    }
    (train, val)
}

/// Something that can be trained one epoch at a time and scored on held
/// out data.
pub trait Learner {
    /// Runs epoch `epoch` (1-based) and returns its mean training loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;
    /// Validation loss of the current weights; must not change them.
    fn validation_loss(&mut self) -> Result<f64>;
    /// Snapshot of the current state.
    fn checkpoint(&self, epoch: usize, val_loss: f64, history: &[EpochLoss], best: Option<(usize, f64)>) -> Checkpoint;
}

/// Training progress carried across a resumption.
#[derive(Clone, Debug, Default)]
pub struct FitState {
    pub history: Vec<EpochLoss>,
    pub best: Option<Checkpoint>,
}

impl FitState {
    pub fn best_epoch(&self) -> Option<(usize, f64)> {
        self.best.as_ref().map(|b| (b.epoch, b.val_loss))
    }
}

/// Trains until `epochs` epochs are complete, validating after each one and
/// keeping the checkpoint with the lowest validation loss (earliest on
/// ties). `on_epoch` sees every epoch's losses, the latest checkpoint and
/// whether it became the best.
pub fn fit<L: Learner>(
    learner: &mut L,
    epochs: usize,
    mut state: FitState,
    mut on_epoch: impl FnMut(&EpochLoss, &Checkpoint, bool) -> Result<()>,
) -> Result<FitState> {
    let start = state.history.len() + 1;
    for epoch in start..=epochs {
        let train = learner.train_epoch(epoch)?;
        let val = learner.validation_loss()?;
        if !val.is_finite() {
            return Err(Error::Numerical(format!("validation loss is {val} after epoch {epoch}")));
        }
        let entry = EpochLoss { epoch, train, val };
        state.history.push(entry);
        let improved = state.best.as_ref().is_none_or(|b| val < b.val_loss);
        let best = if improved { Some((epoch, val)) } else { state.best_epoch() };
        let ck = learner.checkpoint(epoch, val, &state.history, best);
        on_epoch(&entry, &ck, improved)?;
        if improved {
            state.best = Some(ck);
        }
    }
    if state.best.is_none() {
        return Err(Error::invalid("no epoch was run"));
    }
    Ok(state)
}

/// Loss curve as `epoch,train_loss,val_loss` lines with a header.
pub fn curve_csv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for h in history {
        s += &format!("{},{},{}\n", h.epoch, h.train, h.val);
    }
    s
}

/// A model with its optimizer state and the prepared data splits.
pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub adam: Adam,
    train: Vec<Prepared>,
    val: Vec<Prepared>,
}

fn prepare_all(model: &Model, utts: &[Utterance]) -> Result<Vec<Prepared>> {
    let mut out = Vec::with_capacity(utts.len());
    for u in utts {
        if u.samples.len() < model.min_samples() {
            log::warn!("utterance {} is too short for the objective; skipped", u.id);
            continue;
        }
        out.push(model.prepare(u)?);
    }
    Ok(out)
}

impl Trainer {
    pub fn new(config: RunConfig, train: &[Utterance], val: &[Utterance]) -> Result<Self> {
        config.train.validate()?;
        let model = Model::new(&config.model, &config.features, split(config.train.seed, "model"))?;
        Self::with_model(config, model, train, val)
    }

    pub fn with_model(config: RunConfig, model: Model, train: &[Utterance], val: &[Utterance]) -> Result<Self> {
        let train = prepare_all(&model, train)?;
        let val = prepare_all(&model, val)?;
        if train.is_empty() {
            return Err(Error::invalid("no training utterance is long enough for the objective"));
        }
        if val.is_empty() {
            return Err(Error::invalid("the validation set is empty"));
        }
        let adam = Adam::new(&config.train, &model.params);
        Ok(Self {
            config,
            model,
            adam,
            train,
            val,
        })
    }

    /// Restores weights and optimizer state from a checkpoint written by
    /// [`Learner::checkpoint`].
    pub fn resume(ck: &Checkpoint, train: &[Utterance], val: &[Utterance]) -> Result<Self> {
        let config = RunConfig::from_toml(&ck.config)?;
        let model = Model::from_weights(&config.model, &config.features, &ck.blobs)?;
        let mut t = Self::with_model(config, model, train, val)?;
        for (i, (name, _)) in t.model.params.iter().enumerate() {
            for (prefix, dst) in [("adam.m.", &mut t.adam.m[i]), ("adam.v.", &mut t.adam.v[i])] {
                let blob = ck
                    .blob(&format!("{prefix}{name}"))
                    .ok_or_else(|| Error::invalid(format!("checkpoint lacks optimizer state for {name}")))?;
                *dst = blob.data().to_vec();
            }
        }
        t.adam.t = ck.adam_steps;
        Ok(t)
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn val_len(&self) -> usize {
        self.val.len()
    }

    fn batch_seed(&self, label: &str, epoch: usize, batch: usize) -> u64 {
        split_index(split_index(split(self.config.train.seed, label), epoch as u64), batch as u64)
    }

    /// Loss and parameter gradients on one batch.
    pub fn batch_gradients(&self, batch: &[&Prepared], seed: u64) -> Result<Option<(f64, Vec<Tensor<f32>>)>> {
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g, true)?;
        let Some(loss) = self.model.batch_loss(&mut g, &p, batch, seed)? else {
            return Ok(None);
        };
        g.backward(loss)?;
        let grads = p.vars().iter().map(|&v| g.grad(v).expect("trainable parameter")).collect();
        Ok(Some((g.item(loss) as f64, grads)))
    }

    /// Loss on one batch without gradients.
    pub fn batch_value(&self, batch: &[&Prepared], seed: u64) -> Result<Option<f64>> {
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g, false)?;
        Ok(self.model.batch_loss(&mut g, &p, batch, seed)?.map(|l| g.item(l) as f64))
    }
}

impl Learner for Trainer {
    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let batches = make_batches(self.train.len(), self.config.train.batch_size);
        let mut losses = Vec::with_capacity(batches.len());
        for (b, range) in batches.into_iter().enumerate() {
            let batch: Vec<&Prepared> = self.train[range].iter().collect();
            let seed = self.batch_seed("train", epoch, b);
            let Some((loss, grads)) = self.batch_gradients(&batch, seed)? else { continue };
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss is {loss} at epoch {epoch}, batch {b}")));
            }
            let norm = self.adam.step(&mut self.model.params, &grads);
            if !norm.is_finite() {
                return Err(Error::Numerical(format!("gradient norm is {norm} at epoch {epoch}, batch {b}")));
            }
            log::debug!("epoch {epoch} batch {b}: loss {loss:.4}, gradient norm {norm:.3}");
            losses.push(loss);
        }
        if losses.is_empty() {
            return Err(Error::invalid(format!("epoch {epoch} scored no batch")));
        }
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    fn validation_loss(&mut self) -> Result<f64> {
        let batches = make_batches(self.val.len(), self.config.train.batch_size);
        let mut losses = Vec::new();
        for (b, range) in batches.into_iter().enumerate() {
            let batch: Vec<&Prepared> = self.val[range].iter().collect();
            if let Some(l) = self.batch_value(&batch, self.batch_seed("val", 0, b))? {
                losses.push(l);
            }
        }
        if losses.is_empty() {
            return Err(Error::invalid("validation scored no batch"));
        }
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    fn checkpoint(&self, epoch: usize, val_loss: f64, history: &[EpochLoss], best: Option<(usize, f64)>) -> Checkpoint {
        let mut blobs = self.model.weights();
        for (i, (name, t)) in self.model.params.iter().enumerate() {
            for (prefix, data) in [("adam.m.", &self.adam.m[i]), ("adam.v.", &self.adam.v[i])] {
                let state = Tensor::new(t.shape(), data.clone()).expect("moment matches parameter shape");
                blobs.push((format!("{prefix}{name}"), state));
            }
        }
        Checkpoint {
            config: self.config.to_toml(),
            epoch,
            val_loss,
            history: history.to_vec(),
            best,
            adam_steps: self.adam.t,
            blobs,
        }
    }
}

/// Loads the model stored in a checkpoint.
pub fn load_model(ck: &Checkpoint) -> Result<(RunConfig, Model)> {
    let config = RunConfig::from_toml(&ck.config)?;
    let model = Model::from_weights(&config.model, &config.features, &ck.blobs)?;
    Ok((config, model))
}

/// Representation of one utterance.
pub fn extract(model: &Model, u: &Utterance) -> Result<Tensor<f32>> {
    model.represent(&model.prepare(u)?)
}

/// Writes `<out_dir>/<id>.rep` for every utterance.
pub fn extract_to(model: &Model, utts: &[Utterance], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for u in utts {
        let rep = extract(model, u)?;
        write_rep(&out_dir.join(format!("{}.rep", u.id)), &rep)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
