//! Directory-level steps that read and write whole runs on disk.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::abx::{evaluate, extract_segments, read_rep, AbxOptions, AbxReport, Condition};
use crate::config::RunConfig;
use crate::corpus::{Alignments, Corpus};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::split;
use crate::tensor::Tensor;
use crate::trainer::{curve_csv, extract, fit, split_validation, Checkpoint, EpochLoss, FitState, Trainer};

pub const CONFIG_ECHO: &str = "config.toml";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const CURVES: &str = "curves.csv";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// The randomly initialized model a training run with `cfg` starts from.
pub fn initial_model(cfg: &RunConfig) -> Result<Model> {
    Model::new(&cfg.model, &cfg.features, split(cfg.train.seed, "model"))
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains on `corpus` and writes the effective config, the best and last
/// checkpoints and the loss curve into `out_dir`, refreshing them after
/// every epoch so a failed run leaves its diagnostics behind. With
/// `resume`, training continues from `out_dir/last.ckpt` up to
/// `cfg.train.epochs`.
pub fn pretrain(cfg: &RunConfig, corpus: &Corpus, out_dir: &Path, resume: bool) -> Result<PretrainOutcome> {
    cfg.train.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let utts = corpus.clone().restrict(&cfg.train.subsets).load_all()?;
    if utts.is_empty() {
        return Err(Error::invalid("the corpus holds no utterance for the selected subsets"));
    }
    let (train, val) = split_validation(utts, cfg.train.validation_fraction);
    log::info!("{} training and {} validation utterances", train.len(), val.len());

    let last_path = out_dir.join(LAST_CHECKPOINT);
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let (mut trainer, state) = if resume {
        let last = Checkpoint::load(&last_path)?;
        let saved = RunConfig::from_toml(&last.config)?;
        if saved.model != cfg.model || saved.features != cfg.features {
            return Err(Error::Config(format!(
                "{} was trained with a different model or feature config",
                last_path.display()
            )));
        }
        let mut t = Trainer::resume(&last, &train, &val)?;
        t.config.train.epochs = cfg.train.epochs;
        let best = Checkpoint::load(&best_path)?;
        log::info!("resuming after epoch {}", last.epoch);
        let state = FitState {
            history: last.history.clone(),
            best: Some(best),
        };
        (t, state)
    } else {
        (Trainer::new(cfg.clone(), &train, &val)?, FitState::default())
    };
    write(&out_dir.join(CONFIG_ECHO), trainer.config.to_toml())?;

    let mut history = state.history.clone();
    let epochs = trainer.config.train.epochs;
    let state = fit(&mut trainer, epochs, state, |e, ck, improved| {
        log::info!("epoch {}: train {:.4}, validation {:.4}{}", e.epoch, e.train, e.val, if improved { " *" } else { "" });
        history.push(*e);
        write(&out_dir.join(CURVES), curve_csv(&history))?;
        ck.save(&last_path)?;
        if improved {
            ck.save(&best_path)?;
        }
        Ok(())
    })?;
    let best = state.best.expect("fit ran at least one epoch");
    Ok(PretrainOutcome {
        history: state.history,
        best_epoch: best.epoch,
        best_val_loss: best.val_loss,
    })
}

/// Writes `<id>.rep` for every utterance of the corpus, loading one at a
/// time. Returns the number of files written.
pub fn extract_corpus(model: &Model, corpus: &Corpus, out_dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for entry in corpus.entries() {
        let u = corpus.load(entry)?;
        let rep = extract(model, &u)?;
        crate::abx::write_rep(&out_dir.join(format!("{}.rep", u.id)), &rep)?;
    }
    Ok(corpus.entries().len())
}

/// Conditions for every subset present, optionally filtered by a spec such
/// as `within-speaker,within-context`.
pub fn conditions_for(subsets: impl IntoIterator<Item = String>, filter: Option<&str>) -> Result<Vec<Condition>> {
    let subsets: Vec<String> = subsets.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let all = Condition::all(&subsets);
    match filter {
        Some(f) => Condition::filter(all, f),
        None => Ok(all),
    }
}

/// ABX over in-memory representations.
pub fn abx_reps(
    reps: &HashMap<String, Tensor<f32>>,
    alignments: &Alignments,
    subsets: &HashMap<String, String>,
    filter: Option<&str>,
    opts: &AbxOptions,
) -> Result<AbxReport> {
    let segments = extract_segments(reps, alignments, subsets, opts.triphone)?;
    let present = alignments.keys().map(|id| subsets.get(id).cloned().unwrap_or_else(|| "all".into()));
    let conditions = conditions_for(present, filter)?;
    if conditions.is_empty() {
        return Err(Error::invalid("no ABX condition selected"));
    }
    evaluate(&segments, &conditions, opts)
}

/// ABX over the `<id>.rep` files in `reps_dir` for the utterances of
/// `corpus` that carry alignments.
pub fn abx_dir(reps_dir: &Path, corpus: &Corpus, filter: Option<&str>, opts: &AbxOptions) -> Result<AbxReport> {
    let mut alignments = corpus.alignments()?;
    let subsets: HashMap<String, String> = corpus.entries().iter().map(|e| (e.id.clone(), e.subset.clone())).collect();
    alignments.retain(|id, _| subsets.contains_key(id));
    let mut reps = HashMap::new();
    for id in alignments.keys() {
        let path = reps_dir.join(format!("{id}.rep"));
        if path.exists() {
            reps.insert(id.clone(), read_rep(&path)?);
        }
    }
    abx_reps(&reps, &alignments, &subsets, filter, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, write_corpus, SynthSpec};

    #[test]
    fn missing_representations_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            utterances: 3,
            ..SynthSpec::default()
        };
        let corpus = write_corpus(&dir.path().join("c"), &synth_corpus(&spec).unwrap()).unwrap();
        let reps = dir.path().join("reps");
        std::fs::create_dir_all(&reps).unwrap();
        let err = abx_dir(&reps, &corpus, None, &AbxOptions::default()).unwrap_err().to_string();
        for e in corpus.entries() {
            assert!(err.contains(&e.id), "{err}");
        }
    }
}
