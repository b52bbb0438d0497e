use super::*;
use crate::config::Objective;
use crate::corpus::{synth_corpus, SynthSpec};
use crate::nn::Width;

fn tiny_config(objective: Objective) -> RunConfig {
    let mut c = RunConfig::default();
    c.model.objective = objective;
    c.model.channels = 16;
    c.model.context_dim = 16;
    c.model.heads = 2;
    c.model.ff_hidden = 32;
    c.model.width = Width::Bounded(3);
    c.model.steps = 2;
    c.model.negatives = 8;
    c.model.predictor_ff_hidden = 32;
    c.model.codebook_size = 32;
    c.model.mask_prob = 0.1;
    c.model.mask_span = 3;
    c.features.n_mels = 16;
    c.train.batch_size = 2;
    c.train.learning_rate = 1e-3;
    c
}

fn tiny_utterances(n: usize) -> Vec<Utterance> {
    let spec = SynthSpec {
        utterances: n,
        min_phones_per_utterance: 3,
        max_phones_per_utterance: 5,
        ..SynthSpec::default()
    };
    synth_corpus(&spec).unwrap().utterances
}

fn tiny_trainer(objective: Objective, lr: f64) -> Trainer {
    let mut c = tiny_config(objective);
    c.train.learning_rate = lr;
    let utts = tiny_utterances(6);
    Trainer::new(c, &utts[..4], &utts[4..]).unwrap()
}

#[test]
fn batches_cover_in_order() {
    assert_eq!(make_batches(5, 2), vec![0..2, 2..4, 4..5]);
    assert_eq!(make_batches(4, 4), vec![0..4]);
    assert!(make_batches(0, 3).is_empty());
}

#[test]
fn validation_split_is_disjoint_and_sized() {
    for n in [2, 5, 20, 101] {
        for f in [0.05, 0.2, 0.5] {
            let m = validation_mask(n, f);
            let k = m.iter().filter(|&&b| b).count();
            assert!(k >= 1 && k < n, "n={n} f={f} k={k}");
        }
    }
    assert_eq!(validation_mask(10, 0.0).iter().filter(|&&b| b).count(), 0);
    let utts = tiny_utterances(20);
    let (tr, va) = split_validation(utts, 0.1);
    assert_eq!((tr.len(), va.len()), (18, 2));
    assert!(va.iter().all(|v| tr.iter().all(|t| t.id != v.id)));
}

#[test]
fn zero_learning_rate_keeps_weights() {
    for obj in [Objective::Cpc, Objective::BestRq] {
        let mut t = tiny_trainer(obj, 0.0);
        let before = t.model.params.fingerprint();
        t.train_epoch(1).unwrap();
        assert_eq!(t.model.params.fingerprint(), before);
    }
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut t = tiny_trainer(Objective::Cpc, 1e-3);
        let l = t.train_epoch(1).unwrap();
        (l, t.model.params.fingerprint())
    };
    assert_eq!(run(), run());
}

#[test]
fn validation_has_no_side_effects() {
    let mut t = tiny_trainer(Objective::Cpc, 1e-3);
    let before = t.model.params.fingerprint();
    let a = t.validation_loss().unwrap();
    let b = t.validation_loss().unwrap();
    assert_eq!(a, b);
    assert_eq!(t.model.params.fingerprint(), before);
}

struct Scripted {
    vals: Vec<f64>,
    trained: usize,
}

impl Learner for Scripted {
    fn train_epoch(&mut self, _epoch: usize) -> Result<f64> {
        self.trained += 1;
        Ok(0.0)
    }

    fn validation_loss(&mut self) -> Result<f64> {
        Ok(self.vals[self.trained - 1])
    }

    fn checkpoint(&self, epoch: usize, val_loss: f64, history: &[EpochLoss], best: Option<(usize, f64)>) -> Checkpoint {
        Checkpoint {
            epoch,
            val_loss,
            history: history.to_vec(),
            best,
            ..Checkpoint::default()
        }
    }
}

#[test]
fn best_checkpoint_has_lowest_validation_loss() {
    let mut l = Scripted {
        vals: vec![3.0, 1.0, 2.0],
        trained: 0,
    };
    let state = fit(&mut l, 3, FitState::default(), |_, _, _| Ok(())).unwrap();
    assert_eq!(state.best_epoch(), Some((2, 1.0)));
    assert_eq!(state.history.len(), 3);

    // ties keep the earlier epoch
    let mut l = Scripted {
        vals: vec![2.0, 1.0, 1.0],
        trained: 0,
    };
    let state = fit(&mut l, 3, FitState::default(), |_, _, _| Ok(())).unwrap();
    assert_eq!(state.best_epoch(), Some((2, 1.0)));
}

#[test]
fn curve_has_header_and_one_line_per_epoch() {
    let h = [
        EpochLoss { epoch: 1, train: 2.5, val: 2.0 },
        EpochLoss { epoch: 2, train: 1.5, val: 1.25 },
    ];
    assert_eq!(curve_csv(&h), "epoch,train_loss,val_loss\n1,2.5,2\n2,1.5,1.25\n");
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let t = tiny_trainer(Objective::BestRq, 1e-3);
    let hist = [EpochLoss { epoch: 1, train: 0.1 + 0.2, val: f64::MIN_POSITIVE }];
    let ck = t.checkpoint(1, 1.0 / 3.0, &hist, Some((1, 1.0 / 3.0)));
    let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
    assert_eq!(back, ck);
    let mut bad = ck.to_bytes();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad, Path::new("mem")).is_err());
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let c = tiny_config(Objective::Cpc);
    let utts = tiny_utterances(6);
    let (tr, va) = (&utts[..4], &utts[4..]);

    let mut full = Trainer::new(c.clone(), tr, va).unwrap();
    let all = fit(&mut full, 3, FitState::default(), |_, _, _| Ok(())).unwrap();

    let mut first = Trainer::new(c, tr, va).unwrap();
    let mut last = None;
    let partial = fit(&mut first, 2, FitState::default(), |_, ck, _| {
        last = Some(ck.clone());
        Ok(())
    })
    .unwrap();
    let ck = Checkpoint::from_bytes(&last.unwrap().to_bytes(), Path::new("mem")).unwrap();
    let mut resumed = Trainer::resume(&ck, tr, va).unwrap();
    let state = FitState {
        history: ck.history.clone(),
        best: partial.best,
    };
    let rest = fit(&mut resumed, 3, state, |_, _, _| Ok(())).unwrap();

    assert_eq!(rest.history, all.history);
    assert_eq!(resumed.model.params.fingerprint(), full.model.params.fingerprint());
}

#[test]
fn extraction_writes_one_frame_per_hop() {
    let dir = tempfile::tempdir().unwrap();
    let t = tiny_trainer(Objective::Cpc, 1e-3);
    let utts = tiny_utterances(3);
    extract_to(&t.model, &utts, dir.path()).unwrap();
    for u in &utts {
        let rep = crate::abx::read_rep(&dir.path().join(format!("{}.rep", u.id))).unwrap();
        assert_eq!(rep.shape(), &[u.samples.len() / 160, 16]);
        assert!(rep.is_finite());
    }
}

#[test]
fn loss_decreases_on_a_tiny_corpus() {
    let mut c = tiny_config(Objective::Cpc);
    c.train.learning_rate = 3e-3;
    let utts = tiny_utterances(6);
    let mut t = Trainer::new(c, &utts[..4], &utts[4..]).unwrap();
    let first = t.train_epoch(1).unwrap();
    let mut last = first;
    for e in 2..=15 {
        last = t.train_epoch(e).unwrap();
    }
    assert!(last < first * 0.9, "first {first}, last {last}");
}
