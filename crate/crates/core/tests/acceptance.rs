//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a gating criterion fails. Criterion 8 is a reported trend
//! probe; it gates only on completion and seed reproducibility.
//!
//! `ACCEPTANCE_ONLY=3,4` runs a subset.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use chunkcpc::abx::{evaluate, unit_frames, AbxOptions, AbxReport, Condition, ContextMode, Segment, SpeakerMode};
use chunkcpc::config::RunConfig;
use chunkcpc::corpus::{synth_corpus, SynthCorpus};
use chunkcpc::nn::{ConvEncoder, EncoderConfig, ParamSet, Width};
use chunkcpc::objectives::{bestrq_loss, cpc_loss, mask_spans, Codebook, CpcConfig, CpcMode, LossScope};
use chunkcpc::pipeline::{abx_reps, initial_model};
use chunkcpc::rng::rng;
use chunkcpc::tensor::{Graph, Tensor};
use chunkcpc::trainer::{extract, fit, load_model, split_validation, FitState, Trainer};
use chunkcpc::verify;

const DESK: &str = include_str!("../../../configs/desk.toml");

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1, 2

fn suite_outcome(checks: &[verify::Check], seconds: f64, limit: Option<f64>) -> Outcome {
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.to_string()).collect();
    let in_time = limit.is_none_or(|l| seconds < l);
    let mut detail = format!("{}/{} checks pass in {seconds:.1} s", checks.len() - failed.len(), checks.len());
    if !failed.is_empty() {
        detail += &format!("; {}", failed.join("; "));
    }
    outcome(failed.is_empty() && in_time && !checks.is_empty(), detail)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let checks = verify::gradients();
    suite_outcome(&checks, start.elapsed().as_secs_f64(), Some(120.0))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let checks: Vec<_> = verify::causality()
        .into_iter()
        .filter(|c| c.name.starts_with("window") || c.name.starts_with("wide window"))
        .collect();
    let widths = verify::CAUSAL_WIDTHS.len() * verify::CAUSAL_DEPTHS.len();
    let mut o = suite_outcome(&checks, start.elapsed().as_secs_f64(), None);
    o.passed &= checks.len() == widths + 1;
    o
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut notes = Vec::new();
    let mut passed = true;

    let mut g = Graph::<f64>::new();
    let z = g.input(Tensor::full(&[30, 5], 0.25)).unwrap();
    let v = (0..4).map(|_| g.input(Tensor::full(&[30, 5], 1.5)).unwrap()).collect();
    let cfg = CpcConfig {
        steps: 4,
        negatives: 128,
        mode: CpcMode::Average,
    };
    let l = cpc_loss(&mut g, &[z], &[v], &cfg, 3).unwrap();
    let cpc = g.item(l);
    let ok = (cpc - 128f64.ln()).abs() <= 1e-6;
    passed &= ok;
    notes.push(format!("cpc {cpc:.6} (ln 128 = 4.852030)"));

    let mut g = Graph::<f64>::new();
    let logits = g.input(Tensor::full(&[10, 8192], -3.0)).unwrap();
    let targets: Vec<usize> = (0..10).map(|i| i * 811).collect();
    let mask: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
    let l = bestrq_loss(&mut g, logits, &targets, &mask, LossScope::All, 8192).unwrap();
    let brq = g.item(l);
    let ok = (brq - 8192f64.ln()).abs() <= 1e-6;
    passed &= ok;
    notes.push(format!("bestrq {brq:.6} (ln 8192 = 9.010913)"));

    let mut r = rng(77);
    let mut same = true;
    for seed in 0..10 {
        let zt = Tensor::from_fn(&[15, 4], |_| StandardNormal.sample(&mut r));
        let vt = Tensor::from_fn(&[15, 4], |_| StandardNormal.sample(&mut r));
        let run = |mode| {
            let mut g = Graph::<f64>::new();
            let z = g.input(zt.clone()).unwrap();
            let v = g.input(vt.clone()).unwrap();
            let cfg = CpcConfig {
                steps: 1,
                negatives: 32,
                mode,
            };
            let l = cpc_loss(&mut g, &[z], &[vec![v]], &cfg, seed).unwrap();
            g.item(l)
        };
        same &= run(CpcMode::Average).to_bits() == run(CpcMode::Last).to_bits();
    }
    passed &= same;
    notes.push(format!("S=1 average vs last {}", if same { "bit-identical" } else { "differ" }));
    outcome(passed, notes.join(", "))
}

// ---------------------------------------------------------------- 4

fn angular(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos() / std::f64::consts::PI
}

/// Every monotone path from (0, 0) to (n-1, m-1), scored by its mean cost.
fn enumerate_paths(cost: &dyn Fn(usize, usize) -> f64, n: usize, m: usize) -> f64 {
    fn go(i: usize, j: usize, n: usize, m: usize, sum: f64, len: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
        let (sum, len) = (sum + cost(i, j), len + 1);
        if (i, j) == (n - 1, m - 1) {
            return sum / len as f64;
        }
        let mut best = f64::INFINITY;
        if i + 1 < n {
            best = best.min(go(i + 1, j, n, m, sum, len, cost));
        }
        if j + 1 < m {
            best = best.min(go(i, j + 1, n, m, sum, len, cost));
        }
        if i + 1 < n && j + 1 < m {
            best = best.min(go(i + 1, j + 1, n, m, sum, len, cost));
        }
        best
    }
    go(0, 0, n, m, 0.0, 0, cost)
}

fn seg_dtw(a: &Segment, b: &Segment) -> f64 {
    chunkcpc::abx::dtw_unit(&a.frames, &b.frames, a.dim)
}

/// Condition error straight from the definition: every triple in a cell,
/// cells keyed by phone pair, context and speakers, (a, b) and (b, a)
/// averaged, cells averaged uniformly.
fn brute_abx(segs: &[Segment], cond: &Condition) -> Option<f64> {
    let mut cells: BTreeMap<(String, String, String, String, String), (f64, usize)> = BTreeMap::new();
    for (i, a) in segs.iter().enumerate() {
        for b in segs {
            if b.phone == a.phone || b.speaker != a.speaker {
                continue;
            }
            let within_ctx = cond.context == ContextMode::Within;
            if within_ctx && (a.prev != b.prev || a.next != b.next) {
                continue;
            }
            for (k, x) in segs.iter().enumerate() {
                if k == i || x.phone != a.phone {
                    continue;
                }
                let same_spk = x.speaker == a.speaker;
                if (cond.speaker == SpeakerMode::Within) != same_spk {
                    continue;
                }
                if within_ctx && (x.prev != a.prev || x.next != a.next) {
                    continue;
                }
                let ctx = if within_ctx { format!("{}/{}", a.prev, a.next) } else { String::new() };
                let key = (a.phone.clone(), b.phone.clone(), ctx, a.speaker.clone(), x.speaker.clone());
                let (dax, dbx) = (seg_dtw(a, x), seg_dtw(b, x));
                let s = if dax > dbx {
                    1.0
                } else if dax == dbx {
                    0.5
                } else {
                    0.0
                };
                let e = cells.entry(key).or_insert((0.0, 0));
                e.0 += s;
                e.1 += 1;
            }
        }
    }
    let mut merged: BTreeMap<(String, String, String, String, String), Vec<f64>> = BTreeMap::new();
    for ((pa, pb, c, sa, sx), (s, n)) in cells {
        let (lo, hi) = if pa < pb { (pa, pb) } else { (pb, pa) };
        merged.entry((lo, hi, c, sa, sx)).or_default().push(s / n as f64);
    }
    if merged.is_empty() {
        return None;
    }
    let per_cell: Vec<f64> = merged.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    Some(per_cell.iter().sum::<f64>() / per_cell.len() as f64)
}

fn random_segments(seed: u64, utts: usize, speakers: usize, phones: usize, per_utt: usize, dim: usize) -> Vec<Segment> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for u in 0..utts {
        let labels: Vec<String> = (0..per_utt).map(|_| format!("p{}", r.random_range(0..phones))).collect();
        for (k, ph) in labels.iter().enumerate() {
            let n = r.random_range(1..4);
            let raw: Vec<f32> = (0..n * dim).map(|_| StandardNormal.sample(&mut r)).collect();
            out.push(Segment {
                utterance_id: format!("u{u}"),
                start: 20 * k,
                phone: ph.clone(),
                prev: if k == 0 { "SIL".into() } else { labels[k - 1].clone() },
                next: labels.get(k + 1).cloned().unwrap_or_else(|| "SIL".into()),
                speaker: format!("s{}", u % speakers),
                subset: "dev".into(),
                dim,
                frames: unit_frames(&raw, dim).unwrap(),
            });
        }
    }
    out
}

fn criterion_4() -> Outcome {
    let mut notes = Vec::new();
    let mut passed = true;

    let mut r = rng(41);
    let dim = 4;
    let mut worst = 0.0f64;
    let mut lattices = 0;
    for n in 1..=6 {
        for m in 1..=6 {
            let a: Vec<f32> = (0..n * dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let b: Vec<f32> = (0..m * dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let cost = |i: usize, j: usize| angular(&a[i * dim..(i + 1) * dim], &b[j * dim..(j + 1) * dim]);
            let brute = enumerate_paths(&cost, n, m);
            let fast = chunkcpc::abx::dtw_unit(&unit_frames(&a, dim).unwrap(), &unit_frames(&b, dim).unwrap(), dim);
            worst = worst.max((fast - brute).abs());
            lattices += 1;
        }
    }
    passed &= worst <= 1e-9;
    notes.push(format!("dtw max deviation {worst:.1e} on {lattices} lattices up to 6x6"));

    let opts = AbxOptions::default();
    let (mut compared, mut differ) = (0, 0);
    for seed in 0..40 {
        let segs = random_segments(500 + seed, 4, 2, 3, 4, 3);
        for cond in Condition::all(&["dev".into()]) {
            let brute = brute_abx(&segs, &cond);
            match evaluate(&segs, std::slice::from_ref(&cond), &opts) {
                Ok(rep) => {
                    if rep.conditions[0].triples <= 200 {
                        compared += 1;
                        differ += usize::from(rep.conditions[0].error != brute);
                    }
                }
                Err(_) => differ += usize::from(brute.is_some()),
            }
        }
    }
    passed &= differ == 0 && compared >= 50;
    notes.push(format!("abx {compared} instances with <= 200 triples, {differ} differ"));

    let cb = Codebook::new(256, 12, 9).unwrap();
    let mut agree = 0;
    for _ in 0..100 {
        let z: Vec<f32> = (0..12).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = z.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        let mut best = (f64::INFINITY, 0);
        for (k, p) in cb.prototypes().data().chunks(12).enumerate() {
            let d: f64 = p.iter().zip(&z).map(|(&a, &b)| (a as f64 - b as f64 / norm).powi(2)).sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        agree += usize::from(cb.quantize(&z).unwrap() == best.1);
    }
    passed &= agree == 100;
    notes.push(format!("quantize {agree}/100"));
    outcome(passed, notes.join(", "))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let cfg = EncoderConfig {
        channels: 32,
        ..EncoderConfig::default()
    };
    let mut ps = ParamSet::<f64>::new();
    let mut r = rng(5);
    let enc = ConvEncoder::new(&mut ps, "enc", &cfg, &mut r).unwrap();
    let frames = 8;
    let x = Tensor::from_fn(&[frames * 160, 1], |_| StandardNormal.sample(&mut r));
    let mut field = 0;
    let mut causal = true;
    for t in 0..frames {
        let mut g = Graph::new();
        let p = ps.bind(&mut g, false).unwrap();
        let xv = g.param(x.clone()).unwrap();
        let y = enc.forward(&mut g, &p, xv).unwrap();
        let row = g.narrow(y, 0, t, 1).unwrap();
        let s = g.sum(row).unwrap();
        g.backward(s).unwrap();
        let grad = g.grad(xv).unwrap();
        let live: Vec<usize> = grad.data().iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
        let (first, last) = (live[0], *live.last().unwrap());
        causal &= last < (t + 1) * 160;
        if (t + 1) * 160 >= 465 {
            field = field.max(last - first + 1);
        }
    }
    let mut counts = Vec::new();
    let mut hop_ok = true;
    for n in [160, 480, 1599, 1600, 16000, 48000] {
        let mut g = Graph::<f64>::new();
        let p = ps.bind(&mut g, false).unwrap();
        let xv = g.input(Tensor::zeros(&[n, 1])).unwrap();
        let y = enc.forward(&mut g, &p, xv).unwrap();
        let f = g.shape(y)[0];
        hop_ok &= f == n / 160;
        counts.push(format!("{n}:{f}"));
    }
    outcome(
        field == 465 && causal && hop_ok,
        format!(
            "receptive field {field} samples by Jacobian support (no future samples: {causal}); frames per samples {}",
            counts.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let segs = random_segments(6, 40, 4, 6, 25, 8);
    let rep = evaluate(&segs, &Condition::all(&["dev".into()]), &AbxOptions::default()).unwrap();
    let triples: usize = rep.conditions.iter().map(|c| c.triples).sum();
    let abx_ok = triples >= 10_000 && (rep.mean - 0.5).abs() <= 0.02;

    let frames = 1_000_000;
    let mask = mask_spans(frames, 0.01, 12, &mut rng(66)).unwrap();
    let cov = mask.iter().filter(|&&m| m).count() as f64 / frames as f64;
    let cov_ok = (cov - 0.1136).abs() <= 0.01;
    outcome(
        abx_ok && cov_ok,
        format!("random ABX {:.4} over {triples} triples; mask coverage {cov:.4} over {frames} frames", rep.mean),
    )
}

// ---------------------------------------------------------------- 7, 8

struct RunResult {
    report: AbxReport,
    fingerprint: u64,
    train_seconds: f64,
}

fn corpus_reps(model: &chunkcpc::model::Model, corpus: &SynthCorpus) -> HashMap<String, Tensor<f32>> {
    corpus
        .utterances
        .iter()
        .map(|u| (u.id.clone(), extract(model, u).unwrap()))
        .collect()
}

fn abx_of(model: &chunkcpc::model::Model, corpus: &SynthCorpus, opts: &AbxOptions) -> AbxReport {
    let subsets = corpus.utterances.iter().map(|u| (u.id.clone(), u.subset.clone())).collect();
    abx_reps(&corpus_reps(model, corpus), &corpus.alignments, &subsets, None, opts).unwrap()
}

/// Trains with `cfg`, restores the best validation checkpoint, and scores
/// it on the whole corpus.
fn train_and_score(cfg: &RunConfig, corpus: &SynthCorpus) -> RunResult {
    let (train, val) = split_validation(corpus.utterances.clone(), cfg.train.validation_fraction);
    let mut t = Trainer::new(cfg.clone(), &train, &val).unwrap();
    let start = Instant::now();
    let state = fit(&mut t, cfg.train.epochs, FitState::default(), |e, _, _| {
        eprintln!("  epoch {}: train {:.4} validation {:.4}", e.epoch, e.train, e.val);
        Ok(())
    })
    .unwrap();
    let train_seconds = start.elapsed().as_secs_f64();
    let (_, model) = load_model(&state.best.unwrap()).unwrap();
    RunResult {
        report: abx_of(&model, corpus, &cfg.abx),
        fingerprint: model.params.fingerprint(),
        train_seconds,
    }
}

fn criterion_7() -> Outcome {
    let cfg = RunConfig::from_toml(DESK).unwrap();
    assert_eq!((cfg.model.width, cfg.model.steps), (Width::Bounded(4), 12));
    let corpus = synth_corpus(&cfg.synth).unwrap();
    let minutes: f64 = corpus.utterances.iter().map(|u| u.duration()).sum::<f64>() / 60.0;
    let before = abx_of(&initial_model(&cfg).unwrap(), &corpus, &cfg.abx);
    let run = train_and_score(&cfg, &corpus);
    let cell = Condition {
        speaker: SpeakerMode::Within,
        context: ContextMode::Within,
        subset: "train".into(),
    };
    let after_cell = run.report.error(&cell).unwrap_or(1.0);
    let drop = before.mean - run.report.mean;
    outcome(
        drop >= 0.20 && after_cell < 0.10 && run.train_seconds <= 1800.0,
        format!(
            "{minutes:.1} min of audio, {} epochs in {:.0} s; mean ABX {:.2}% -> {:.2}% (drop {:.2} points); within-speaker/within-context {:.2}%",
            cfg.train.epochs,
            run.train_seconds,
            100.0 * before.mean,
            100.0 * run.report.mean,
            100.0 * drop,
            100.0 * after_cell
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut cfg = RunConfig::from_toml(DESK).unwrap();
    cfg.synth.utterances = 40;
    cfg.model.channels = 32;
    cfg.model.context_dim = 32;
    cfg.model.ff_hidden = 128;
    cfg.model.predictor_ff_hidden = 128;
    cfg.model.negatives = 64;
    cfg.train.epochs = 2;
    cfg.train.validation_fraction = 0.1;
    let corpus = synth_corpus(&cfg.synth).unwrap();
    let mut names = Vec::new();
    let mut reports = Vec::new();
    let mut first = None;
    for w in [2usize, 4, 64] {
        for seed in 0..3u64 {
            let mut c = cfg.clone();
            c.model.width = Width::Bounded(w);
            c.train.seed = seed;
            let r = train_and_score(&c, &corpus);
            if (w, seed) == (4, 0) {
                first = Some((r.fingerprint, r.report.clone(), c));
            }
            names.push(format!("W={w}/s{seed}"));
            reports.push(r.report);
        }
    }
    println!("{}", chunkcpc::abx::comparison_table(&names, &reports));
    let (fp, report, c) = first.unwrap();
    let again = train_and_score(&c, &corpus);
    let reproducible = again.fingerprint == fp && again.report == report;
    let means: Vec<String> = reports.iter().map(|r| format!("{:.1}", 100.0 * r.mean)).collect();
    outcome(
        reports.len() == 9 && reproducible,
        format!(
            "9/9 runs complete; W=4 seed 0 rerun {}; mean ABX % by W=2,4,64 x seeds 0..2: {}",
            if reproducible { "bit-identical" } else { "differs" },
            means.join(" ")
        ),
    )
}

fn main() {
    let only: Option<Vec<u8>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(u8, &str, fn() -> Outcome); 8] = [
        (1, "gradient suite", criterion_1),
        (2, "causality and window suite", criterion_2),
        (3, "loss identities", criterion_3),
        (4, "oracle equivalence", criterion_4),
        (5, "encoder geometry", criterion_5),
        (6, "statistical sanity", criterion_6),
        (7, "end-to-end desk-scale run", criterion_7),
        (8, "trend probe (reported)", criterion_8),
    ];
    let mut failed = Vec::new();
    for (id, title, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = f();
        println!("criterion {id} {}: {title}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
