use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};

use chunkcpc::abx::{read_rep, write_rep};
use chunkcpc::corpus::Corpus;
use chunkcpc::rng::rng;
use chunkcpc::tensor::Tensor;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chunkcpc"))
        .args(args)
        .env_remove("CHUNKCPC_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = run(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("corpus");
    let mut args = vec!["synth", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const SMALL_MODEL: [&str; 10] = [
    "--channels",
    "32",
    "--context-dim",
    "32",
    "--heads",
    "4",
    "--ff-hidden",
    "64",
    "--negatives",
    "16",
];

#[test]
fn synth_is_deterministic_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--seed", "7", "--phones", "8", "--speakers", "4", "--utterances", "6"];
    let ca = synth(a.path(), &args);
    let cb = synth(b.path(), &args);
    assert_eq!(tree(&ca), tree(&cb));
    let corpus = Corpus::open(&ca).unwrap();
    let wavs = std::fs::read_dir(ca.join("wav")).unwrap().count();
    assert_eq!(corpus.entries().len(), 6);
    assert_eq!(wavs, 6);
    assert_eq!(corpus.alignments().unwrap().len(), 6);
}

#[test]
fn pretrain_smoke_run_records_config() {
    let d = tempfile::tempdir().unwrap();
    let corpus = synth(d.path(), &["--utterances", "3"]);
    let out = d.path().join("run");
    let start = Instant::now();
    ok(&[
        "pretrain", "--corpus", s(&corpus), "--out", s(&out), "--objective", "cpc", "--width", "4", "--steps", "12",
        "--epochs", "1",
    ]);
    assert!(start.elapsed().as_secs_f64() < 10.0, "took {:?}", start.elapsed());
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("width = 4") && echo.contains("steps = 12"), "{echo}");
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 2);
    assert!(out.join("best.ckpt").exists() && out.join("last.ckpt").exists());
    let info = ok(&["info", s(&out.join("best.ckpt"))]);
    assert!(info.contains("objective = \"cpc\"") && info.contains("representation_dim = 256"), "{info}");
}

#[test]
fn last_mode_and_steps_are_selected_by_flags() {
    let d = tempfile::tempdir().unwrap();
    let corpus = synth(d.path(), &["--utterances", "3"]);
    let out = d.path().join("run");
    let mut args = vec![
        "pretrain", "--corpus", s(&corpus), "--out", s(&out), "--objective", "cpc-last", "--steps", "6", "--epochs", "1",
    ];
    args.extend_from_slice(&SMALL_MODEL);
    ok(&args);
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("objective = \"cpc-last\"") && echo.contains("steps = 6"), "{echo}");
}

#[test]
fn resume_continues_the_curve() {
    let d = tempfile::tempdir().unwrap();
    let corpus = synth(d.path(), &["--utterances", "4"]);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let base = |out: &Path, epochs: &str, resume: bool| {
        let mut args = vec!["pretrain", "--corpus", s(&corpus), "--out", s(out), "--epochs", epochs, "--steps", "3"];
        args.extend_from_slice(&SMALL_MODEL);
        if resume {
            args.push("--resume");
        }
        ok(&args);
    };
    base(&a, "3", false);
    base(&b, "2", false);
    base(&b, "3", true);
    let ca = std::fs::read_to_string(a.join("curves.csv")).unwrap();
    let cb = std::fs::read_to_string(b.join("curves.csv")).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(std::fs::read(a.join("last.ckpt")).unwrap(), std::fs::read(b.join("last.ckpt")).unwrap());
}

#[test]
fn extract_writes_one_file_per_utterance_idempotently() {
    let d = tempfile::tempdir().unwrap();
    let corpus = synth(d.path(), &["--utterances", "4"]);
    let run_dir = d.path().join("run");
    let mut args = vec!["pretrain", "--corpus", s(&corpus), "--out", s(&run_dir), "--epochs", "1", "--steps", "3"];
    args.extend_from_slice(&SMALL_MODEL);
    ok(&args);
    let ck = run_dir.join("best.ckpt");
    let (r1, r2) = (d.path().join("r1"), d.path().join("r2"));
    ok(&["extract", "--checkpoint", s(&ck), "--corpus", s(&corpus), "--out", s(&r1)]);
    ok(&["extract", "--checkpoint", s(&ck), "--corpus", s(&corpus), "--out", s(&r2)]);
    let entries = Corpus::open(&corpus).unwrap();
    let files = tree(&r1);
    assert_eq!(files.len(), entries.entries().len());
    assert_eq!(files, tree(&r2));
    for e in entries.entries() {
        let rep = read_rep(&r1.join(format!("{}.rep", e.id))).unwrap();
        assert_eq!(rep.shape(), &[e.samples / 160, 32]);
    }
}

fn random_reps(corpus: &Path, out: &Path, seed: u64) {
    std::fs::create_dir_all(out).unwrap();
    let c = Corpus::open(corpus).unwrap();
    let mut r = rng(seed);
    for e in c.entries() {
        let t = Tensor::from_fn(&[e.samples / 160, 16], |_| StandardNormal.sample(&mut r));
        write_rep(&out.join(format!("{}.rep", e.id)), &t).unwrap();
    }
}

#[test]
fn random_representations_score_chance() {
    let d = tempfile::tempdir().unwrap();
    let corpus = synth(d.path(), &["--utterances", "40"]);
    let reps = d.path().join("random");
    random_reps(&corpus, &reps, 1);
    let out = d.path().join("abx");
    ok(&["abx", "--reps", s(&reps), "--corpus", s(&corpus), "--out", s(&out)]);
    let kv = std::fs::read_to_string(out.join("random.abx.kv")).unwrap();
    let mean: f64 = kv.lines().find_map(|l| l.strip_prefix("mean = ")).unwrap().parse().unwrap();
    assert!((mean - 0.5).abs() <= 0.02, "{mean}");
}

#[test]
fn conditions_filter_and_comparison_table() {
    let d = tempfile::tempdir().unwrap();
    let corpus = synth(d.path(), &["--utterances", "8"]);
    let (a, b) = (d.path().join("first"), d.path().join("second"));
    random_reps(&corpus, &a, 1);
    random_reps(&corpus, &b, 2);
    let out = d.path().join("abx");
    let stdout = ok(&[
        "abx", "--reps", s(&a), "--reps", s(&b), "--corpus", s(&corpus), "--out", s(&out), "--conditions",
        "within-speaker,within-context",
    ]);
    let table = std::fs::read_to_string(out.join("comparison.txt")).unwrap();
    assert!(table.contains("first") && table.contains("second"));
    assert!(stdout.contains("within-speaker/within-context"));
    assert!(!stdout.contains("across-speaker") && !stdout.contains("any-context"), "{stdout}");
}

#[test]
fn missing_representations_fail_with_ids() {
    let d = tempfile::tempdir().unwrap();
    let corpus = synth(d.path(), &["--utterances", "3"]);
    let reps = d.path().join("reps");
    random_reps(&corpus, &reps, 1);
    let victim = Corpus::open(&corpus).unwrap().entries()[1].id.clone();
    std::fs::remove_file(reps.join(format!("{victim}.rep"))).unwrap();
    let (c, err) = code(&["abx", "--reps", s(&reps), "--corpus", s(&corpus)]);
    assert_eq!(c, 2);
    assert!(err.contains(&victim), "{err}");
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["pretrain", "--no-such-flag"]).0, 1);
    assert_eq!(code(&["verify", "everything"]).0, 1);
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepochs = 2\nlearning_rat = 0.1\n").unwrap();
    let (c, err) = code(&["synth", "--out", s(&d.path().join("x")), "--config", s(&cfg)]);
    assert_eq!(c, 1);
    assert!(err.contains("learning_rat"), "{err}");
    let (c, _) = code(&["pretrain", "--corpus", s(&d.path().join("nowhere")), "--out", s(&d.path().join("y"))]);
    assert_eq!(c, 2);
}

#[test]
fn divergence_exits_numerically_and_keeps_diagnostics() {
    let d = tempfile::tempdir().unwrap();
    let corpus = synth(d.path(), &["--utterances", "6"]);
    let out = d.path().join("run");
    let mut args = vec![
        "pretrain", "--corpus", s(&corpus), "--out", s(&out), "--epochs", "5", "--steps", "3", "--lr", "1e30",
        "--batch-size", "1",
    ];
    args.extend_from_slice(&SMALL_MODEL);
    let (c, err) = code(&args);
    assert_eq!(c, 3, "{err}");
    assert!(out.join("config.toml").exists());
}

#[test]
fn verify_suites_pass() {
    for suite in ["losses", "oracles", "causality", "gradients"] {
        let out = ok(&["verify", suite]);
        assert!(out.contains("0 failed"), "{out}");
    }
}

#[test]
fn thread_flag_is_accepted() {
    assert_eq!(code(&["--threads", "2", "verify", "losses"]).0, 0);
    assert_eq!(code(&["--threads", "0", "verify", "losses"]).0, 1);
}
