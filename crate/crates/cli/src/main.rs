//! `chunkcpc`: synthesize a corpus, pre-train, extract representations,
//! score them with machine ABX, and run the verification suites.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chunkcpc::abx::{comparison_table, read_rep, AbxReport, Weighting};
use chunkcpc::config::{Objective, RunConfig};
use chunkcpc::corpus::{synth_corpus, write_corpus, Corpus};
use chunkcpc::nn::Width;
use chunkcpc::objectives::{LossScope, MaskFill};
use chunkcpc::pipeline::{abx_dir, conditions_for, extract_corpus, pretrain, CONFIG_ECHO};
use chunkcpc::trainer::{load_model, Checkpoint};
use chunkcpc::verify::{self, Suite};
use chunkcpc::Error;

#[derive(Parser)]
#[command(name = "chunkcpc", version, about = "Chunked-context self-supervised speech pre-training and ABX evaluation")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "CHUNKCPC_THREADS")]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phone corpus with exact alignments.
    Synth(SynthArgs),
    /// Pre-train a model and keep the best validation checkpoint.
    Pretrain(PretrainArgs),
    /// Write one representation file per utterance.
    Extract(ExtractArgs),
    /// Score representation directories with machine ABX.
    Abx(AbxArgs),
    /// Run a verification suite: gradients, causality, oracles or losses.
    Verify {
        suite: String,
    },
    /// Describe a checkpoint, corpus or representation file.
    Info {
        path: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    phones: Option<usize>,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from `<out>/last.ckpt`.
    #[arg(long)]
    resume: bool,
    /// cpc, cpc-last or bestrq.
    #[arg(long)]
    objective: Option<Objective>,
    /// Attention width of the context network: frames or `unbounded`.
    #[arg(long)]
    width: Option<Width>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    context_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ff_hidden: Option<usize>,
    #[arg(long)]
    no_positional_encoding: bool,
    #[arg(long)]
    codebook_size: Option<usize>,
    #[arg(long)]
    mask_prob: Option<f64>,
    #[arg(long)]
    mask_span: Option<usize>,
    /// zero or gaussian.
    #[arg(long, value_parser = parse_fill)]
    mask_fill: Option<MaskFill>,
    /// all or masked.
    #[arg(long, value_parser = parse_scope)]
    loss_scope: Option<LossScope>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Comma-separated corpus subsets to train on.
    #[arg(long, value_delimiter = ',')]
    subsets: Option<Vec<String>>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AbxArgs {
    /// Representation directory; repeat to compare several.
    #[arg(long, required = true)]
    reps: Vec<PathBuf>,
    /// Corpus whose alignments define the segments.
    #[arg(long)]
    corpus: PathBuf,
    /// Write reports here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Filter such as `within-speaker,within-context`.
    #[arg(long)]
    conditions: Option<String>,
    #[arg(long)]
    max_triples: Option<usize>,
    /// cell or triple.
    #[arg(long, value_parser = parse_weighting)]
    weighting: Option<Weighting>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    triphone: bool,
}

fn parse_fill(s: &str) -> Result<MaskFill, String> {
    match s {
        "zero" => Ok(MaskFill::Zero),
        "gaussian" => Ok(MaskFill::Gaussian),
        _ => Err(format!("expected zero or gaussian, got {s:?}")),
    }
}

fn parse_scope(s: &str) -> Result<LossScope, String> {
    match s {
        "all" => Ok(LossScope::All),
        "masked" => Ok(LossScope::Masked),
        _ => Err(format!("expected all or masked, got {s:?}")),
    }
}

fn parse_weighting(s: &str) -> Result<Weighting, String> {
    match s {
        "cell" => Ok(Weighting::Cell),
        "triple" => Ok(Weighting::Triple),
        _ => Err(format!("expected cell or triple, got {s:?}")),
    }
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const NUMERICAL: u8 = 3;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => USAGE,
            Error::Numerical(_) | Error::NonFinite { .. } => NUMERICAL,
            _ => DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: USAGE,
        message: message.into(),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => e.into(),
            other => usage(other.to_string()),
        }),
        None => Ok(RunConfig::default()),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    let s = &mut cfg.synth;
    set(&mut s.seed, a.seed);
    set(&mut s.phones, a.phones);
    set(&mut s.speakers, a.speakers);
    set(&mut s.utterances, a.utterances);
    set(&mut s.noise, a.noise);
    s.validate().map_err(|e| usage(e.to_string()))?;
    let corpus = synth_corpus(&cfg.synth)?;
    let total: f64 = corpus.utterances.iter().map(|u| u.duration()).sum();
    write_corpus(&a.out, &corpus)?;
    write_file(&a.out.join(CONFIG_ECHO), &cfg.to_toml())?;
    println!(
        "wrote {} utterances ({:.1} s of audio) to {}",
        corpus.utterances.len(),
        total,
        a.out.display()
    );
    Ok(())
}

fn pretrain_cmd(a: PretrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    let m = &mut cfg.model;
    set(&mut m.objective, a.objective);
    set(&mut m.width, a.width);
    set(&mut m.layers, a.layers);
    set(&mut m.steps, a.steps);
    set(&mut m.negatives, a.negatives);
    set(&mut m.channels, a.channels);
    set(&mut m.context_dim, a.context_dim);
    set(&mut m.heads, a.heads);
    if let Some(ff) = a.ff_hidden {
        m.ff_hidden = ff;
        m.predictor_ff_hidden = ff;
    }
    if a.no_positional_encoding {
        m.positional_encoding = false;
    }
    set(&mut m.codebook_size, a.codebook_size);
    set(&mut m.mask_prob, a.mask_prob);
    set(&mut m.mask_span, a.mask_span);
    set(&mut m.mask_fill, a.mask_fill);
    set(&mut m.loss_scope, a.loss_scope);
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.learning_rate, a.lr);
    set(&mut t.seed, a.seed);
    set(&mut t.validation_fraction, a.validation_fraction);
    set(&mut t.subsets, a.subsets);
    let corpus = Corpus::open(&a.corpus)?;
    let outcome = pretrain(&cfg, &corpus, &a.out, a.resume)?;
    println!(
        "best epoch {} with validation loss {:.4}; checkpoint in {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        a.out.display()
    );
    Ok(())
}

fn extract_cmd(a: ExtractArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (_, model) = load_model(&ck)?;
    let corpus = Corpus::open(&a.corpus)?;
    let n = extract_corpus(&model, &corpus, &a.out)?;
    println!("wrote {n} representation files to {}", a.out.display());
    Ok(())
}

fn abx_cmd(a: AbxArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    let o = &mut cfg.abx;
    set(&mut o.max_triples_per_cell, a.max_triples);
    set(&mut o.weighting, a.weighting);
    set(&mut o.seed, a.seed);
    if a.triphone {
        o.triphone = true;
    }
    if let Some(f) = &a.conditions {
        conditions_for(["probe".to_string()], Some(f)).map_err(|e| usage(e.to_string()))?;
    }
    let corpus = Corpus::open(&a.corpus)?;
    let mut names = Vec::new();
    let mut reports: Vec<AbxReport> = Vec::new();
    for dir in &a.reps {
        let report = abx_dir(dir, &corpus, a.conditions.as_deref(), &cfg.abx)?;
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        println!("{}:\n{}", dir.display(), report.to_text());
        names.push(name);
        reports.push(report);
    }
    let table = (reports.len() > 1).then(|| comparison_table(&names, &reports));
    if let Some(t) = &table {
        println!("{t}");
    }
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).map_err(|e| Failure::from(Error::Io {
            path: out.clone(),
            source: e,
        }))?;
        for (name, r) in names.iter().zip(&reports) {
            write_file(&out.join(format!("{name}.abx.txt")), &r.to_text())?;
            write_file(&out.join(format!("{name}.abx.kv")), &r.to_key_values())?;
        }
        if let Some(t) = &table {
            write_file(&out.join("comparison.txt"), t)?;
        }
        write_file(&out.join(CONFIG_ECHO), &cfg.to_toml())?;
    }
    Ok(())
}

fn verify_cmd(suite: &str) -> Result<(), Failure> {
    let suite: Suite = suite.parse().map_err(|e: Error| usage(e.to_string()))?;
    // the oracle instances deliberately include empty conditions
    if log::max_level() <= log::LevelFilter::Info {
        log::set_max_level(log::LevelFilter::Error);
    }
    let checks = verify::run(suite);
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!("{c}");
    }
    println!("{suite}: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        return Err(Failure {
            code: NUMERICAL,
            message: format!("{failed} {suite} check(s) failed"),
        });
    }
    Ok(())
}

fn info(path: &Path) -> Result<(), Failure> {
    if path.is_dir() {
        let corpus = Corpus::open(path)?;
        let mut speakers: Vec<&str> = corpus.entries().iter().map(|e| e.speaker.as_str()).collect();
        speakers.sort_unstable();
        speakers.dedup();
        let mut subsets: HashMap<&str, usize> = HashMap::new();
        for e in corpus.entries() {
            *subsets.entry(&e.subset).or_default() += 1;
        }
        let seconds: f64 = corpus.durations().values().sum();
        println!("corpus {}", path.display());
        println!("utterances = {}\nspeakers = {}\nseconds = {seconds:.1}", corpus.entries().len(), speakers.len());
        let mut subsets: Vec<_> = subsets.into_iter().collect();
        subsets.sort();
        for (s, n) in subsets {
            println!("subset.{s} = {n}");
        }
        return Ok(());
    }
    let bytes = std::fs::read(path).map_err(|e| Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))?;
    if bytes.starts_with(chunkcpc::abx::REP_MAGIC) {
        let rep = read_rep(path)?;
        println!("representation {}\nframes = {}\ndim = {}", path.display(), rep.shape()[0], rep.shape()[1]);
        return Ok(());
    }
    let ck = Checkpoint::from_bytes(&bytes, path)?;
    let (cfg, model) = load_model(&ck)?;
    println!("checkpoint {}", path.display());
    println!("epoch = {}\nval_loss = {}", ck.epoch, ck.val_loss);
    if let Some((e, l)) = ck.best {
        println!("best = epoch {e}, validation loss {l}");
    }
    println!("parameters = {}", model.params.num_scalars());
    println!("representation_dim = {}", model.representation_dim());
    print!("{}", cfg.to_toml());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Extract(a) => extract_cmd(a),
        Command::Abx(a) => abx_cmd(a),
        Command::Verify { suite } => verify_cmd(&suite),
        Command::Info { path } => info(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
