//! `quadscan` command line: corpus generation, training, evaluation, the fusion
//! cost benchmark and scan-order dumps.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

pub mod bench;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand};
use quadscan::eval::{attribute_breakdown, curves_csv, score, sequences_csv, summary_text, TrackResult};
use quadscan::numerics::{checkpoint, ParamStore};
use quadscan::scanorders::{all_orders, TokenGeometry};
use quadscan::synthdata::{make_corpus, read_manifest, read_sequence, SyntheticSequence};
use quadscan::tracker::{modalities_label, parse_modalities, track_sequences, train, Tracker};
use quadscan::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{paths_or_variant, RunConfig};

pub const CHECKPOINT_FILE: &str = "model.qtck";
pub const SIDECAR_FILE: &str = "model.cfg";

#[derive(Parser, Debug)]
#[command(
    name = "quadscan",
    version,
    about = "Quad-modal tracking with multiscale selective-scan fusion"
)]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (file for scan-dump).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with train/test manifests.
    Gen {
        /// Corpus spec; overrides `data.spec`.
        #[arg(long)]
        spec: Option<String>,
    },
    /// Train a tracker on a corpus.
    Train(TrainArgs),
    /// Track and score a corpus split with a trained checkpoint.
    Eval(EvalArgs),
    /// Fusion cost against joint-attention baselines.
    BenchFusion {
        /// Comma-separated per-modality token counts; overrides `bench.lengths`.
        #[arg(long)]
        lengths: Option<String>,
    },
    /// Print the four scan orders, one comma-separated line each.
    ScanDump,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Manifest inside the corpus directory.
    #[arg(long, default_value = "train.txt")]
    pub manifest: String,
    /// Streams to train, e.g. `rgb,t`.
    #[arg(long)]
    pub modalities: Option<String>,
    /// Scan paths or a variant name (`w/mamba`, `w/mamba-v2`, `w/mamba-v3`, `full`).
    #[arg(long = "mfm-paths")]
    pub mfm_paths: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test.txt")]
    pub manifest: String,
    /// Checkpoint file or the training output directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate with a subset of the trained streams.
    #[arg(long)]
    pub modalities: Option<String>,
    /// Evaluate with a subset of the trained scan paths.
    #[arg(long = "mfm-paths")]
    pub mfm_paths: Option<String>,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Geometry(_) | Error::Parse { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

/// Caps the global worker pool from `QUADSCAN_THREADS`; only the first call counts.
pub fn init_threads() -> CmdResult<()> {
    static INIT: OnceLock<Result<(), String>> = OnceLock::new();
    INIT.get_or_init(|| {
        let Ok(v) = std::env::var("QUADSCAN_THREADS") else {
            return Ok(());
        };
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("QUADSCAN_THREADS={v:?} is not a positive integer"))?;
        // A pool that already exists (e.g. in tests) is left alone.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        Ok(())
    })
    .clone()
    .map_err(Failure::Usage)
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn resolve_config(cli: &Cli) -> CmdResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &cli.set {
        cfg.set(s, "--set")?;
    }
    if let Some(seed) = cli.seed {
        cfg.set_value("seed", &seed.to_string(), "--seed")?;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> CmdResult<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Failure::Usage("--out is required for this command".into()))
}

fn write(path: &Path, text: &str) -> CmdResult<()> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CmdResult<()> {
    fs::create_dir_all(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

pub fn execute(cli: &Cli) -> CmdResult<()> {
    init_threads()?;
    let mut cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Gen { spec } => {
            if let Some(s) = spec {
                cfg.set_value("data.spec", s, "--spec")?;
            }
            cmd_gen(&cfg, out_dir(cli)?)
        }
        Command::Train(a) => {
            if let Some(m) = &a.modalities {
                cfg.set_value("model.modalities", m, "--modalities")?;
            }
            if let Some(p) = &a.mfm_paths {
                cfg.set_value("mfm.paths", p, "--mfm-paths")?;
            }
            cmd_train(&cfg, a, out_dir(cli)?)
        }
        Command::Eval(a) => cmd_eval(&cfg, a, out_dir(cli)?),
        Command::BenchFusion { lengths } => {
            if let Some(l) = lengths {
                cfg.set_value("bench.lengths", l, "--lengths")?;
            }
            cmd_bench(&cfg, out_dir(cli)?)
        }
        Command::ScanDump => cmd_scan_dump(&cfg, cli.out.as_deref()),
    }
}

fn log_config(out: &Path, cfg: &RunConfig) -> CmdResult<()> {
    eprint!("{}", cfg.resolved());
    write(&out.join("run.cfg"), &cfg.resolved())
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> CmdResult<()> {
    let spec = cfg.corpus_spec()?;
    let manifest = make_corpus(out, &spec, cfg.seed()?)?;
    log_config(out, cfg)?;
    println!(
        "generated {} train / {} test sequences in {}",
        manifest.train.len(),
        manifest.test.len(),
        out.display()
    );
    Ok(())
}

fn load_split(data: &Path, manifest: &str) -> CmdResult<Vec<SyntheticSequence>> {
    let path = data.join(manifest);
    let names = read_manifest(&path)?;
    if names.is_empty() {
        return Err(Failure::Usage(format!(
            "manifest {} lists no sequences",
            path.display()
        )));
    }
    Ok(names
        .par_iter()
        .map(|n| read_sequence(&data.join(n)))
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn cmd_train(cfg: &RunConfig, a: &TrainArgs, out: &Path) -> CmdResult<()> {
    let tcfg = cfg.tracker()?;
    let schedule = cfg.schedule()?;
    let seqs = load_split(&a.data, &a.manifest)?;
    create_dir(out)?;
    log_config(out, cfg)?;
    let mut store = ParamStore::<f32>::new();
    let model = Tracker::new(tcfg, &mut store, &mut ChaCha8Rng::seed_from_u64(cfg.seed()?))?;
    eprintln!(
        "training {} on {} sequences, {} parameters",
        modalities_label(model.modalities()),
        seqs.len(),
        model.count_params(&store)
    );
    let mut last = Vec::new();
    let result = train(&model, &mut store, &seqs, &schedule, |p| {
        if p.step % 50 == 0 {
            eprintln!("epoch {} step {} loss {:.4}", p.epoch, p.step, p.loss.total);
        }
        last.push(*p);
        if last.len() > 20 {
            last.remove(0);
        }
    });
    let report = match result {
        Ok(r) => r,
        Err(e @ Error::NonFinite { .. }) => {
            let mut dump = format!("{e}\n\nlast steps:\n");
            for p in &last {
                dump.push_str(&format!("{p:?}\n"));
            }
            write(&out.join("nan_dump.txt"), &dump)?;
            return Err(Failure::Runtime(format!(
                "{e}; diagnostics in {}",
                out.join("nan_dump.txt").display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    checkpoint::save(&store, &out.join(CHECKPOINT_FILE))?;
    write(&out.join(SIDECAR_FILE), &cfg.resolved())?;
    write(&out.join("loss.csv"), &report.to_csv())?;
    println!("trained {} steps, final loss {:.4}", report.steps, report.tail_loss(10));
    Ok(())
}

/// Rebuilds the trained model from a checkpoint and its sidecar config.
pub fn load_model(checkpoint_path: &Path) -> CmdResult<(Tracker, ParamStore<f32>)> {
    let file = if checkpoint_path.is_dir() {
        checkpoint_path.join(CHECKPOINT_FILE)
    } else {
        checkpoint_path.to_path_buf()
    };
    let sidecar = file.with_file_name(SIDECAR_FILE);
    let cfg = RunConfig::load(&sidecar)?;
    let mut store = ParamStore::<f32>::new();
    let model = Tracker::new(cfg.tracker()?, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    checkpoint::load_into(&mut store, &file)?;
    Ok((model, store))
}

pub fn cmd_eval(cfg: &RunConfig, a: &EvalArgs, out: &Path) -> CmdResult<()> {
    let (mut model, store) = load_model(&a.checkpoint)?;
    if let Some(m) = &a.modalities {
        model = model.with_modalities(&parse_modalities(m)?)?;
    }
    if let Some(p) = &a.mfm_paths {
        model = model.with_paths(&paths_or_variant(p)?)?;
    }
    let seqs = load_split(&a.data, &a.manifest)?;
    create_dir(&out.join("predictions"))?;
    log_config(out, cfg)?;
    let preds = track_sequences(&model, &store, &seqs);
    let results: Vec<TrackResult> = seqs
        .iter()
        .zip(preds)
        .map(|(s, p)| TrackResult {
            name: s.name.clone(),
            pred: p,
            gt: s.gt.clone(),
            tags: s.attributes.clone(),
        })
        .collect();
    for r in &results {
        let text: String = r.pred.iter().map(|b| format!("{b}\n")).collect();
        write(&out.join("predictions").join(format!("{}.txt", r.name)), &text)?;
    }
    let rep = score(&results)?;
    let attrs = attribute_breakdown(&results)?;
    let summary = format!(
        "modalities = {}\n{}",
        modalities_label(model.modalities()),
        summary_text(&rep, Some(&attrs))
    );
    write(&out.join("summary.txt"), &summary)?;
    write(&out.join("curves.csv"), &curves_csv(&rep))?;
    write(&out.join("sequences.csv"), &sequences_csv(&results)?)?;
    print!("{summary}");
    Ok(())
}

pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> CmdResult<()> {
    let bc = bench::BenchConfig {
        lengths: cfg.get_list("bench.lengths")?,
        dim: cfg.get("bench.dim")?,
        d_state: cfg.get("mfm.d_state")?,
        runs: cfg.get("bench.runs")?,
        warmup: cfg.get("bench.warmup")?,
        seed: cfg.seed()?,
    };
    create_dir(out)?;
    log_config(out, cfg)?;
    let rows = bench::run(&bc)?;
    write(&out.join("bench.csv"), &bench::to_csv(&rows))?;
    let summary = bench::summary(&rows);
    write(&out.join("summary.txt"), &summary)?;
    print!("{}{summary}", bench::to_csv(&rows));
    Ok(())
}

pub fn scan_dump_text(cfg: &RunConfig) -> CmdResult<String> {
    let geo = TokenGeometry::new(
        cfg.get("scan.modalities")?,
        cfg.get("scan.template_tokens")?,
        cfg.get("scan.search_tokens")?,
    )?;
    Ok(all_orders(&geo).iter().map(|o| o.to_line() + "\n").collect())
}

pub fn cmd_scan_dump(cfg: &RunConfig, out: Option<&Path>) -> CmdResult<()> {
    let text = scan_dump_text(cfg)?;
    if let Some(p) = out {
        write(p, &text)?;
    }
    print!("{text}");
    Ok(())
}
