//! `rawinst`: train, evaluate and inspect raw-waveform instrument models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rawinst_core::models::Variant;
use rawinst_core::training::FoldSelection;
use rawinst_core::Error;

use config::{LabelScope, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "rawinst",
    version,
    about = "Instrument recognition from raw waveforms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one fold or all five; writes checkpoints and histories.
    Train(TrainArgs),
    /// Score a checkpoint (or a saved prediction dump) on a test set.
    Eval(EvalArgs),
    /// Print label scores for a single WAV file.
    Predict(PredictArgs),
    /// Print a model's parameter count.
    Params {
        #[arg(value_parser = parse_variant)]
        model: Variant,
    },
    /// Finite-difference check of every op and every model.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_fold(s: &str) -> Result<FoldSelection, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scope(s: &str) -> Result<LabelScope, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Flags shared by commands that read a run configuration.
#[derive(Args, Debug)]
struct Common {
    /// `key = value` file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    model: Option<Variant>,
    /// Dataset root (IRMAS layout or a directory with manifest.tsv).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Fold index or `all`.
    #[arg(long, alias = "folds", value_parser = parse_fold)]
    fold: Option<FoldSelection>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_init: Option<f64>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    lr_patience_epochs: Option<usize>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Binarization threshold for F1.
    #[arg(long)]
    threshold: Option<f64>,
    /// `all` (eleven instruments) or `active` (labels present in the set).
    #[arg(long, value_parser = parse_scope)]
    labels: Option<LabelScope>,
    /// Re-score a prediction dump instead of running the model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Also write F1 at thresholds 0.05..0.95.
    #[arg(long)]
    sweep: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    wav: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Untrained model of this variant (when no checkpoint is given).
    #[arg(long, value_parser = parse_variant)]
    model: Option<Variant>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Random op shapes to check.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Skip the whole-model checks.
    #[arg(long)]
    ops_only: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    tracks: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    seconds: u32,
    /// `train` (foldable segments) or `test` (tracks).
    #[arg(long, default_value = "train")]
    kind: String,
    /// One class per track.
    #[arg(long)]
    mono: bool,
    #[arg(long, default_value_t = 3)]
    max_polyphony: usize,
}

fn resolve(command: &str, common: &Common) -> rawinst_core::Result<RunConfig> {
    let mut cfg = RunConfig::new(command);
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if common.model.is_some() {
        cfg.model = common.model;
    }
    if common.data.is_some() {
        cfg.data_root.clone_from(&common.data);
    }
    if common.out.is_some() {
        cfg.out_dir.clone_from(&common.out);
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    cfg.fill_from_env();
    Ok(cfg)
}

fn run(cli: Cli) -> rawinst_core::Result<()> {
    match cli.command {
        Command::Train(a) => {
            let mut cfg = resolve("train", &a.common)?;
            let t = &mut cfg.train;
            if let Some(v) = a.fold {
                t.fold = v;
            }
            if let Some(v) = a.batch_size {
                t.batch_size = v;
            }
            if let Some(v) = a.lr_init {
                t.lr_init = v;
            }
            if let Some(v) = a.lr_decay_factor {
                t.lr_decay_factor = v;
            }
            if let Some(v) = a.lr_patience_epochs {
                t.lr_patience_epochs = v;
            }
            if let Some(v) = a.early_stop_patience {
                t.early_stop_patience = v;
            }
            if let Some(v) = a.max_epochs {
                t.max_epochs = v;
            }
            commands::train(&cfg)
        }
        Command::Eval(a) => {
            let mut cfg = resolve("eval", &a.common)?;
            if a.checkpoint.is_some() {
                cfg.checkpoint = a.checkpoint;
            }
            if let Some(t) = a.threshold {
                cfg.threshold = t;
            }
            if let Some(l) = a.labels {
                cfg.labels = l;
            }
            commands::eval(&cfg, a.predictions.as_deref(), a.sweep)
        }
        Command::Predict(a) => commands::predict(&a.wav, a.checkpoint.as_deref(), a.model, a.seed),
        Command::Params { model } => commands::params(model),
        Command::Gradcheck(a) => commands::gradcheck(a.seeds, a.ops_only),
        Command::Synth(a) => commands::synth(&a),
    }
}

/// 1: usage or configuration; 2: data, I/O or checkpoint; 3: numerical.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::OutOfContract(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
