//! The `seqtraj` command line: dataset generation, training, evaluation,
//! alignment and barycenter computation driven by TOML experiment configs.
//!
//! Flags override config values. Every command validates its inputs before
//! writing anything.

pub mod commands;
pub mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{EvalMode, ExperimentConfig, Readout};
pub use error::{CliError, CliResult};
use seqtraj_core::CeMode;

#[derive(Debug, Parser)]
#[command(name = "seqtraj", version, about = "Soft-DTW exemplar training experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run single-threaded.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true, env = "SEQTRAJ_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a classifier and write a checkpoint and loss CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint (classification accuracy or frame-level AUC/AP).
    Eval(EvalArgs),
    /// Soft-DTW between two sequences.
    Align(AlignArgs),
    /// Soft-DTW barycenter of one class's sequences.
    Barycenter(BarycenterArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GenKind {
    Trajectory,
    Anomaly,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenArgs {
    /// Generator; defaults to the one configured, else trajectory.
    #[arg(long, value_enum)]
    pub kind: Option<GenKind>,
    /// Output sequence file (default `<out>/data.jsonl`).
    #[arg(long)]
    pub file: Option<PathBuf>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub shape_noise: Option<f64>,
    #[arg(long)]
    pub marginal_overlap: Option<bool>,
    #[arg(long)]
    pub num_normals: Option<usize>,
    #[arg(long)]
    pub num_abnormal: Option<usize>,
    #[arg(long)]
    pub anomaly_len: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub anomaly_shift: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Training sequence file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory to continue from; `epochs` is the total.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub episodes_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub n_support: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_parser = parse_ce_mode)]
    pub ce_mode: Option<CeMode>,
    /// Include the alignment term.
    #[arg(long)]
    pub align: Option<bool>,
    #[arg(long)]
    pub init_scale: Option<f64>,
}

fn parse_ce_mode(s: &str) -> Result<CeMode, String> {
    match s {
        "frame" => Ok(CeMode::Frame),
        "sequence" => Ok(CeMode::Sequence),
        _ => Err(format!("expected frame or sequence, got {s:?}")),
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    /// Checkpoint directory (default: the output directory).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Sequences to evaluate.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<EvalMode>,
    #[arg(long)]
    pub anomaly_class: Option<usize>,
    #[arg(long, value_enum)]
    pub readout: Option<Readout>,
    /// Labelled sequences for the exemplar readout.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AlignArgs {
    pub file_a: PathBuf,
    pub file_b: PathBuf,
    /// One or more comma-separated values; one line is printed per value.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Vec<f64>,
    /// Sequence index within `file_a`.
    #[arg(long, default_value_t = 0)]
    pub index_a: usize,
    #[arg(long, default_value_t = 0)]
    pub index_b: usize,
    /// Write the soft occupancy matrix here (single γ > 0 only).
    #[arg(long)]
    pub occupancy: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BarycenterArgs {
    /// Support sequences, all of one class.
    pub input: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Output sequence file (default `<out>/exemplar.jsonl`).
    #[arg(long)]
    pub file: Option<PathBuf>,
}

/// Loads the config named by `--config` (or defaults) and applies the global
/// flags.
pub fn resolve_config(global: &GlobalArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = Some(s);
    }
    let seed = cfg.effective_seed();
    cfg.train.seed = seed;
    if global.deterministic {
        cfg.train.deterministic = true;
    }
    if let Some(o) = &global.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn configure_threads(global: &GlobalArgs) -> CliResult<()> {
    let n = if global.deterministic { Some(1) } else { global.threads };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Validation("--threads must be >= 1".into()));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs one parsed command line, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    configure_threads(&cli.global)?;
    let cfg = resolve_config(&cli.global)?;
    match &cli.command {
        Command::Gen(a) => commands::cmd_gen(cfg, a, out),
        Command::Train(a) => commands::cmd_train(cfg, a, out),
        Command::Eval(a) => commands::cmd_eval(cfg, cli.global.config.is_some(), a, out),
        Command::Align(a) => commands::cmd_align(cfg, a, out),
        Command::Barycenter(a) => commands::cmd_barycenter(cfg, a, out),
    }
}
