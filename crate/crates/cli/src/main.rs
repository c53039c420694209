//! `rarespot`: tiling, hard-sample mining, context-aware augmentation,
//! evaluation and loss checks for small-object aerial detection.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{
    AugmentSection, ContextmapSection, EvalSection, GradcheckSection, LossSection, MineSection, RunConfig,
    SimdetSection, StatsSection, SynthSection, TileSection,
};
use crate::error::{CliError, CliResult};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ntensor format: RSPT v1",
    "\nannotation format: class cx cy w h (normalised)",
    "\ndetection format: class conf cx cy w h (normalised)",
    "\npatch index: patches.json v1"
);

#[derive(Debug, Parser)]
#[command(name = "rarespot", version, long_version = LONG_VERSION, about, propagate_version = true)]
struct Cli {
    /// TOML config file; explicit flags override its values.
    #[arg(long, global = true, value_name = "TOML")]
    config: Option<PathBuf>,

    /// Master seed from which all randomness is derived.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut large images into fixed-size tiles with clipped annotations.
    Tile(TileSection),
    /// Per-class counts and box sizes over a tile manifest.
    Stats(StatsSection),
    /// Match detections to ground truth and crop labeled, FP and FN patches.
    Mine(MineSection),
    /// Label background pixels as dirt, grass or other.
    Contextmap(ContextmapSection),
    /// Paste mined patches into backgrounds with Poisson blending.
    Augment(AugmentSection),
    /// Precision, recall and AP@IoU of detections against ground truth.
    Eval(EvalSection),
    /// Multi-scale consistency loss of a P3/P4/P5 tensor triple.
    Loss(LossSection),
    /// Compare analytic loss gradients with central finite differences.
    Gradcheck(GradcheckSection),
    /// Generate a small synthetic aerial dataset for smoke tests.
    Synth(SynthSection),
    /// Simulate detector output from ground truth.
    Simdet(SimdetSection),
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        (false, 2) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(file.master_seed).unwrap_or(0);
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Validation("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    }
    use config::Section;
    match cli.command {
        Command::Tile(a) => commands::tile::run(a.overlay(file.tile).overlay(TileSection::defaults()), seed),
        Command::Stats(a) => commands::stats::run(a.overlay(file.stats).overlay(StatsSection::defaults()), seed),
        Command::Mine(a) => commands::mine::run(a.overlay(file.mine).overlay(MineSection::defaults()), seed),
        Command::Contextmap(a) => {
            commands::contextmap::run(a.overlay(file.contextmap).overlay(ContextmapSection::defaults()), seed)
        }
        Command::Augment(a) => commands::augment::run(a.overlay(file.augment).overlay(AugmentSection::defaults()), seed),
        Command::Eval(a) => commands::eval::run(a.overlay(file.eval).overlay(EvalSection::defaults()), seed),
        Command::Loss(a) => commands::loss::run(a.overlay(file.loss).overlay(LossSection::defaults()), seed),
        Command::Gradcheck(a) => {
            commands::gradcheck::run(a.overlay(file.gradcheck).overlay(GradcheckSection::defaults()), seed)
        }
        Command::Synth(a) => commands::synth::run(a.overlay(file.synth).overlay(SynthSection::defaults()), seed),
        Command::Simdet(a) => commands::simdet::run(a.overlay(file.simdet).overlay(SimdetSection::defaults()), seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
