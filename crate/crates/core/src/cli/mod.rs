//! Command-line front end: `clean`, `train`, `eval`, `screen`, `enumerate`.
//!
//! Settings come from built-in defaults, then the optional `--config` JSON
//! file, then command-line flags. Exit codes: 0 success, 2 usage error,
//! 3 data error, 4 numeric failure.

mod commands;
mod config;

pub use commands::{cmd_clean, cmd_enumerate, cmd_eval, cmd_screen, cmd_train, EvalSummary, ScreenHit, TrainSummary};
pub use config::{RunConfig, DEFAULT_RANK_K, DEFAULT_SEED, DEFAULT_TOP_K, DEFAULT_TRAIN_FRACTION};

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{ComponentSchema, TgBand};
use crate::error::{Error, ErrorKind, Result};

#[derive(Debug, Parser)]
#[command(name = "deepglass", version, about = "Screen glass compositions for a target Tg band")]
pub struct Cli {
    /// Seed for splitting, initialization and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON file of run settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drop rows with out-of-range fraction sums or missing Tg.
    Clean(CleanArgs),
    /// Train an encoder and write a checkpoint plus training history.
    Train(TrainArgs),
    /// Evaluate a checkpoint and the KNN baseline on the validation split.
    Eval(EvalArgs),
    /// Rank candidate compositions by similarity to the target class.
    Screen(ScreenArgs),
    /// Write every composition on a simplex grid.
    Enumerate(EnumerateArgs),
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub min_sum: Option<f64>,
    #[arg(long)]
    pub max_sum: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub data: PathBuf,
    /// Target Tg band as LOW:HIGH (°C).
    #[arg(long)]
    pub band: Option<String>,
    /// Checkpoint path.
    #[arg(short, long)]
    pub out: PathBuf,
    /// History CSV path; defaults to the checkpoint path with `.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    #[arg(long)]
    pub report_dir: PathBuf,
    /// Rank cutoff for Precision@k.
    #[arg(short)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    pub checkpoint: PathBuf,
    pub candidates: PathBuf,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    /// Comma-separated component names.
    #[arg(long, conflicts_with = "n")]
    pub components: Option<String>,
    /// Number of components, named x1..xn.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub max_nonzero: Option<usize>,
    /// Per-component bounds, `LO:HI` separated by commas, in schema order.
    #[arg(long)]
    pub bounds: Option<String>,
    /// Refuse grids larger than this.
    #[arg(long)]
    pub cap: Option<u64>,
    #[arg(short, long)]
    pub out: PathBuf,
}

pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn parse_bounds(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|pair| {
            let bad = || Error::Config(format!("bound `{pair}` must look like LO:HI"));
            let (lo, hi) = pair.split_once(':').ok_or_else(bad)?;
            let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
            Ok((lo, hi))
        })
        .collect()
}

fn history_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".history.csv");
    out.with_file_name(name)
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    match cli.command {
        Command::Clean(a) => {
            let (lo, hi) = RunConfig {
                min_sum: a.min_sum.or(cfg.min_sum),
                max_sum: a.max_sum.or(cfg.max_sum),
                ..RunConfig::default()
            }
            .sum_bounds()?;
            cmd_clean(&a.input, &a.output, lo, hi).map(|_| ())
        }
        Command::Train(a) => {
            if a.epochs.is_some() {
                cfg.epochs = a.epochs;
            }
            if a.band.is_some() {
                cfg.band = a.band;
            }
            cfg.validate()?;
            let band: TgBand = cfg
                .band()?
                .ok_or_else(|| Error::Config("a target band is required (--band LOW:HIGH or `band`)".into()))?;
            let history = a.history.unwrap_or_else(|| history_path(&a.out));
            cmd_train(&a.data, &cfg, band, &a.out, &history).map(|_| ())
        }
        Command::Eval(a) => {
            let k = a.k.unwrap_or(cfg.rank_k());
            cmd_eval(&a.checkpoint, &a.data, &a.report_dir, k, &cfg).map(|_| ())
        }
        Command::Screen(a) => {
            let top_k = a.top_k.unwrap_or(cfg.top_k());
            cmd_screen(&a.checkpoint, &a.candidates, top_k, &a.out).map(|_| ())
        }
        Command::Enumerate(a) => {
            let schema = match (&a.components, a.n) {
                (Some(names), None) => ComponentSchema::new(names.split(',').map(str::trim))?,
                (None, Some(n)) => ComponentSchema::numbered(n)?,
                _ => return Err(Error::Config("give either --components or --n".into())),
            };
            if a.step.is_some() {
                cfg.step = a.step;
            }
            if a.max_nonzero.is_some() {
                cfg.max_nonzero = a.max_nonzero;
            }
            if a.cap.is_some() {
                cfg.cap = a.cap;
            }
            cfg.validate()?;
            let mut grid = cfg.grid(schema.n())?;
            grid.bounds = a.bounds.as_deref().map(parse_bounds).transpose()?;
            cmd_enumerate(&schema, &grid, &a.out).map(|_| ())
        }
    }
}
