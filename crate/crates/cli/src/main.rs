//! `instab`: command-line front end for the workbench.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use instab::exact::Rational;
use instab::Sigma;

use config::{folds, rational, sigma, BuildArgs, FileConfig, FoldList};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration, detected before any computation.
    Usage(String),
    Compute(instab::Error),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Compute(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "cli-harness: io: {m}"),
        }
    }
}

impl From<instab::Error> for CliError {
    fn from(e: instab::Error) -> CliError {
        CliError::Compute(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "instab", version, about = "Exact cutting-and-stacking, randomness tests and instability constructions")]
pub struct Cli {
    /// TOML file with defaults for the flags below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Height schedule for a budget function, or an explicit toy schedule.
    Schedule(ScheduleArgs),
    /// Stages of the tower with measure ledgers and certificates.
    Build(BuildCmd),
    /// Orbit of a rational point under a built stage.
    Orbit(OrbitArgs),
    /// Exact test masses against their analytic bounds.
    #[command(subcommand)]
    Test(TestCmd),
    /// Alternating low/high-frequency construction with its trace.
    Construct(ConstructArgs),
    /// LZ78 ratio series of a bit string or of a construction trace.
    Compress(CompressArgs),
    /// Verify an output directory against its manifest and summarize it.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
struct OutArg {
    /// Output directory; a manifest of content hashes is written beside the files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    #[arg(long, value_parser = sigma)]
    sigma: Option<Sigma>,
    #[arg(long, value_parser = rational)]
    r: Option<Rational>,
    /// Number of stage heights after `h_{-1}`.
    #[arg(long, default_value_t = 3)]
    count: usize,
    /// Explicit `h_0,h_1,…`, bypassing the growth inequality.
    #[arg(long, value_delimiter = ',')]
    toy: Option<Vec<u64>>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug, Clone, Default)]
struct TowerFlags {
    #[arg(long, value_parser = rational)]
    r: Option<Rational>,
    #[arg(long, value_parser = sigma)]
    sigma: Option<Sigma>,
    /// Toy heights `h_0,h_1,…`.
    #[arg(long, value_delimiter = ',')]
    heights: Option<Vec<u64>>,
    /// `R1,R2,…` (last repeats) or `search:CAP`.
    #[arg(long, value_parser = folds)]
    folds: Option<FoldList>,
    #[arg(long)]
    stage_cap: Option<u32>,
    #[arg(long)]
    metric_budget: Option<u64>,
}

impl TowerFlags {
    fn build_args(&self) -> BuildArgs {
        BuildArgs {
            r: self.r.clone(),
            sigma: self.sigma.clone(),
            heights: self.heights.clone(),
            folds: self.folds.clone(),
            stage_cap: self.stage_cap,
            metric_budget: self.metric_budget,
            ..BuildArgs::default()
        }
    }
}

#[derive(Args, Debug)]
struct BuildCmd {
    #[command(flatten)]
    tower: TowerFlags,
    /// Last stage to build.
    #[arg(long, default_value_t = 3)]
    stages: u32,
    /// Stages with at most this many levels are also dumped as explicit gadgets.
    #[arg(long, default_value_t = 4096)]
    max_levels: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct OrbitArgs {
    #[command(flatten)]
    tower: TowerFlags,
    #[arg(long, default_value_t = 2)]
    stage: u32,
    /// Starting point `p/q` in `[0, 1)`.
    #[arg(long, value_parser = rational)]
    x: Rational,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Subcommand, Debug)]
enum TestCmd {
    /// Law of large numbers: `|k/n − 1/2| >= ε`.
    Lln(LlnArgs),
    /// Law of the iterated logarithm blocks.
    Lil(LilArgs),
    /// Rate-trimmed combination of several tests.
    Combined(CombinedArgs),
}

#[derive(Args, Debug)]
struct LlnArgs {
    #[arg(long, value_parser = rational)]
    eps: Rational,
    #[arg(long, default_value_t = 20)]
    max_n: u64,
    /// Bit string to score against the test.
    #[arg(long)]
    input: Option<String>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct LilArgs {
    #[arg(long, value_parser = rational)]
    delta: Rational,
    #[arg(long, default_value_t = 8)]
    blocks: u64,
    #[arg(long)]
    input: Option<String>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct CombinedArgs {
    /// LLN members.
    #[arg(long, value_delimiter = ',', value_parser = rational)]
    eps: Vec<Rational>,
    /// LIL members.
    #[arg(long, value_delimiter = ',', value_parser = rational)]
    delta: Vec<Rational>,
    #[arg(long, default_value_t = 4)]
    blocks: u64,
    #[arg(long)]
    input: Option<String>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct ConstructArgs {
    #[command(flatten)]
    tower: TowerFlags,
    /// Number of alternating steps after `ω(0)`.
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    lookahead: Option<usize>,
    #[arg(long)]
    cell_cap: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct CompressArgs {
    /// `trace.jsonl` from `construct`; checkpoints default to its step boundaries.
    #[arg(long, conflicts_with = "bits")]
    trace: Option<PathBuf>,
    /// Literal bit string.
    #[arg(long)]
    bits: Option<String>,
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    /// Required `max(even) − min(odd)` for a trace.
    #[arg(long, value_parser = rational)]
    margin: Option<Rational>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding a manifest.
    dir: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("instab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_file(cli: &Cli) -> Result<FileConfig, CliError> {
    cli.config.as_deref().map(FileConfig::load).transpose().map(Option::unwrap_or_default)
}
