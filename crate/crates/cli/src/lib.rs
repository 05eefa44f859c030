//! The `difftriage` command line.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for bad or missing
//! data. [`run`] takes its streams as arguments so the whole pipeline can be
//! driven in-process.

pub mod commands;
pub mod metrics;

use std::ffi::OsString;
use std::fmt::Display;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use difftriage_core::propagation::Granularity;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

pub(crate) fn data(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Standard streams, injectable for tests.
pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

#[derive(Debug, Parser)]
#[command(name = "difftriage", version, about = "Triage differential findings across JavaScript engines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run snippets on every engine and keep the divergent ones.
    Run(RunArgs),
    /// Group findings by exit pattern and refine each group with k-means.
    Cluster(ClusterArgs),
    /// Label cluster medoids, interactively or from a ground-truth file.
    Label(LabelArgs),
    /// Copy medoid labels to every cluster member.
    Propagate(PropagateArgs),
    /// Compare one-cluster-per-pattern against k-means refinement.
    Compare(CompareArgs),
    /// Decide REPORT or SKIP for each finding with a model-driven oracle.
    Triage(TriageArgs),
    /// Score verdicts against ground truth.
    Eval(EvalArgs),
    /// Summarise triage transcripts.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON list of engine definitions.
    #[arg(long)]
    pub engines: PathBuf,
    /// Directory of snippet files; each file stem becomes a finding id.
    #[arg(long)]
    pub snippets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep non-divergent results too.
    #[arg(long)]
    pub keep_all: bool,
    /// Snippets run at once [default: available cores].
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub findings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Largest k tried per exit pattern.
    #[arg(long, default_value_t = difftriage_core::clusterer::DEFAULT_K_MAX)]
    pub k_max: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// One cluster per exit pattern, no k-means.
    #[arg(long)]
    pub no_refine: bool,
    /// Also write each finding's sparse TF-IDF vector as JSON Lines.
    #[arg(long)]
    pub dump_vectors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub clusters: PathBuf,
    /// Labels file; new entries are appended and already labeled medoids skipped.
    #[arg(long)]
    pub labels: PathBuf,
    /// Findings file, used to show each medoid's output.
    #[arg(long)]
    pub findings: Option<PathBuf>,
    /// Take labels from this ground-truth file instead of asking.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Binary,
    RootCause,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Binary => Granularity::Binary,
            GranularityArg::RootCause => Granularity::RootCause,
        }
    }
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    #[arg(long)]
    pub clusters: PathBuf,
    /// Medoid labels.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// How propagated labels are compared with `--truth`.
    #[arg(long, value_enum, default_value_t = GranularityArg::Binary)]
    pub granularity: GranularityArg,
    /// Ground truth for every finding; prints propagation accuracy.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub findings: PathBuf,
    /// Ground truth for every finding.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = difftriage_core::clusterer::DEFAULT_K_MAX)]
    pub k_max: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Write the comparison as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Agentic,
    Sequential,
}

#[derive(Debug, Args)]
pub struct TriageArgs {
    #[arg(long)]
    pub findings: PathBuf,
    /// Oracle configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Agentic)]
    pub mode: ModeArg,
    /// Directory receiving one `<finding_id>.json` transcript per finding.
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory of transcript JSON files.
    #[arg(long)]
    pub transcripts: PathBuf,
    /// Oracle configuration supplying token prices.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(io.stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(io.stdout, "{text}");
                EXIT_OK
            };
        }
    };
    match commands::dispatch(cli.command, io) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {e}");
            e.exit_code()
        }
    }
}
