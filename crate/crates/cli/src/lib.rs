//! `parttex` command-line interface.
//!
//! Each subcommand is one pipeline stage. Artifacts go to the paths given on
//! the command line; structured logs and errors go to stderr as JSON lines.

mod commands;
mod log;

use std::ffi::OsString;
use std::path::Path;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::texture::{resolve_sds_config, TextureArgs};
pub use log::Logger;

/// Distinct process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Unexpected internal failure.
    Internal = 1,
    /// Unknown flag or malformed argument (clap's own code).
    Usage = 2,
    /// Missing, unreadable or invalid input artifact.
    Input = 3,
    /// Oracle unreachable, timed out, or answered with an error.
    Oracle = 4,
    /// Numerical failure during optimization (non-finite loss or gradient).
    Numerical = 5,
    /// Output could not be written.
    Output = 6,
}

impl ExitKind {
    pub fn name(self) -> &'static str {
        match self {
            ExitKind::Internal => "internal",
            ExitKind::Usage => "usage",
            ExitKind::Input => "input",
            ExitKind::Oracle => "oracle",
            ExitKind::Numerical => "numerical",
            ExitKind::Output => "output",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError::new(ExitKind::Input, message)
    }

    pub fn output(message: impl Into<String>) -> Self {
        CliError::new(ExitKind::Output, message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind.name(), self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "parttex", version, about = "Part-guided mesh texturing toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct GlobalArgs {
    /// Worker threads for internal parallelism (0 = all cores) [published: none]
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Run everything serially; artifacts are byte-identical across runs [published: none]
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Suppress info-level log lines on stderr [published: none]
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render normal, depth, label and color maps from sampled viewpoints
    Render(commands::render::RenderArgs),
    /// Vote per-view part segments onto mesh vertices
    SegmentVote(commands::segment::SegmentArgs),
    /// Optimize a color field with reconstruction and score-distillation losses
    Texture(TextureArgs),
    /// Compare a prediction against ground truth and write a JSON report
    Metrics(commands::metrics::MetricsArgs),
    /// Split a labeled mesh into one mesh per part
    Decompose(commands::decompose::DecomposeArgs),
    /// Check that an oracle endpoint answers the protocol
    OracleCheck(commands::oracle_check::OracleCheckArgs),
}

/// Shared viewpoint flags.
#[derive(Debug, Args, Clone)]
pub struct ViewArgs {
    /// Number of viewpoints on the sphere [published: 30]
    #[arg(long, default_value_t = parttex::view::DEFAULT_VIEW_COUNT)]
    pub views: usize,
    /// Square render resolution in pixels [published: none]
    #[arg(long, default_value_t = parttex::view::DEFAULT_RESOLUTION)]
    pub resolution: u32,
    /// Lattice phase seed; 0 is the canonical lattice [published: none]
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub(crate) fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_file() {
        return Err(CliError::input(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitKind::Usage as u8 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let logger = Logger::new(cli.global.quiet);
    match run(&cli, &logger) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            logger.error(&e);
            ExitCode::from(e.kind as u8)
        }
    }
}

pub fn run(cli: &Cli, logger: &Logger) -> CliResult<()> {
    let threads = if cli.global.deterministic { 1 } else { cli.global.threads };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::new(ExitKind::Internal, e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Render(a) => commands::render::run(a, logger),
        Command::SegmentVote(a) => commands::segment::run(a, &cli.global, logger),
        Command::Texture(a) => commands::texture::run(a, logger),
        Command::Metrics(a) => commands::metrics::run(a, logger),
        Command::Decompose(a) => commands::decompose::run(a, logger),
        Command::OracleCheck(a) => commands::oracle_check::run(a, logger),
    })
}
