//! `s2align`: corpus generation, training, zero-shot evaluation, theorem
//! verification and ablations from one JSON configuration.

mod commands;
mod corpus;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use s2align_core::CoreError;

#[derive(Parser)]
#[command(name = "s2align", version, about = "Sparse text-attributed graph alignment")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct GlobalArgs {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress and tables on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus as TAG-JSONL files plus a manifest.
    Generate,
    /// Train a model and write a checkpoint, a step log and the resolved config.
    Train {
        /// Corpus directory written by `generate`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Objective variant: full, no_rec, no_scrb or no_rec_no_scrb.
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Zero-shot evaluation of a checkpoint on held-out domains.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated tasks (classify, link, retrieval).
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<String>>,
        /// Comma-separated evaluation seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Check weighted risk equalization and spurious feature elimination.
    Verify {
        /// Use domain-dependent label laws; equalization must then fail.
        #[arg(long)]
        violate: bool,
        /// Relative tolerance for the equalization check.
        #[arg(long)]
        tol_rel: Option<f64>,
    },
    /// Train the four objective variants and compare held-out accuracy.
    Ablate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated training seeds; defaults to the eval seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Render the tables of every report found in a directory.
    Report {
        /// Directory with metrics.json, ablation.json or verify.json.
        #[arg(long = "in")]
        input: PathBuf,
    },
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    /// A verification or acceptance check did not pass.
    Failed(String),
    Config(String),
    Io(String),
    Run(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) | CliError::Run(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Failed(m) => write!(f, "check failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Run(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Io { .. } => CliError::Io(msg),
            CoreError::Config(_)
            | CoreError::Parse { .. }
            | CoreError::Validation(_)
            | CoreError::UnknownTask { .. }
            | CoreError::InvalidPrompts(_)
            | CoreError::EmptyPromptSet
            | CoreError::Checkpoint(_)
            | CoreError::UnknownDomain(_) => CliError::Config(msg),
            _ => CliError::Run(msg),
        }
    }
}

impl From<s2align_theory::TheoryError> for CliError {
    fn from(e: s2align_theory::TheoryError) -> Self {
        CliError::Run(e.to_string())
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("S2ALIGN_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("S2ALIGN_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(CliError::Config("S2ALIGN_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Run(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Generate => commands::generate(&cli.global),
        Command::Train { corpus, variant } => commands::train(&cli.global, corpus.as_deref(), &variant),
        Command::Eval {
            checkpoint,
            corpus,
            tasks,
            seeds,
        } => commands::eval(&cli.global, &checkpoint, corpus.as_deref(), tasks, seeds),
        Command::Verify { violate, tol_rel } => commands::verify(&cli.global, violate, tol_rel),
        Command::Ablate { corpus, seeds } => commands::ablate(&cli.global, corpus.as_deref(), seeds),
        Command::Report { input } => commands::report(&input, cli.global.quiet),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("s2align: {e}");
            ExitCode::from(e.code())
        }
    }
}
