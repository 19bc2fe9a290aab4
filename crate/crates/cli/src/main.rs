//! `morphoprobe` command-line entry point.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a data error.

mod analysis;
mod data;
mod experiments;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use morphoprobe_core::config::{ConfigError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "morphoprobe", version, about = "Probe contextual embeddings for morphosyntactic features")]
struct Cli {
    /// JSON experiment configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of ingested corpora.
    #[arg(long, global = true)]
    corpus_dir: Option<PathBuf>,
    /// Directory of sampled tasks.
    #[arg(long, global = true)]
    task_dir: Option<PathBuf>,
    /// Output directory for experiments, analyses and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read CoNLL-U treebanks of one language into a corpus.
    Ingest(data::IngestArgs),
    /// Sample balanced probing tasks from an ingested corpus.
    Sample(data::SampleArgs),
    /// Write the embedding requests a suite needs, for offline extraction.
    Plan(data::PlanArgs),
    /// Train probes on unperturbed data.
    Train(RunArgs),
    /// Train probes under each perturbation of the suite.
    Perturb(experiments::PerturbArgs),
    /// Shapley attribution over the nine positional players.
    Shapley(experiments::ShapleyArgs),
    /// Summarize Shapley profiles along one axis.
    ShapleyReport(analysis::ShapleyReportArgs),
    /// Layer, training-size and random-initialization ablations.
    Ablate(experiments::AblateArgs),
    /// Effects, significance, clustering, layer weights, external scoring.
    Analyze(analysis::AnalyzeArgs),
    /// Render tables and figures from finished runs.
    Report,
}

/// Options shared by every command that trains probes.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Task directories; default: every task under the task directory.
    #[arg(long = "task")]
    tasks: Vec<PathBuf>,
    /// Model ids from the registry; default: the suite's models, else all.
    #[arg(long = "model")]
    models: Vec<String>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    variant: Option<morphoprobe_core::nn::ProbeVariant>,
    /// weighted_sum, concat or single:<k>.
    #[arg(long)]
    layer_mode: Option<morphoprobe_core::nn::LayerMode>,
    #[arg(long)]
    pooling: Option<morphoprobe_core::runner::PoolingChoice>,
    /// Parallel experiments (default: MORPHOPROBE_WORKERS or CPU count).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SuiteKind {
    Perturb,
    Shapley,
}

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn data(e: impl std::fmt::Display) -> Self {
        Failure::Data(e.to_string())
    }

    pub fn usage(e: impl std::fmt::Display) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } | ConfigError::Parse { .. } | ConfigError::MissingPath { .. } | ConfigError::Backend { .. } => Failure::data(e),
            _ => Failure::usage(e),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

/// Configuration after flag overrides.
pub struct Context {
    pub config: ExperimentConfig,
    pub corpus_dir: PathBuf,
    pub task_dir: PathBuf,
    pub out: PathBuf,
}

fn context(cli: &Cli) -> Result<Context, Failure> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let corpus_dir = cli.corpus_dir.clone().or_else(|| config.paths.corpus_dir.clone()).unwrap_or_else(|| "corpus".into());
    let task_dir = cli.task_dir.clone().or_else(|| config.paths.task_dir.clone()).unwrap_or_else(|| "tasks".into());
    let out = cli.out.clone().unwrap_or_else(|| config.paths.output_dir.clone());
    // Directories are checked by the commands that read them.
    let mut check = config.clone();
    check.paths.corpus_dir = None;
    check.paths.task_dir = None;
    check.validate()?;
    Ok(Context { config, corpus_dir, task_dir, out })
}

fn dispatch(cli: Cli) -> CmdResult {
    let ctx = context(&cli)?;
    match cli.command {
        Command::Ingest(a) => data::ingest(&ctx, &a),
        Command::Sample(a) => data::sample(&ctx, &a),
        Command::Plan(a) => data::plan(&ctx, &a),
        Command::Train(a) => experiments::train(&ctx, &a),
        Command::Perturb(a) => experiments::perturb(&ctx, &a),
        Command::Shapley(a) => experiments::shapley(&ctx, &a),
        Command::ShapleyReport(a) => analysis::shapley_report(&ctx, &a),
        Command::Ablate(a) => experiments::ablate(&ctx, &a),
        Command::Analyze(a) => analysis::analyze(&ctx, &a),
        Command::Report => analysis::report(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
