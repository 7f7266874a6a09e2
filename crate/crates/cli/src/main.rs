use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::RunOverrides;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files (exit code 2).
    Usage(String),
    /// Inference produced non-finite values (exit code 3).
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "error: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "topicstream", version, about = "Streaming topic models over timestamped news corpora")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw corpus into canonical JSONL plus a vocabulary file.
    Ingest {
        /// Input files or directories (directories are read in name order).
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum)]
        format: commands::FormatArg,
        #[arg(long)]
        out_corpus: PathBuf,
        #[arg(long)]
        out_vocab: PathBuf,
        /// Minimum number of documents a term must occur in.
        #[arg(long, default_value_t = topicstream::corpus::DEFAULT_MIN_DOC_FREQ)]
        min_df: usize,
    },
    /// Train a model and write a checkpoint plus the per-document series.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// JSON run config: one object, or a list of objects for a sweep.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: RunOverrides,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-document TSV.
        #[arg(long)]
        output: PathBuf,
        /// Moving-average window of the smoothed column.
        #[arg(long, default_value_t = 100)]
        window: usize,
    },
    /// Assign documents to a topic and optionally score against labels.
    Timeline {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        topic: usize,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        /// TSV of `doc_id<TAB>label` with label 0/1.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Dump seeded Dirichlet-process trajectories as JSONL.
    Simulate {
        #[command(subcommand)]
        process: commands::Process,
        #[arg(long, env = "TM_SEED", default_value_t = config::DEFAULT_SEED, global = true)]
        seed: u64,
        #[arg(long, default_value_t = 1, global = true)]
        runs: usize,
        /// Output file (stdout when absent).
        #[arg(long, global = true)]
        output: Option<PathBuf>,
    },
    /// Write a seeded synthetic corpus in canonical form.
    Synth {
        #[arg(long, value_enum)]
        kind: commands::SynthKind,
        #[arg(long, default_value_t = 500)]
        docs: usize,
        #[arg(long, env = "TM_SEED", default_value_t = config::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out_corpus: PathBuf,
        #[arg(long)]
        out_vocab: PathBuf,
    },
    /// Wall-clock training time on corpus prefixes.
    Bench {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', required = true)]
        models: Vec<config::ModelArg>,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[command(flatten)]
        overrides: RunOverrides,
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Ingest { input, format, out_corpus, out_vocab, min_df } => {
            commands::ingest(&input, format, &out_corpus, &out_vocab, min_df)
        }
        Command::Train { corpus, vocab, config, overrides, checkpoint, output, window } => {
            commands::train(&corpus, &vocab, config.as_deref(), &overrides, &checkpoint, &output, window)
        }
        Command::Timeline { checkpoint, corpus, topic, threshold, labels, output, confusion } => {
            commands::timeline(&checkpoint, &corpus, topic, threshold, labels.as_deref(), &output, confusion.as_deref())
        }
        Command::Simulate { process, seed, runs, output } => commands::simulate(&process, seed, runs, output.as_deref()),
        Command::Synth { kind, docs, seed, out_corpus, out_vocab } => {
            commands::synth(kind, docs, seed, &out_corpus, &out_vocab)
        }
        Command::Bench { corpus, vocab, models, sizes, overrides, output } => {
            commands::bench(&corpus, &vocab, &models, &sizes, &overrides, &output)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
