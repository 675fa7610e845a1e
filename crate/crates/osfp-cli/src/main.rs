//! `osfp` — passive OS fingerprinting toolkit.
//!
//! Subcommands: extract session fingerprints from captures, measure
//! information gain, run single- and multi-session classification
//! experiments, sweep obfuscation levels, and synthesize labeled corpora.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit code contract: 0 success, 1 runtime error, 2 usage/config error.
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser)]
#[command(name = "osfp", version, about = "Passive OS fingerprinting toolkit")]
struct Cli {
    /// Seed override for corpus generation and experiments.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory receiving output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse pcap/pcapng files into session-record JSON Lines.
    Extract(ExtractArgs),
    /// Entropy and information-gain reports from labeled sessions.
    Infogain(InfogainArgs),
    /// Single- and multi-session classification experiments.
    Experiment(ConfigArgs),
    /// Obfuscation sweep against a clean-trained multi-session model.
    Evade(ConfigArgs),
    /// Generate a labeled synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Capture files (pcap or pcapng).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output JSONL path.
    #[arg(short, long, default_value = "sessions.jsonl")]
    out: PathBuf,
    /// Environment variable holding the pseudonymization key.
    #[arg(long, default_value = "OSFP_KEY", conflicts_with = "key_file")]
    key_env: String,
    /// File holding the pseudonymization key bytes.
    #[arg(long)]
    key_file: Option<PathBuf>,
    /// Keep observed TTL values instead of rounding up.
    #[arg(long)]
    raw_ttl: bool,
    /// Keep raw GREASE code points instead of the sentinel.
    #[arg(long)]
    raw_grease: bool,
}

#[derive(Args)]
struct InfogainArgs {
    /// Labeled session JSONL.
    #[arg(long)]
    sessions: PathBuf,
    /// Counting unit: flow, window, or both.
    #[arg(long, default_value = "both")]
    unit: String,
    #[arg(long, default_value_t = 60)]
    window_minutes: u32,
    /// Fingerprints listed in the per-fingerprint gain tables.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config path.
    #[arg(short, long)]
    config: PathBuf,
    /// Corpus path override.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus spec JSON; bundled profiles when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output JSONL path.
    #[arg(short, long, default_value = "corpus.jsonl")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        // Ignore "already initialized" when tests call main repeatedly.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let result = match &cli.command {
        Command::Extract(args) => commands::extract::run(&cli.out_dir, args),
        Command::Infogain(args) => commands::infogain::run(&cli.out_dir, args),
        Command::Experiment(args) => commands::experiment::run(&cli.out_dir, args, cli.seed),
        Command::Evade(args) => commands::evade::run(&cli.out_dir, args, cli.seed),
        Command::Synth(args) => commands::synth::run(&cli.out_dir, args, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
