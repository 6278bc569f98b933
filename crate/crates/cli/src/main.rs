mod cmd;
mod common;
mod train_args;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use snf_core::{Error, Result};

use cmd::analyze::AnalyzeCommand;

/// Language-specific subnetwork identification and sparse fine-tuning.
#[derive(Debug, Parser)]
#[command(name = "snf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic toy corpora and parallel bundle.
    Synth(cmd::synth::SynthArgs),
    /// Train a base model on several languages.
    Pretrain(cmd::pretrain::PretrainArgs),
    /// Identify language-specific FFN neurons.
    Identify(cmd::identify::IdentifyArgs),
    /// Fine-tune a checkpoint under a parameter mask.
    Finetune(cmd::finetune::FinetuneArgs),
    /// Evaluate perplexity per language.
    Eval(cmd::eval::EvalArgs),
    /// Analyses of subnetworks and checkpoints.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io { .. } | Error::Json(_) | Error::Checkpoint(_) | Error::NonFinite(_) => 3,
        Error::Consistency(_) => 4,
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("SNF_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("SNF_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Synth(a) => cmd::synth::run(a),
        Command::Pretrain(a) => cmd::pretrain::run(a),
        Command::Identify(a) => cmd::identify::run(a),
        Command::Finetune(a) => cmd::finetune::run(a),
        Command::Eval(a) => cmd::eval::run(a),
        Command::Analyze(a) => cmd::analyze::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
