use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{
    CompareFlags, GenDataFlags, GradcheckFlags, PretrainFlags, SweepFlags, UnlearnFlags,
};

/// Representation-misdirection unlearning experiments on a toy network.
#[derive(Debug, Parser)]
#[command(name = "srmu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an entangled forget/retain dataset.
    GenData {
        #[command(flatten)]
        flags: GenDataFlags,
        /// JSON object of flag values; explicit flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model jointly on both tasks and write a checkpoint.
    Pretrain {
        #[command(flatten)]
        flags: PretrainFlags,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one unlearning job from a checkpoint.
    Unlearn {
        #[command(flatten)]
        flags: UnlearnFlags,
        /// JSON object of flag values, or a run manifest to replay.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Unlearn over a coefficient grid and several seeds.
    Sweep {
        #[command(flatten)]
        flags: SweepFlags,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Matched-retention comparison of sweep results.
    Compare {
        #[command(flatten)]
        flags: CompareFlags,
    },
    /// Finite-difference check of the unlearning gradient on a 6-unit model.
    Gradcheck {
        #[command(flatten)]
        flags: GradcheckFlags,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { flags, config } => commands::gen_data(flags, config.as_deref()),
        Command::Pretrain { flags, config } => commands::pretrain(flags, config.as_deref()),
        Command::Unlearn { flags, config } => commands::unlearn(flags, config.as_deref()),
        Command::Sweep { flags, config } => commands::sweep(flags, config.as_deref()),
        Command::Compare { flags } => commands::compare(flags),
        Command::Gradcheck { flags, config } => commands::gradcheck(flags, config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
