use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use mpqdm2::cli::commands::{run, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Pretrain,
    Quantize,
    Finetune,
    Sample,
    Report,
}

/// Low-bit quantization pipeline for a toy diffusion model.
#[derive(Debug, Parser)]
#[command(name = "mpqdm2", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// Pipeline config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the command's primary output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if let Some(n) = std::env::var("MPQDM2_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let cmd = match args.command {
        Cmd::Pretrain => Command::Pretrain,
        Cmd::Quantize => Command::Quantize,
        Cmd::Finetune => Command::Finetune,
        Cmd::Sample => Command::Sample,
        Cmd::Report => Command::Report,
    };
    match run(cmd, &args.config, args.seed, args.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
