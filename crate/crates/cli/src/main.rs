use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use retrac_cli::{commands, RunConfig};

#[derive(Parser)]
#[command(name = "retrac", version, about = "Train small diffusion models and attribute them to training data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    MakeData(Io),
    /// Train a denoiser and write checkpoints, the training log and a manifest.
    Train(Io),
    /// Score training samples against held-out test samples.
    Attribute(Io),
    /// Score every training sample against itself.
    SelfInfluence(Io),
    /// Run a diagnostic or metric over a run or score reports.
    Analyze(Io),
}

#[derive(clap::Args)]
struct Io {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> retrac_core::Result<()> {
    let (io, f): (&Io, fn(&RunConfig, &std::path::Path) -> retrac_core::Result<()>) = match &cli.command {
        Command::MakeData(io) => (io, |c, o| commands::make_data(c, o).map(drop)),
        Command::Train(io) => (io, |c, o| commands::train(c, o).map(drop)),
        Command::Attribute(io) => (io, |c, o| commands::attribute(c, o).map(drop)),
        Command::SelfInfluence(io) => (io, |c, o| commands::self_influence(c, o).map(drop)),
        Command::Analyze(io) => (io, |c, o| commands::analyze(c, o).map(drop)),
    };
    let cfg = RunConfig::load(&io.config)?;
    f(&cfg, &io.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {message}", e.category());
            ExitCode::FAILURE
        }
    }
}
