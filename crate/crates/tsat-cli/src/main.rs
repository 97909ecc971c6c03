//! Batch command line for the dynamic-graph forecasting pipeline.
//!
//! Exit codes: 0 success, 1 internal/contract error, 2 bad user input.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "tsat",
    version,
    about = "Multivariate time series forecasting on edge-enhanced dynamic graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose each series of a CSV into IMFs plus a residual.
    Decompose(Overrides),
    /// Build per-window dynamic graphs and a window manifest.
    BuildGraph(Overrides),
    /// Generate a synthetic coupled-sinusoid dataset.
    Synth(Overrides),
    /// Train on the sequential train/val splits and evaluate on test.
    Train(Overrides),
    /// Evaluate a checkpoint on the test split of a CSV.
    Evaluate(Overrides),
    /// Train and evaluate the four ablation variants.
    Ablate(Overrides),
    /// Export node and pooled graph embeddings from a checkpoint.
    Embed(Overrides),
}

fn main() {
    let cli = Cli::parse();
    let (name, overrides, run): (&str, &Overrides, fn(&RunConfig) -> tsat::Result<()>) = match &cli.command {
        Command::Decompose(o) => ("decompose", o, commands::cmd_decompose),
        Command::BuildGraph(o) => ("build-graph", o, commands::cmd_build_graph),
        Command::Synth(o) => ("synth", o, commands::cmd_synth),
        Command::Train(o) => ("train", o, commands::cmd_train),
        Command::Evaluate(o) => ("evaluate", o, commands::cmd_evaluate),
        Command::Ablate(o) => ("ablate", o, commands::cmd_ablate),
        Command::Embed(o) => ("embed", o, commands::cmd_embed),
    };
    let result = RunConfig::resolve(name, overrides).and_then(|cfg| run(&cfg));
    if let Err(e) = result {
        eprintln!("error: {}", e);
        std::process::exit(e.exit_code());
    }
}
