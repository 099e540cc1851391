use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod rundir;

#[derive(Parser, Debug)]
#[command(name = "rectiflow", about = "Latent rectified flow over a sequence VAE", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Task preset: gauss2d, length_control or style_transfer.
    #[arg(long)]
    task: Option<String>,
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Config override, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// lexico | fixed_lambda:<v> | separate
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct SampleArgs {
    /// Checkpoint to load; defaults to <out>/checkpoint.lfv.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of samples; defaults to the n_samples setting.
    #[arg(long)]
    n: Option<usize>,
    /// Euler steps; defaults to the steps setting.
    #[arg(long)]
    steps: Option<usize>,
    /// forward or backward
    #[arg(long, default_value = "forward")]
    direction: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and hash the synthetic corpus.
    GenCorpus(#[command(flatten)] Common),
    /// Train a model, optionally resuming from a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Draw and decode samples from a trained checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Score samples from a trained checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sample: SampleArgs,
        /// Decode the starting latents directly, skipping the flow.
        #[arg(long)]
        no_latent_flow: bool,
    },
    /// Time and score sampling at N in {1, 2, 5, 10, 20, 50, 100}.
    SweepSteps {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Train and score one run per lambda mode.
    SweepLambda(#[command(flatten)] Common),
    /// Train and score joint against separate training.
    CompareTraining(#[command(flatten)] Common),
    /// Turn the CSVs of a run directory into tidy x,series,value tables.
    PlotData(#[command(flatten)] Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 2 on usage errors and 0 for --help / --version
            e.exit();
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("usage: rectiflow <COMMAND> (--task <TASK> | --config <FILE>) [--out <DIR>] [--seed <N>] [--set KEY=VALUE]... [--mode <MODE>]");
            ExitCode::from(2)
        }
        Err(commands::Failure::Run(e)) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
