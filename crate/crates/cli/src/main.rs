use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slc_cli::{commands, Context, Failure, DEFAULT_CONFIG};

/// Wheel-loader short loading cycle: engine identification, open-loop
/// simulation and switching-time optimization.
#[derive(Parser, Debug)]
#[command(name = "slc", version)]
struct Cli {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the default configuration with comments and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Identify the engine torque map and manifold dynamics from synthetic data.
    FitEngine,
    /// Simulate the four-phase open-loop cycle.
    OpenLoopSlc,
    /// Train the costate networks backward in time.
    Train,
    /// Sweep the switching time with a trained network and roll out the best.
    Optimize,
    /// Closed-loop rollout at a fixed switching time.
    Simulate {
        #[arg(long)]
        t1: f64,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.print_config {
        print!("{DEFAULT_CONFIG}");
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::config(anyhow::anyhow!(
            "no subcommand given; see `slc --help`"
        )));
    };
    let ctx = Context::load(cli.config.as_deref(), cli.seed, cli.out)?;
    match command {
        Command::FitEngine => json(&commands::fit_engine(&ctx)?),
        Command::OpenLoopSlc => json(&commands::open_loop_slc(&ctx)?),
        Command::Train => json(&commands::train(&ctx)?),
        Command::Optimize => json(&commands::optimize(&ctx)?),
        Command::Simulate { t1 } => json(&commands::simulate(&ctx, t1)?),
    }
    Ok(())
}

fn json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).unwrap_or_default());
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.status)
        }
    }
}
