use std::path::PathBuf;
use std::process::ExitCode;

use ccshape_cli::config::SelectorName;
use ccshape_cli::{run_scenario, validate_scenario, Command, RunError, ScenarioFile};
use clap::Parser;

/// Cancellation-carrier design and verification for notched OFDM.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file; the bundled N = 256 notch scenario when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `design.selector`.
    #[arg(long, global = true, value_enum)]
    selector: Option<SelectorName>,
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let mut file = match &cli.config {
        Some(path) => ScenarioFile::load(path)?,
        None => ScenarioFile::notch256(),
    };
    if let Some(seed) = cli.seed {
        file.simulation.seed = seed;
    }
    if let Some(selector) = cli.selector {
        file.design.selector = selector;
    }
    let scenario = validate_scenario(file)?;
    let artifacts = run_scenario(&scenario, cli.command, &cli.out)?;
    for path in &artifacts.files {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
