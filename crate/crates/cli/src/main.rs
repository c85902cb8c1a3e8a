use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod methods;
mod output;
mod presets;

use error::CliError;

/// Worker threads for per-instance work; defaults to all cores.
const WORKERS_ENV: &str = "ATTRIB_WORKERS";

#[derive(Parser)]
#[command(name = "attrib", version, about = "Feature attribution and inclusion-curve evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a value: `section.key=value`, or `key=value` for this command's section.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from a synthetic process.
    GenData(Common),
    /// Train a prediction model, surrogate or amortized explainer.
    Train(Common),
    /// Compute attributions for every instance of a dataset.
    Explain(Common),
    /// Inclusion curve, iAUC and leakage flag of an attribution file.
    Evaluate(Common),
    /// End-to-end leakage demonstrations on the constructed processes.
    DemoLeakage(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, section) = match &cli.command {
        Command::GenData(c) => (c, "gen-data"),
        Command::Train(c) => (c, "train"),
        Command::Explain(c) => (c, "explain"),
        Command::Evaluate(c) => (c, "evaluate"),
        Command::DemoLeakage(c) => (c, "demo-leakage"),
    };
    let cfg = config::load(common.config.as_deref(), &common.overrides, section)?;
    match cli.command {
        Command::GenData(_) => commands::gen_data(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Explain(_) => commands::explain(&cfg),
        Command::Evaluate(_) => commands::evaluate_cmd(&cfg),
        Command::DemoLeakage(_) => commands::demo_leakage(&cfg),
    }
}

fn init_workers() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{WORKERS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { 0 };
            e.print().ok();
            return ExitCode::from(code as u8);
        }
    };
    match init_workers().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
