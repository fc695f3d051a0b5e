use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qfbart::commands;
use qfbart::config::RunConfig;
use qfbart::Error;

#[derive(Parser)]
#[command(name = "qfbart", version, about = "Multi-country quantile factor BART")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict to one configured model.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Draw a synthetic panel and its truth file.
    Simulate,
    /// Run the sampler and persist the draws.
    Estimate,
    /// Quantile forecasts from the last panel quarter.
    Forecast,
    /// Recursive out-of-sample scores against the benchmark.
    Evaluate,
    /// Impulse responses to factor and US FCI shocks.
    Girf,
    /// Variance decomposition of the factor.
    Vardecomp,
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let only = cli.model.as_deref();
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::Estimate => commands::cmd_estimate(&cfg, only),
        Command::Forecast => commands::cmd_forecast(&cfg, only),
        Command::Evaluate => commands::cmd_evaluate(&cfg).map(|(_, p)| p),
        Command::Girf => commands::cmd_girf(&cfg, only),
        Command::Vardecomp => commands::cmd_vardecomp(&cfg, only),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
