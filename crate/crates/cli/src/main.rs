mod config;
mod drivers;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Config, ConfigError};

#[derive(Parser)]
#[command(
    name = "aest",
    about = "Adversarial sieve estimation: certified saddle fits and Monte Carlo studies",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Sectioned key=value experiment description.
    #[arg(long)]
    config: PathBuf,
    /// Destination CSV; summary always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides experiment.seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replica parallelism (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// One certified fit of the configured estimator family.
    Estimate(Common),
    /// Criterion-gap rate study over a sample-size grid.
    Rates(Common),
    /// Confidence-interval coverage study.
    Coverage(Common),
    /// Conditional-moment vs conditional-GEL variance comparison.
    Efficiency(Common),
    /// Divergence estimation against the closed-form Gaussian oracle.
    Divergence(Common),
    /// Fit and report the Nash certificate only; fails on a bad certificate.
    NashCheck(Common),
    /// Quick built-in invariant checks.
    Selftest {
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// Exit 0 on success, 1 for configuration problems, 2 for numerical
/// failures inside a driver.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = |common: &Common, driver: drivers::Driver| -> ExitCode {
        if let Some(w) = common.workers {
            init_workers(w);
        }
        let cfg = match Config::load(&common.config) {
            Ok(cfg) => cfg,
            Err(e) => return config_failure(e),
        };
        let seed = match resolve_seed(&cfg, common.seed) {
            Ok(s) => s,
            Err(e) => return config_failure(e),
        };
        let plan = match drivers::plan(driver, &cfg, seed) {
            Ok(p) => p,
            Err(e) => return config_failure(e),
        };
        match drivers::execute(plan, common.out.as_deref()) {
            Ok(summary) => {
                println!("{summary}");
                ExitCode::SUCCESS
            }
            Err(drivers::RunError::Config(e)) => config_failure(e),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        }
    };
    match &cli.command {
        Command::Estimate(c) => run(c, drivers::Driver::Estimate),
        Command::Rates(c) => run(c, drivers::Driver::Rates),
        Command::Coverage(c) => run(c, drivers::Driver::Coverage),
        Command::Efficiency(c) => run(c, drivers::Driver::Efficiency),
        Command::Divergence(c) => run(c, drivers::Driver::Divergence),
        Command::NashCheck(c) => run(c, drivers::Driver::NashCheck),
        Command::Selftest { workers } => {
            if let Some(w) = workers {
                init_workers(*w);
            }
            match drivers::selftest() {
                Ok(summary) => {
                    println!("{summary}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("selftest failed: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}

fn config_failure(e: ConfigError) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(1)
}

fn resolve_seed(cfg: &Config, flag: Option<u64>) -> Result<u64, ConfigError> {
    match flag {
        Some(s) => Ok(s),
        None => cfg.u64("experiment", "seed"),
    }
}

fn init_workers(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}
