use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dafts_cli::{exit_code, load_config, run_experiment, Experiment, EXIT_CONFIG, EXIT_NUMERICAL};

/// DAFT-s-AFDM sensing and communication experiments.
#[derive(Debug, Parser)]
#[command(name = "dafts", version)]
struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    experiment: Experiment,
    /// TOML config; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV files and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result =
        load_config(cli.config.as_deref(), cli.seed).and_then(|l| run_experiment(cli.experiment, &l, &cli.out));
    match result {
        Ok((manifest, true)) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Ok((manifest, false)) => {
            eprintln!("self-test failed; see {}", manifest.display());
            ExitCode::from(EXIT_NUMERICAL as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
