use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hilbert_da::experiments::{run, Command, ExperimentConfig};
use hilbert_da::Error;

/// Seeded experiments for Gaussian measures and ensemble filters.
#[derive(Debug, Parser)]
#[command(name = "hilbert-da", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Flat key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV reports (default: `out` key, else `.`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = ExperimentConfig::from_file(&cli.config).and_then(|mut config| {
        if let Some(seed) = cli.seed {
            config.set("seed", seed);
        }
        run(cli.command, &config, cli.out.as_deref())
    });
    match result {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                println!("{}: threshold violated", cli.command.name());
                ExitCode::from(1)
            }
        }
        Err(Error::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
