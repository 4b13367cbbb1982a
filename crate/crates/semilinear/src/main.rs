use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use semilinear::{execute, Config, Subcommand};

/// Experiments for the semilinear equation Δu + a(x, u) = 0 on the unit square.
#[derive(Debug, Parser)]
#[command(name = "semilinear", version)]
struct Cli {
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// JSON configuration; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured grid size.
    #[arg(long)]
    grid: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cfg = match &cli.config {
        Some(path) => Config::load(path),
        None => Ok(Config::default()),
    };
    let mut cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(grid) = cli.grid {
        cfg.grid = grid;
    }
    match execute(cli.subcommand, &cfg, &cli.out) {
        Ok(run) => {
            let text = serde_json::to_string_pretty(&run.summary).unwrap_or_default();
            println!("{text}");
            println!("manifest sha256 {}", run.manifest_sha256);
            if run.exit_code != 0 {
                eprintln!("error: {}", run.manifest.error.as_deref().unwrap_or("unknown"));
            }
            ExitCode::from(run.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
