//! Configuration, file formats and the experiment runner for the
//! `semilinear` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

use std::path::Path;

use clap::ValueEnum;
use serde_json::{json, Value};

pub use config::Config;
pub use error::{CliError, CliResult};
pub use manifest::Manifest;

use commands::Context;
use manifest::{file_sha256, sha256_hex, OutputEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subcommand {
    Forward,
    Kernel,
    Solmap,
    Matched,
    Dn,
    ReconstructLinear,
    ReconstructSweep,
    Holin,
    Runge,
    Stability,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Forward => "forward",
            Subcommand::Kernel => "kernel",
            Subcommand::Solmap => "solmap",
            Subcommand::Matched => "matched",
            Subcommand::Dn => "dn",
            Subcommand::ReconstructLinear => "reconstruct-linear",
            Subcommand::ReconstructSweep => "reconstruct-sweep",
            Subcommand::Holin => "holin",
            Subcommand::Runge => "runge",
            Subcommand::Stability => "stability",
        }
    }
}

/// Outcome of one run: the exit code, the manifest written next to the
/// outputs and the command summary (or the error payload).
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub manifest: Manifest,
    pub manifest_sha256: String,
    pub summary: Value,
}

fn dispatch(sub: Subcommand, ctx: &mut Context) -> CliResult<Value> {
    match sub {
        Subcommand::Forward => commands::forward(ctx),
        Subcommand::Kernel => commands::kernel(ctx),
        Subcommand::Solmap => commands::solmap(ctx),
        Subcommand::Matched => commands::matched(ctx),
        Subcommand::Dn => commands::dn(ctx),
        Subcommand::ReconstructLinear => commands::reconstruct_linear(ctx),
        Subcommand::ReconstructSweep => commands::reconstruct_sweep(ctx),
        Subcommand::Holin => commands::holin(ctx),
        Subcommand::Runge => commands::runge(ctx),
        Subcommand::Stability => commands::stability(ctx),
    }
}

/// Runs a subcommand into `out_dir`. Errors are written to `error.json`;
/// the manifest is written in every case the directory is usable.
pub fn execute(sub: Subcommand, cfg: &Config, out_dir: &Path) -> CliResult<RunOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let (result, mut outputs) = match Context::new(cfg, out_dir.to_path_buf()) {
        Ok(mut ctx) => {
            let r = dispatch(sub, &mut ctx);
            (r, ctx.outputs().to_vec())
        }
        Err(e) => (Err(e), Vec::new()),
    };
    let (exit_code, summary, error) = match result {
        Ok(s) => (0, s, None),
        Err(e) => {
            let payload = json!({ "kind": e.kind(), "exit_code": e.exit_code(), "message": e.to_string() });
            io::write_json(&out_dir.join("error.json"), &payload)?;
            outputs.push("error.json".into());
            (e.exit_code(), payload, Some(e.to_string()))
        }
    };
    let mut entries = Vec::with_capacity(outputs.len());
    for file in outputs {
        let sha256 = file_sha256(&out_dir.join(&file))?;
        entries.push(OutputEntry { file, sha256 });
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: sub.name().into(),
        config_sha256: sha256_hex(cfg.canonical_json().as_bytes()),
        seed: cfg.seed,
        grid: cfg.grid,
        tolerances: manifest::tolerances(),
        outputs: entries,
        status: if exit_code == 0 { "ok" } else { "error" }.into(),
        exit_code,
        error,
    };
    let path = out_dir.join("manifest.json");
    io::write_json(&path, &manifest)?;
    Ok(RunOutcome {
        exit_code,
        manifest_sha256: file_sha256(&path)?,
        manifest,
        summary,
    })
}
