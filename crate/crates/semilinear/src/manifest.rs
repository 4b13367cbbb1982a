//! Run manifest: what was run, with which inputs, and what it produced.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

/// Contains no timestamps or paths, so reruns of one configuration and seed
/// produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_sha256: String,
    pub seed: u64,
    pub grid: usize,
    pub tolerances: BTreeMap<String, f64>,
    pub outputs: Vec<OutputEntry>,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Fixed numerical tolerances in force for every run.
pub fn tolerances() -> BTreeMap<String, f64> {
    use semilinear_core::sparse::{KERNEL_TOLERANCE, SOLVE_CONTRACT};
    let mut t = BTreeMap::new();
    t.insert("kernel_detection".into(), KERNEL_TOLERANCE);
    t.insert("linear_solve_contract".into(), SOLVE_CONTRACT);
    t.insert("newton_tolerance".into(), semilinear_core::solution_map::NewtonOptions::default().tolerance);
    t.insert("picard_stop".into(), 1e-12);
    t.insert("contraction_rate_max".into(), 0.5);
    t.insert("point_value_penalty".into(), semilinear_core::runge::DEFAULT_PENALTY);
    t.insert("point_value_relative".into(), 1e-6);
    t.insert("violation_denominator".into(), crate::commands::VIOLATION_DENOMINATOR);
    t.insert("violation_numerator".into(), crate::commands::VIOLATION_NUMERATOR);
    t
}
