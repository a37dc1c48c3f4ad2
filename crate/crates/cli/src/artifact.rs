//! On-disk artifacts. JSON round-trips are lossless: floats are emitted in
//! shortest-roundtrip form, and nothing time-dependent is stored (run
//! timestamps go to a sidecar log instead).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverInfo {
    pub status: String,
    pub objective: f64,
    pub iterations: u32,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerArtifact {
    pub version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub mode: String,
    pub data_driven: bool,
    pub lambda: f64,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub k: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_k: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<Vec<f64>>>,
    pub margins: Vec<f64>,
    pub margin_mode: String,
    pub residual_eq: f64,
    pub residual_ineq: f64,
    pub solver: SolverInfo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskBoundArtifact {
    pub version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub data_driven: bool,
    pub lambda: f64,
    pub beta: f64,
    pub confidence: f64,
    pub eps_bar: f64,
    pub eps_raw: f64,
    pub vacuous: bool,
    pub sigma_ss: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_k: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovEstimateArtifact {
    pub version: u32,
    pub tool_version: String,
    pub sigma_hat: Vec<Vec<f64>>,
    pub n_samples: usize,
    pub beta: f64,
    pub support_bound: f64,
    pub radius: f64,
    pub certified: bool,
    pub required_n: usize,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::input(format!("serialization: {e}")))?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn read_controller(path: &Path) -> CliResult<ControllerArtifact> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Run metadata that would break byte-identical outputs lives here, next to
/// the artifact, never inside it.
pub fn write_sidecar_log(out: &Path, command: &str) -> CliResult<()> {
    let log_path = out.with_extension("log");
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let line = format!("unix_time={stamp} command={command}\n");
    fs::write(&log_path, line)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", log_path.display())))?;
    Ok(())
}
