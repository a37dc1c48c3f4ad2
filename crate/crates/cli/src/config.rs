//! Problem configuration: versioned JSON with matrices as row-major nested
//! arrays and file paths resolved relative to the config file.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use safectl_core::noise::{AmbiguousGaussian, EmpiricalNoise, GaussianModel, NoiseModel};
use safectl_core::polyhedra::PolyhedralSet;
use safectl_core::solver::SolverConfig;
use safectl_core::synth_data::DataRecord;
use safectl_core::synth_model::{LinearSystem, SynthesisObjective, SynthesisOptions};
use safectl_core::tightening::{QuantileRule, RiskAllocation};

use crate::csvio::read_matrix;
use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub version: u32,
    #[serde(default)]
    pub system: Option<SystemSection>,
    #[serde(default)]
    pub data: Option<DataSection>,
    pub safe_set: SafeSetSection,
    pub noise: NoiseSection,
    pub lambda: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub allocation: AllocationSection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub quantile: QuantileSection,
    #[serde(default)]
    pub seed: u64,
    /// Initial state for simulation (defaults to the origin).
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// L1 penalty on G_K in data-driven synthesis (0 disables).
    #[serde(default)]
    pub gk_l1_weight: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub x0: String,
    pub x1: String,
    pub u0: String,
    pub w0: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeSetSection {
    pub f: Vec<Vec<f64>>,
    pub g: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSection {
    Gaussian {
        sigma: Vec<Vec<f64>>,
    },
    DrGaussian {
        samples_path: String,
        beta: f64,
        lb: f64,
    },
    Empirical {
        samples_path: String,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(untagged)]
pub enum AllocationSection {
    #[default]
    Unset,
    Named(String),
    Explicit(Vec<f64>),
}

#[derive(Debug, Default, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveSection {
    Feasibility,
    #[default]
    MinPSum,
    MinLambda,
}

#[derive(Debug, Default, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum QuantileSection {
    #[default]
    Paper,
    Gaussian,
}

/// Synthesis flavor, either derived from the noise section or forced by
/// `--mode`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Gaussian,
    DrGaussian,
    Cvar,
}

impl Mode {
    pub fn parse(s: &str) -> CliResult<Mode> {
        match s {
            "gaussian" => Ok(Mode::Gaussian),
            "dr-gaussian" => Ok(Mode::DrGaussian),
            "cvar" => Ok(Mode::Cvar),
            other => Err(CliError::input(format!(
                "unknown mode '{other}' (expected gaussian, dr-gaussian or cvar)"
            ))),
        }
    }
}

/// Noise information with referenced sample files loaded.
pub enum LoadedNoise {
    Gaussian(DMatrix<f64>),
    DrGaussian {
        ambiguity: AmbiguousGaussian,
        samples: DMatrix<f64>,
    },
    Empirical(EmpiricalNoise),
}

impl LoadedNoise {
    pub fn default_mode(&self) -> Mode {
        match self {
            LoadedNoise::Gaussian(_) => Mode::Gaussian,
            LoadedNoise::DrGaussian { .. } => Mode::DrGaussian,
            LoadedNoise::Empirical(_) => Mode::Cvar,
        }
    }

    /// Simulation model: the Gaussian uses its covariance, the ambiguous
    /// variant its point estimate, the empirical bag bootstraps rows.
    pub fn simulation_model(&self) -> CliResult<NoiseModel> {
        Ok(match self {
            LoadedNoise::Gaussian(sigma) => {
                NoiseModel::Gaussian(GaussianModel::new(sigma.clone()).map_err(CliError::from)?)
            }
            LoadedNoise::DrGaussian { ambiguity, .. } => {
                NoiseModel::AmbiguousGaussian(ambiguity.clone())
            }
            LoadedNoise::Empirical(e) => NoiseModel::Empirical(e.clone()),
        })
    }

    /// Scenario matrix for CVaR synthesis, when available.
    pub fn scenarios(&self) -> CliResult<EmpiricalNoise> {
        match self {
            LoadedNoise::Empirical(e) => Ok(e.clone()),
            LoadedNoise::DrGaussian { samples, .. } => {
                EmpiricalNoise::new(samples.clone()).map_err(CliError::from)
            }
            LoadedNoise::Gaussian(_) => Err(CliError::input(
                "cvar mode needs recorded noise samples (noise type gaussian has none)",
            )),
        }
    }
}

/// Fully loaded, validated problem.
pub struct Problem {
    pub system: Option<LinearSystem>,
    pub data: Option<DataRecord>,
    pub safe_set: PolyhedralSet,
    pub noise: LoadedNoise,
    pub lambda: f64,
    pub epsilon: f64,
    pub allocation: RiskAllocation,
    pub options: SynthesisOptions,
    pub seed: u64,
    pub x0: DVector<f64>,
    pub config_hash: String,
}

impl Problem {
    pub fn state_dim(&self) -> usize {
        self.safe_set.dim()
    }
}

pub fn to_dmatrix(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(CliError::input(format!("{what}: empty matrix")));
    }
    let nc = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != nc {
            return Err(CliError::input(format!(
                "{what}: row {} has {} entries, expected {nc}",
                i + 1,
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), nc, |r, c| rows[r][c]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Loads and validates a problem configuration. `tol` feeds the solver
/// settings used by every downstream LP/SDP.
pub fn load_problem(path: &Path, tol: Option<f64>) -> CliResult<Problem> {
    let raw = fs::read(path)
        .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: ProblemConfig = serde_json::from_slice(&raw)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    if cfg.version != CONFIG_VERSION {
        return Err(CliError::input(format!(
            "unsupported config version {} (expected {CONFIG_VERSION})",
            cfg.version
        )));
    }
    if !(cfg.lambda > 0.0 && cfg.lambda < 1.0) {
        return Err(CliError::input(format!(
            "lambda must lie in (0, 1), got {}",
            cfg.lambda
        )));
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(CliError::input(format!(
            "epsilon must lie in (0, 1), got {}",
            cfg.epsilon
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| -> PathBuf { base.join(p) };

    let f = to_dmatrix(&cfg.safe_set.f, "safe_set.f")?;
    let g = DVector::from_column_slice(&cfg.safe_set.g);
    let safe_set = PolyhedralSet::new(f, g).map_err(CliError::from)?;

    let system = match &cfg.system {
        Some(sec) => {
            let a = to_dmatrix(&sec.a, "system.a")?;
            let b = to_dmatrix(&sec.b, "system.b")?;
            Some(LinearSystem::new(a, b).map_err(CliError::from)?)
        }
        None => None,
    };

    let data = match &cfg.data {
        Some(sec) => {
            // files carry one time sample per line; transpose to
            // column-per-sample
            let x0 = read_matrix(&resolve(&sec.x0))?.transpose();
            let x1 = read_matrix(&resolve(&sec.x1))?.transpose();
            let u0 = read_matrix(&resolve(&sec.u0))?.transpose();
            let w0 = read_matrix(&resolve(&sec.w0))?.transpose();
            Some(DataRecord::new(x0, x1, u0, w0).map_err(CliError::from)?)
        }
        None => None,
    };

    let noise = match &cfg.noise {
        NoiseSection::Gaussian { sigma } => {
            let s = to_dmatrix(sigma, "noise.sigma")?;
            GaussianModel::new(s.clone()).map_err(CliError::from)?;
            LoadedNoise::Gaussian(s)
        }
        NoiseSection::DrGaussian {
            samples_path,
            beta,
            lb,
        } => {
            let samples = read_matrix(&resolve(samples_path))?;
            let ambiguity =
                AmbiguousGaussian::from_samples(&samples, *beta, *lb).map_err(CliError::from)?;
            LoadedNoise::DrGaussian { ambiguity, samples }
        }
        NoiseSection::Empirical { samples_path } => {
            let samples = read_matrix(&resolve(samples_path))?;
            LoadedNoise::Empirical(EmpiricalNoise::new(samples).map_err(CliError::from)?)
        }
    };

    let allocation = match &cfg.allocation {
        AllocationSection::Unset => {
            RiskAllocation::uniform(cfg.epsilon, safe_set.num_rows()).map_err(CliError::from)?
        }
        AllocationSection::Named(name) if name == "uniform" => {
            RiskAllocation::uniform(cfg.epsilon, safe_set.num_rows()).map_err(CliError::from)?
        }
        AllocationSection::Named(other) => {
            return Err(CliError::input(format!(
                "unknown allocation '{other}' (expected \"uniform\" or an array of per-row risks)"
            )))
        }
        AllocationSection::Explicit(eps) => {
            if eps.len() != safe_set.num_rows() {
                return Err(CliError::input(format!(
                    "allocation has {} entries for {} safe-set rows",
                    eps.len(),
                    safe_set.num_rows()
                )));
            }
            RiskAllocation::new(cfg.epsilon, eps.clone()).map_err(CliError::from)?
        }
    };

    let solver = match tol {
        Some(t) => SolverConfig::with_tol(t),
        None => SolverConfig::default(),
    };
    if cfg.gk_l1_weight < 0.0 {
        return Err(CliError::input("gk_l1_weight must be nonnegative"));
    }
    let options = SynthesisOptions {
        objective: match cfg.objective {
            ObjectiveSection::Feasibility => SynthesisObjective::Feasibility,
            ObjectiveSection::MinPSum => SynthesisObjective::MinCertificateSum,
            ObjectiveSection::MinLambda => SynthesisObjective::MinLambda,
        },
        quantile: match cfg.quantile {
            QuantileSection::Paper => QuantileRule::DistributionFree,
            QuantileSection::Gaussian => QuantileRule::Gaussian,
        },
        solver,
        gk_l1_weight: cfg.gk_l1_weight,
    };

    let x0 = match &cfg.x0 {
        Some(v) => {
            if v.len() != safe_set.dim() {
                return Err(CliError::input(format!(
                    "x0 has {} entries for state dimension {}",
                    v.len(),
                    safe_set.dim()
                )));
            }
            DVector::from_column_slice(v)
        }
        None => DVector::zeros(safe_set.dim()),
    };

    Ok(Problem {
        system,
        data,
        safe_set,
        noise,
        lambda: cfg.lambda,
        epsilon: cfg.epsilon,
        allocation,
        options,
        seed: cfg.seed,
        x0,
        config_hash: format!("{:016x}", fnv1a(&raw)),
    })
}
