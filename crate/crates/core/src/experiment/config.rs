//! TOML experiment configuration.
//!
//! ```toml
//! [system]
//! A = [[1.0]]
//! B = [[1.0]]
//! K = [[-1.0]]          # or "lqr" (the default)
//! x0 = [0.0]
//!
//! [mixture]
//! means = [[-1.5], [0.0], [1.5]]
//! weights = [0.2, 0.3, 0.5]
//! cov = [[0.25]]
//!
//! [[state_constraints]]
//! name = "inner"
//! lower = [-2.0]        # or A = [[...]] and b = [...]
//! upper = [2.0]
//! probability = 0.6
//!
//! [input_constraint]
//! name = "input"
//! lower = [-2.0]
//! upper = [2.0]
//! probability = 0.65
//!
//! [horizons]
//! mpc = 5
//! episode = 10
//! ```
//!
//! Optional sections: `[cost]` (`Q`, `R`, `P`, `epsilon`), `[tightening]`
//! (`prs_noise`, `max_iter`), `[solver]` (`backend`, `tol`), `[monte_carlo]`
//! (`episodes`, `seed`, `workers`) and `[output]` (`dir`).

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::mixture::GaussianMixture;
use crate::setops::{PolytopeH, DEFAULT_MAX_ITER};
use crate::tightening::{ChanceConstraint, PrsNoise};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    mixture: RawMixture,
    state_constraints: Vec<RawConstraint>,
    input_constraint: RawConstraint,
    horizons: RawHorizons,
    #[serde(default)]
    cost: RawCost,
    #[serde(default)]
    tightening: RawTightening,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    monte_carlo: RawMonteCarlo,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "K", default)]
    k: Option<RawGain>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawGain {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMixture {
    means: Vec<Vec<f64>>,
    #[serde(default)]
    weights: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    name: Option<String>,
    #[serde(rename = "A")]
    a: Option<Vec<Vec<f64>>>,
    b: Option<Vec<f64>>,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    probability: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHorizons {
    mpc: usize,
    episode: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    #[serde(rename = "Q")]
    q: Option<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    r: Option<Vec<Vec<f64>>>,
    #[serde(rename = "P")]
    p: Option<Vec<Vec<f64>>>,
    epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTightening {
    prs_noise: Option<PrsNoise>,
    max_iter: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    backend: Option<SolverKind>,
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMonteCarlo {
    episodes: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

/// QP backend used by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    #[default]
    Admm,
    InteriorPoint,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Admm => "admm",
            SolverKind::InteriorPoint => "interior-point",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GainSpec {
    Lqr,
    Matrix(DMatrix<f64>),
}

/// A fully validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub gain: GainSpec,
    pub x0: DVector<f64>,
    pub mixture: GaussianMixture,
    pub state_constraints: Vec<ChanceConstraint>,
    pub input_constraint: ChanceConstraint,
    pub horizon: usize,
    pub steps: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub epsilon: f64,
    pub prs_noise: PrsNoise,
    pub rpi_max_iter: usize,
    pub solver: SolverKind,
    pub solver_tol: f64,
    pub episodes: usize,
    pub seed: u64,
    /// `0` means one worker per available core.
    pub workers: usize,
    pub output_dir: PathBuf,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(invalid(format!("{field}: matrix must be nonempty")));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(invalid(format!("{field}: rows have different lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{field}: entries must be finite")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn square(field: &str, rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>, ConfigError> {
    let m = matrix(field, rows)?;
    if m.shape() != (dim, dim) {
        return Err(invalid(format!(
            "{field}: expected {dim}x{dim}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m)
}

fn constraint(field: &str, raw: RawConstraint, dim: usize) -> Result<ChanceConstraint, ConfigError> {
    let name = raw.name.unwrap_or_else(|| field.to_string());
    let set = match (raw.a, raw.b, raw.lower, raw.upper) {
        (Some(a), Some(b), None, None) => {
            let a = matrix(&format!("{field}.A"), &a)?;
            if a.ncols() != dim || a.nrows() != b.len() {
                return Err(invalid(format!(
                    "{field}: A is {}x{} and b has {} entries, expected {dim} columns",
                    a.nrows(),
                    a.ncols(),
                    b.len()
                )));
            }
            PolytopeH::new(a, DVector::from_vec(b)).map_err(|e| invalid(format!("{field}: {e}")))?
        }
        (None, None, Some(lo), Some(hi)) => {
            if lo.len() != dim || hi.len() != dim {
                return Err(invalid(format!("{field}: lower/upper must have {dim} entries")));
            }
            if lo.iter().zip(&hi).any(|(l, h)| l.is_nan() || h.is_nan() || l >= h) {
                return Err(invalid(format!("{field}: lower must be below upper")));
            }
            PolytopeH::axis_box(&lo, &hi)
        }
        _ => return Err(invalid(format!("{field}: give either A and b, or lower and upper"))),
    };
    ChanceConstraint::new(name, set, raw.probability).map_err(|e| invalid(format!("{field}: {e}")))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let a = matrix("system.A", &raw.system.a)?;
        let n = a.nrows();
        if !a.is_square() {
            return Err(invalid("system.A must be square"));
        }
        let b = matrix("system.B", &raw.system.b)?;
        if b.nrows() != n {
            return Err(invalid(format!("system.B must have {n} rows")));
        }
        let m = b.ncols();
        let gain = match raw.system.k {
            None => GainSpec::Lqr,
            Some(RawGain::Named(s)) if s == "lqr" => GainSpec::Lqr,
            Some(RawGain::Named(s)) => {
                return Err(invalid(format!(
                    "system.K: unknown gain \"{s}\" (use \"lqr\" or a matrix)"
                )))
            }
            Some(RawGain::Matrix(rows)) => {
                let k = matrix("system.K", &rows)?;
                if k.shape() != (m, n) {
                    return Err(invalid(format!("system.K: expected {m}x{n}")));
                }
                GainSpec::Matrix(k)
            }
        };
        let x0 = match raw.system.x0 {
            None => DVector::zeros(n),
            Some(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => DVector::from_vec(v),
            Some(_) => return Err(invalid(format!("system.x0 must have {n} finite entries"))),
        };

        if raw.mixture.weights.is_empty() {
            return Err(invalid("mixture.weights: weights must sum to 1 (no weights given)"));
        }
        let means = raw.mixture.means.into_iter().map(DVector::from_vec).collect::<Vec<_>>();
        let cov = square("mixture.cov", &raw.mixture.cov, n)?;
        let mixture =
            GaussianMixture::new(means, raw.mixture.weights, cov).map_err(|e| invalid(format!("mixture: {e}")))?;

        if raw.state_constraints.is_empty() {
            return Err(invalid("state_constraints: at least one is required"));
        }
        let state_constraints = raw
            .state_constraints
            .into_iter()
            .enumerate()
            .map(|(i, c)| constraint(&format!("state_constraints[{i}]"), c, n))
            .collect::<Result<Vec<_>, _>>()?;
        let input_constraint = constraint("input_constraint", raw.input_constraint, m)?;

        if raw.horizons.mpc == 0 || raw.horizons.episode == 0 {
            return Err(invalid("horizons: mpc and episode must be positive"));
        }

        let eye = |d| DMatrix::identity(d, d);
        let q = raw.cost.q.map_or(Ok(eye(n)), |r| square("cost.Q", &r, n))?;
        let r = raw.cost.r.map_or(Ok(eye(m)), |r| square("cost.R", &r, m))?;
        let p = raw.cost.p.map_or(Ok(eye(n)), |r| square("cost.P", &r, n))?;
        let epsilon = raw.cost.epsilon.unwrap_or(1e3);
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(invalid("cost.epsilon must be finite and nonnegative"));
        }
        let solver_tol = raw.solver.tol.unwrap_or(1e-8);
        if !(solver_tol > 0.0 && solver_tol < 1e-2) {
            return Err(invalid("solver.tol must be in (0, 0.01)"));
        }

        Ok(Self {
            a,
            b,
            gain,
            x0,
            mixture,
            state_constraints,
            input_constraint,
            horizon: raw.horizons.mpc,
            steps: raw.horizons.episode,
            q,
            r,
            p,
            epsilon,
            prs_noise: raw.tightening.prs_noise.unwrap_or_default(),
            rpi_max_iter: raw.tightening.max_iter.unwrap_or(DEFAULT_MAX_ITER),
            solver: raw.solver.backend.unwrap_or_default(),
            solver_tol,
            episodes: raw.monte_carlo.episodes.unwrap_or(1000),
            seed: raw.monte_carlo.seed.unwrap_or(0),
            workers: raw.monte_carlo.workers.unwrap_or(0),
            output_dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_toml(&text)
}
