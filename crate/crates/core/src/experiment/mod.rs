//! Experiment plumbing: configuration files, controller synthesis, Monte Carlo
//! campaigns and report files.

mod campaign;
mod check;
mod config;
mod report;

use std::sync::Arc;

use nalgebra::DMatrix;

pub use campaign::{
    run_monte_carlo, Campaign, ConstraintStats, McStats, ProblemSize, TimingStats, REFERENCE_CONSTRAINT_ROWS,
    REFERENCE_VARIABLES,
};
pub use check::{run_checks, CheckResult};
pub use config::{load_config, ConfigError, ExperimentConfig, GainSpec, SolverKind};
pub use report::{fmt_f64, sets_to_toml, write_report, write_trajectories, OutputFormat, ReportFiles, SetsFile};

use crate::bmpc::{BmpcConfig, BmpcParams};
use crate::closedloop::{ConstraintKind, Controller, MonitoredConstraint};
use crate::qp::{Admm, InteriorPoint, QpBackend};
use crate::setops::PolytopeH;
use crate::tightening::{lqr_gain, terminal_set, tighten, ChanceSpec, ErrorModel, TightenedSets, TighteningError};

#[derive(Debug, thiserror::Error)]
pub enum DesignError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible design: {0}")]
    Infeasible(#[from] TighteningError),
}

/// Everything computed offline from a configuration.
#[derive(Debug, Clone)]
pub struct Design {
    pub config: ExperimentConfig,
    pub error_model: ErrorModel,
    pub tightened: TightenedSets,
    pub terminal: PolytopeH,
    pub controller: Controller,
    pub monitored: Vec<MonitoredConstraint>,
}

impl SolverKind {
    pub fn backend(self) -> Arc<dyn QpBackend> {
        match self {
            SolverKind::Admm => Arc::new(Admm::default()),
            SolverKind::InteriorPoint => Arc::new(InteriorPoint::default()),
        }
    }
}

impl ExperimentConfig {
    pub fn gain(&self) -> Result<DMatrix<f64>, DesignError> {
        match &self.gain {
            GainSpec::Matrix(k) => Ok(k.clone()),
            GainSpec::Lqr => {
                let n = self.a.nrows();
                let m = self.b.ncols();
                lqr_gain(&self.a, &self.b, &DMatrix::identity(n, n), &DMatrix::identity(m, m))
                    .map_err(|e| DesignError::Config(format!("LQR gain: {e}")))
            }
        }
    }

    pub fn chance_spec(&self) -> ChanceSpec {
        ChanceSpec {
            states: self.state_constraints.clone(),
            input: self.input_constraint.clone(),
        }
    }

    pub fn monitored(&self) -> Vec<MonitoredConstraint> {
        let states = self.state_constraints.iter().map(|c| MonitoredConstraint {
            name: c.name.clone(),
            kind: ConstraintKind::State,
            set: c.set.clone(),
            target: c.probability,
        });
        let input = std::iter::once(MonitoredConstraint {
            name: self.input_constraint.name.clone(),
            kind: ConstraintKind::Input,
            set: self.input_constraint.set.clone(),
            target: self.input_constraint.probability,
        });
        states.chain(input).collect()
    }

    /// Gain, error model, tightened sets and terminal set, without the
    /// controller.
    pub fn sets(&self) -> Result<(ErrorModel, TightenedSets, PolytopeH), DesignError> {
        let k = self.gain()?;
        let em = ErrorModel::new(
            self.a.clone(),
            self.b.clone(),
            k,
            self.prs_noise.covariance(&self.mixture),
        )?;
        let tightened = tighten(&em, &self.chance_spec())?;
        let terminal = terminal_set(&em, &tightened.z, &tightened.v, self.mixture.means(), self.rpi_max_iter)?;
        Ok((em, tightened, terminal))
    }

    pub fn design(&self) -> Result<Design, DesignError> {
        self.design_with(self.solver.backend())
    }

    pub fn design_with(&self, backend: Arc<dyn QpBackend>) -> Result<Design, DesignError> {
        let (em, tightened, terminal) = self.sets()?;
        let bmpc = BmpcConfig::new(BmpcParams {
            a: self.a.clone(),
            b: self.b.clone(),
            k: em.k().clone(),
            z: tightened.z.clone(),
            v: tightened.v.clone(),
            z_f: terminal.clone(),
            atoms: self.mixture.means().to_vec(),
            weights: self.mixture.weights().to_vec(),
            horizon: self.horizon,
            q: self.q.clone(),
            r: self.r.clone(),
            p: self.p.clone(),
            epsilon: self.epsilon,
        })
        .map_err(|e| DesignError::Config(e.to_string()))?
        .with_tol(self.solver_tol);
        let controller = Controller::with_backend(bmpc, self.mixture.clone(), backend)
            .map_err(|e| DesignError::Config(e.to_string()))?;
        Ok(Design {
            config: self.clone(),
            error_model: em,
            tightened,
            terminal,
            controller,
            monitored: self.monitored(),
        })
    }
}
