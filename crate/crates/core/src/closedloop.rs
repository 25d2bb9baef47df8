//! Closed-loop simulation of the true system under the branch-MPC controller.
//!
//! Per time step the controller solves the branch MPC, applies
//! `u = v₀¹ + K (x − z₀¹)`, and after the next measurement reconstructs the
//! disturbance, splits it with the conditional sampler and moves its nominal
//! prediction to the depth-one node of the drawn component.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::bmpc::{shift_candidate, solve_bmpc_with, BmpcConfig, BmpcError, BmpcSolution, TreePlan};
use crate::mixture::GaussianMixture;
use crate::qp::{Admm, QpBackend};
use crate::rng::{Lane, RandomStream};
use crate::setops::PolytopeH;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClosedLoopError {
    #[error("episode {episode}, step {step}: {source}")]
    SolverFault {
        episode: u64,
        step: usize,
        #[source]
        source: BmpcError,
    },
    #[error("mixture atoms do not match the controller tree")]
    Mismatch,
}

#[derive(Debug, Clone)]
pub struct Controller {
    bmpc: BmpcConfig,
    mixture: GaussianMixture,
    backend: Arc<dyn QpBackend>,
}

/// Per-episode controller memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// `z₁^c(k−1)`, initialized to `x(0)`.
    pub z_prev: DVector<f64>,
    /// Last error state `e(k)`.
    pub e: DVector<f64>,
    pub k: usize,
    warm: Option<TreePlan>,
}

impl ControllerState {
    pub fn new(x0: &DVector<f64>) -> Self {
        Self {
            z_prev: x0.clone(),
            e: DVector::zeros(x0.len()),
            k: 0,
            warm: None,
        }
    }
}

/// What the controller decided at one step.
#[derive(Debug, Clone)]
pub struct Action {
    pub u: DVector<f64>,
    pub e: DVector<f64>,
    pub solution: BmpcSolution,
    pub solve_seconds: f64,
}

/// The controller's view of the disturbance that followed an action.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub w: DVector<f64>,
    /// One-based component index.
    pub j: usize,
    pub w_x: DVector<f64>,
    pub w_e: DVector<f64>,
}

impl Controller {
    pub fn new(bmpc: BmpcConfig, mixture: GaussianMixture) -> Result<Self, ClosedLoopError> {
        Self::with_backend(bmpc, mixture, Arc::new(Admm::default()))
    }

    pub fn with_backend(
        bmpc: BmpcConfig,
        mixture: GaussianMixture,
        backend: Arc<dyn QpBackend>,
    ) -> Result<Self, ClosedLoopError> {
        let p = bmpc.params();
        if p.atoms != mixture.means() || p.weights != mixture.weights() {
            return Err(ClosedLoopError::Mismatch);
        }
        Ok(Self { bmpc, mixture, backend })
    }

    pub fn bmpc(&self) -> &BmpcConfig {
        &self.bmpc
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn backend(&self) -> &Arc<dyn QpBackend> {
        &self.backend
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.bmpc.params().a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.bmpc.params().b
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.bmpc.params().k
    }

    /// Solves the branch MPC at `x_meas` and returns the input to apply.
    pub fn act(&self, state: &mut ControllerState, x_meas: &DVector<f64>) -> Result<Action, BmpcError> {
        let start = Instant::now();
        let solution = solve_bmpc_with(
            &self.bmpc,
            x_meas,
            &state.z_prev,
            state.warm.as_ref(),
            self.backend.as_ref(),
        )?;
        let solve_seconds = start.elapsed().as_secs_f64();
        let e = x_meas - solution.root();
        let u = solution.first_input() + self.k() * &e;
        state.e = e.clone();
        Ok(Action {
            u,
            e,
            solution,
            solve_seconds,
        })
    }

    /// Reconstructs `w(k) = x(k+1) − A x(k) − B u(k)`, splits it, and advances
    /// the nominal prediction to the drawn branch.
    pub fn observe(
        &self,
        state: &mut ControllerState,
        action: &Action,
        x_meas: &DVector<f64>,
        x_next: &DVector<f64>,
        rng: &mut RandomStream,
    ) -> Observation {
        let w = x_next - self.a() * x_meas - self.b() * &action.u;
        let draw = self.mixture.sample_conditional(&w, rng);
        let j = draw.index + 1;
        state.z_prev = action.solution.depth_one(j).clone();
        state.warm = shift_candidate(&action.solution.plan, j, &self.bmpc).ok();
        state.k += 1;
        Observation {
            w,
            j,
            w_x: draw.w_x,
            w_e: draw.w_e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    State,
    Input,
}

/// An original (untightened) constraint whose violations are recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitoredConstraint {
    pub name: String,
    pub kind: ConstraintKind,
    pub set: PolytopeH,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub z: DVector<f64>,
    pub e: DVector<f64>,
    pub v: DVector<f64>,
    pub xi: u8,
    /// Disturbance injected by the simulator.
    pub w: DVector<f64>,
    /// Disturbance reconstructed by the controller.
    pub w_seen: DVector<f64>,
    pub j: usize,
    pub w_x: DVector<f64>,
    pub w_e: DVector<f64>,
    pub qp_solves: u32,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode: u64,
    pub steps: Vec<StepRecord>,
    /// `x(T)`.
    pub x_final: DVector<f64>,
    /// `violations[c][k]`; state constraints are checked at `k = 0..=T`,
    /// input constraints at `k = 0..T`.
    pub violations: Vec<Vec<bool>>,
}

impl Trajectory {
    /// State at `k = 0..=T`.
    pub fn state(&self, k: usize) -> &DVector<f64> {
        if k == self.steps.len() {
            &self.x_final
        } else {
            &self.steps[k].x
        }
    }

    /// Largest `|x − z − e|` along the episode.
    pub fn relation_residual(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| (&s.x - &s.z - &s.e).amax())
            .fold(0.0, f64::max)
    }

    /// Largest `|u − v − K e|` along the episode.
    pub fn interface_residual(&self, k: &DMatrix<f64>) -> f64 {
        self.steps
            .iter()
            .map(|s| (&s.u - &s.v - k * &s.e).amax())
            .fold(0.0, f64::max)
    }

    /// Largest gap between injected and reconstructed disturbances.
    pub fn reconstruction_residual(&self) -> f64 {
        self.steps.iter().map(|s| (&s.w - &s.w_seen).amax()).fold(0.0, f64::max)
    }

    /// Largest `|e(k+1) − A_K e(k) − w_e(k)|` over steps that kept the
    /// predicted nominal state (`ξ(k+1) = 1`).
    pub fn error_recursion_residual(&self, a_k: &DMatrix<f64>) -> f64 {
        self.steps
            .windows(2)
            .filter(|p| p[1].xi == 1)
            .map(|p| (&p[1].e - a_k * &p[0].e - &p[0].w_e).amax())
            .fold(0.0, f64::max)
    }
}

/// Simulates `x(k+1) = A x(k) + B u(k) + w(k)` for `steps` steps from `x0`
/// with disturbances from the controller's mixture. Randomness comes from
/// the `(seed, episode)` substreams only.
pub fn run_episode(
    controller: &Controller,
    monitored: &[MonitoredConstraint],
    x0: &DVector<f64>,
    steps: usize,
    seed: u64,
    episode: u64,
) -> Result<Trajectory, ClosedLoopError> {
    let mut plant_rng = RandomStream::for_episode(seed, episode, Lane::Plant);
    let mut ctrl_rng = RandomStream::for_episode(seed, episode, Lane::Controller);
    let mut state = ControllerState::new(x0);
    let mut x = x0.clone();
    let mut records = Vec::with_capacity(steps);
    for k in 0..steps {
        let action = controller
            .act(&mut state, &x)
            .map_err(|source| ClosedLoopError::SolverFault {
                episode,
                step: k,
                source,
            })?;
        let w = controller.mixture().sample(&mut plant_rng);
        let x_next = controller.a() * &x + controller.b() * &action.u + &w;
        let obs = controller.observe(&mut state, &action, &x, &x_next, &mut ctrl_rng);
        records.push(StepRecord {
            k,
            x: x.clone(),
            z: action.solution.root().clone(),
            v: action.solution.first_input().clone(),
            xi: action.solution.xi,
            u: action.u,
            e: action.e,
            w,
            w_seen: obs.w,
            j: obs.j,
            w_x: obs.w_x,
            w_e: obs.w_e,
            qp_solves: action.solution.qp_solves,
            solve_seconds: action.solve_seconds,
        });
        x = x_next;
    }
    let mut traj = Trajectory {
        episode,
        steps: records,
        x_final: x,
        violations: Vec::new(),
    };
    traj.violations = monitored
        .iter()
        .map(|c| match c.kind {
            ConstraintKind::State => (0..=steps).map(|k| !c.set.contains(traj.state(k))).collect(),
            ConstraintKind::Input => traj.steps.iter().map(|s| !c.set.contains(&s.u)).collect(),
        })
        .collect();
    Ok(traj)
}
