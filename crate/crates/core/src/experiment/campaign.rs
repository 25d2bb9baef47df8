use crate::closedloop::{run_episode, ClosedLoopError, ConstraintKind, Trajectory};
use crate::tightening::prs_ellipsoid;

use super::Design;

/// Row count quoted for the case study in the original experiment.
pub const REFERENCE_CONSTRAINT_ROWS: usize = 16767;
/// Decision-variable count quoted for the case study.
pub const REFERENCE_VARIABLES: usize = 488;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintStats {
    pub name: String,
    pub kind: ConstraintKind,
    pub target: f64,
    /// Episodes violating the constraint at step `k`.
    pub counts: Vec<usize>,
    pub rates: Vec<f64>,
    /// Episodes violating the constraint at least once.
    pub episodes_violated: usize,
}

impl ConstraintStats {
    /// `min_k (1 − rate_k)`.
    pub fn satisfaction(&self) -> f64 {
        self.rates.iter().map(|r| 1.0 - r).fold(1.0, f64::min)
    }

    pub fn episode_satisfaction(&self, episodes: usize) -> f64 {
        1.0 - self.episodes_violated as f64 / episodes as f64
    }

    /// `target − 3 sqrt(target (1 − target) / M)`.
    pub fn binomial_floor(&self, episodes: usize) -> f64 {
        self.target - 3.0 * (self.target * (1.0 - self.target) / episodes as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSize {
    pub state_nodes: usize,
    pub input_nodes: usize,
    /// Stacked `z` and `v` nodes.
    pub variables: usize,
    pub eq_rows: usize,
    pub in_rows: usize,
    /// Scalar rows of one QP.
    pub rows_per_qp: usize,
    /// `rows_per_qp × T`: one QP per step.
    pub rows_per_episode: usize,
}

impl ProblemSize {
    /// Variables with the reset bit counted.
    pub fn variables_with_xi(&self) -> usize {
        self.variables + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingStats {
    pub solves: usize,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
    pub mean_episode: f64,
    pub mean_qp_per_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McStats {
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
    pub constraints: Vec<ConstraintStats>,
    pub size: ProblemSize,
    pub timing: TimingStats,
    /// Fraction of steps that kept the predicted nominal state.
    pub xi_one_fraction: f64,
    /// `(p, coverage_k)`: fraction of episodes with `e(k) ∈ R^p`, `k = 0..T`.
    pub prs_coverage: Vec<(f64, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub trajectories: Vec<Trajectory>,
    pub stats: McStats,
}

fn run_one(design: &Design, seed: u64, episode: u64) -> Result<Trajectory, ClosedLoopError> {
    let c = &design.config;
    run_episode(&design.controller, &design.monitored, &c.x0, c.steps, seed, episode)
}

fn run_sequential(design: &Design, episodes: usize, seed: u64) -> Vec<Result<Trajectory, ClosedLoopError>> {
    (0..episodes as u64).map(|e| run_one(design, seed, e)).collect()
}

#[cfg(feature = "parallel")]
fn run_all(design: &Design, episodes: usize, seed: u64, workers: usize) -> Vec<Result<Trajectory, ClosedLoopError>> {
    use rayon::prelude::*;

    if workers == 1 {
        return run_sequential(design, episodes, seed);
    }
    let run = || {
        (0..episodes as u64)
            .into_par_iter()
            .map(|e| run_one(design, seed, e))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_all(design: &Design, episodes: usize, seed: u64, _workers: usize) -> Vec<Result<Trajectory, ClosedLoopError>> {
    run_sequential(design, episodes, seed)
}

/// Runs `episodes` independent episodes on `workers` threads (`0`: all
/// cores). Results are identical for any worker count.
pub fn run_monte_carlo(
    design: &Design,
    episodes: usize,
    seed: u64,
    workers: usize,
) -> Result<Campaign, ClosedLoopError> {
    let trajectories = run_all(design, episodes, seed, workers)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let stats = aggregate(design, &trajectories, seed);
    Ok(Campaign { trajectories, stats })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub(super) fn problem_size(design: &Design) -> ProblemSize {
    let bmpc = design.controller.bmpc();
    let rows_per_qp = bmpc.num_eq_rows() + bmpc.num_in_rows();
    ProblemSize {
        state_nodes: bmpc.tree().state_node_count(),
        input_nodes: bmpc.tree().input_node_count(),
        variables: bmpc.num_vars(),
        eq_rows: bmpc.num_eq_rows(),
        in_rows: bmpc.num_in_rows(),
        rows_per_qp,
        rows_per_episode: rows_per_qp * design.config.steps,
    }
}

fn aggregate(design: &Design, trajectories: &[Trajectory], seed: u64) -> McStats {
    let m = trajectories.len();
    let steps = design.config.steps;
    let constraints = design
        .monitored
        .iter()
        .enumerate()
        .map(|(c, mc)| {
            let len = match mc.kind {
                ConstraintKind::State => steps + 1,
                ConstraintKind::Input => steps,
            };
            let mut counts = vec![0usize; len];
            let mut episodes_violated = 0;
            for t in trajectories {
                let flags = &t.violations[c];
                for (k, &v) in flags.iter().enumerate() {
                    counts[k] += v as usize;
                }
                episodes_violated += flags.iter().any(|&v| v) as usize;
            }
            let rates = counts
                .iter()
                .map(|&n| if m == 0 { 0.0 } else { n as f64 / m as f64 })
                .collect();
            ConstraintStats {
                name: mc.name.clone(),
                kind: mc.kind,
                target: mc.target,
                counts,
                rates,
                episodes_violated,
            }
        })
        .collect();

    let mut times: Vec<f64> = trajectories
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| s.solve_seconds))
        .collect();
    let total: f64 = times.iter().sum();
    times.sort_by(f64::total_cmp);
    let n_steps = times.len().max(1) as f64;
    let qp_total: u32 = trajectories
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| s.qp_solves))
        .sum();
    let timing = TimingStats {
        solves: times.len(),
        p50: percentile(&times, 0.5),
        p90: percentile(&times, 0.9),
        p99: percentile(&times, 0.99),
        max: times.last().copied().unwrap_or(0.0),
        mean_episode: if m == 0 { 0.0 } else { total / m as f64 },
        mean_qp_per_step: qp_total as f64 / n_steps,
    };
    let xi_one = trajectories.iter().flat_map(|t| &t.steps).filter(|s| s.xi == 1).count();

    let mut levels: Vec<f64> = design.monitored.iter().map(|c| c.target).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let prs_coverage = levels
        .into_iter()
        .filter_map(|p| {
            let ell = prs_ellipsoid(&design.error_model, p).ok()?;
            let cov = (0..steps)
                .map(|k| {
                    let inside = trajectories.iter().filter(|t| ell.contains(&t.steps[k].e)).count();
                    if m == 0 {
                        1.0
                    } else {
                        inside as f64 / m as f64
                    }
                })
                .collect();
            Some((p, cov))
        })
        .collect();

    McStats {
        episodes: m,
        steps,
        seed,
        constraints,
        size: problem_size(design),
        timing,
        xi_one_fraction: xi_one as f64 / n_steps,
        prs_coverage,
    }
}
