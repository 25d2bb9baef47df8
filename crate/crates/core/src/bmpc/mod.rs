//! Branch MPC over a scenario tree of discrete disturbances.
//!
//! Each depth-`N` path of the tree is one realization of the discrete
//! disturbance sequence. The nominal state and input at every node are
//! decision variables; nodes sharing a history share their decisions. The
//! binary reset `ξ` chooses whether the root is the fresh measurement (`ξ = 0`)
//! or the previously predicted nominal state (`ξ = 1`) and is handled by
//! solving one convex QP per value.

mod tree;

use nalgebra::{DMatrix, DVector};

use crate::qp::{Admm, CscMatrix, QpBackend, QpError, QpProblem, QpStatus, SolveOptions};
use crate::setops::PolytopeH;

pub use tree::{child_index, BranchTree, MAX_STATE_NODES};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BmpcError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("both ξ = 0 and ξ = 1 problems are infeasible")]
    BothInfeasible,
    #[error("QP solver fault (ξ=0: {xi0:?}, ξ=1: {xi1:?})")]
    SolverFault { xi0: QpStatus, xi1: QpStatus },
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Everything the branch MPC needs; see [`BmpcConfig::new`].
#[derive(Debug, Clone)]
pub struct BmpcParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Terminal feedback used by the shifted candidate.
    pub k: DMatrix<f64>,
    pub z: PolytopeH,
    pub v: PolytopeH,
    pub z_f: PolytopeH,
    pub atoms: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub epsilon: f64,
}

/// Validated parameters plus the parts of the QP that do not depend on the
/// initial state.
#[derive(Debug, Clone)]
pub struct BmpcConfig {
    params: BmpcParams,
    tree: BranchTree,
    h: CscMatrix,
    a_eq: CscMatrix,
    b_eq: DVector<f64>,
    a_in: CscMatrix,
    b_in: DVector<f64>,
    tol: f64,
}

fn check_psd(name: &str, m: &DMatrix<f64>, dim: usize) -> Result<(), BmpcError> {
    if m.shape() != (dim, dim) {
        return Err(BmpcError::Dimension(format!(
            "{name} is {:?}, expected {dim}x{dim}",
            m.shape()
        )));
    }
    if (m - m.transpose()).amax() > 1e-10 * m.amax().max(1.0) {
        return Err(BmpcError::Dimension(format!("{name} is not symmetric")));
    }
    let eig = m.clone().symmetric_eigenvalues();
    if eig.iter().any(|&l| l < -1e-10 * m.amax().max(1.0)) {
        return Err(BmpcError::Dimension(format!("{name} is not positive semidefinite")));
    }
    Ok(())
}

impl BmpcConfig {
    pub fn new(params: BmpcParams) -> Result<Self, BmpcError> {
        let n = params.a.nrows();
        let m = params.b.ncols();
        let p = &params;
        if !p.a.is_square() || p.b.nrows() != n || p.k.shape() != (m, n) {
            return Err(BmpcError::Dimension(format!(
                "A {:?}, B {:?}, K {:?}",
                p.a.shape(),
                p.b.shape(),
                p.k.shape()
            )));
        }
        if p.z.dim() != n || p.z_f.dim() != n || p.v.dim() != m {
            return Err(BmpcError::Dimension(
                "constraint sets do not match the system dimensions".into(),
            ));
        }
        if p.atoms.len() != p.weights.len() || p.atoms.iter().any(|mu| mu.len() != n) {
            return Err(BmpcError::Dimension(
                "atoms and weights must pair up with state-sized atoms".into(),
            ));
        }
        check_psd("Q", &p.q, n)?;
        check_psd("R", &p.r, m)?;
        check_psd("P", &p.p, n)?;
        if !(p.epsilon >= 0.0 && p.epsilon.is_finite()) {
            return Err(BmpcError::Dimension(format!(
                "epsilon {} must be finite and nonnegative",
                p.epsilon
            )));
        }
        let tree = BranchTree::new(p.weights.clone(), p.horizon)?;
        let mut cfg = Self {
            params,
            tree,
            h: CscMatrix::zeros(0, 0),
            a_eq: CscMatrix::zeros(0, 0),
            b_eq: DVector::zeros(0),
            a_in: CscMatrix::zeros(0, 0),
            b_in: DVector::zeros(0),
            tol: 1e-8,
        };
        cfg.build();
        Ok(cfg)
    }

    pub fn params(&self) -> &BmpcParams {
        &self.params
    }

    pub fn tree(&self) -> &BranchTree {
        &self.tree
    }

    pub fn state_dim(&self) -> usize {
        self.params.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.params.b.ncols()
    }

    /// Feasibility tolerance passed to the QP backend.
    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.tree.state_node_count() * self.state_dim() + self.tree.input_node_count() * self.input_dim()
    }

    pub fn num_eq_rows(&self) -> usize {
        self.b_eq.len()
    }

    pub fn num_in_rows(&self) -> usize {
        self.b_in.len()
    }

    fn z_col(&self, s: usize) -> usize {
        s * self.state_dim()
    }

    fn v_col(&self, s: usize) -> usize {
        self.tree.state_node_count() * self.state_dim() + s * self.input_dim()
    }

    fn build(&mut self) {
        let (n, m) = (self.state_dim(), self.input_dim());
        let nv = self.num_vars();
        let tree = &self.tree;
        let p = &self.params;
        let horizon = tree.horizon();

        let mut h = Vec::new();
        let mut push_block = |col: usize, w: &DMatrix<f64>, scale: f64| {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    let val = 2.0 * scale * w[(r, c)];
                    if val != 0.0 {
                        h.push((col + r, col + c, val));
                    }
                }
            }
        };
        for s in 0..tree.state_node_count() {
            let weight = if s < tree.input_node_count() { &p.q } else { &p.p };
            push_block(self.z_col(s), weight, tree.path_probability(s));
        }
        for s in 0..tree.input_node_count() {
            push_block(self.v_col(s), &p.r, tree.path_probability(s));
        }
        let h = CscMatrix::from_triplets(nv, nv, &h);

        let mut eq = Vec::new();
        let mut b_eq = Vec::new();
        for r in 0..n {
            eq.push((r, self.z_col(0) + r, 1.0));
            b_eq.push(0.0);
        }
        for s in 0..tree.input_node_count() {
            for d in 1..=tree.branching() {
                let c = tree.child(s, d);
                let row0 = b_eq.len();
                for r in 0..n {
                    eq.push((row0 + r, self.z_col(c) + r, 1.0));
                    for k in 0..n {
                        if p.a[(r, k)] != 0.0 {
                            eq.push((row0 + r, self.z_col(s) + k, -p.a[(r, k)]));
                        }
                    }
                    for k in 0..m {
                        if p.b[(r, k)] != 0.0 {
                            eq.push((row0 + r, self.v_col(s) + k, -p.b[(r, k)]));
                        }
                    }
                    b_eq.push(p.atoms[d - 1][r]);
                }
            }
        }
        self.a_eq = CscMatrix::from_triplets(b_eq.len(), nv, &eq);
        self.b_eq = DVector::from_vec(b_eq);

        let mut ineq = Vec::new();
        let mut b_in = Vec::new();
        let mut add_set = |set: &PolytopeH, col: usize| {
            for i in 0..set.num_rows() {
                let row = b_in.len();
                for k in 0..set.dim() {
                    let a = set.a()[(i, k)];
                    if a != 0.0 {
                        ineq.push((row, col + k, a));
                    }
                }
                b_in.push(set.b()[i]);
            }
        };
        for s in 0..tree.depth_offset(horizon) {
            add_set(&p.z, self.z_col(s));
        }
        for s in 0..tree.input_node_count() {
            add_set(&p.v, self.v_col(s));
        }
        for s in tree.leaves() {
            add_set(&p.z_f, self.z_col(s));
        }
        self.a_in = CscMatrix::from_triplets(b_in.len(), nv, &ineq);
        self.b_in = DVector::from_vec(b_in);
        self.h = h;
    }

    /// Splits a stacked decision vector into state and input nodes.
    pub fn unstack(&self, x: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let (n, m) = (self.state_dim(), self.input_dim());
        let z = (0..self.tree.state_node_count())
            .map(|s| x.rows(self.z_col(s), n).into_owned())
            .collect();
        let v = (0..self.tree.input_node_count())
            .map(|s| x.rows(self.v_col(s), m).into_owned())
            .collect();
        (z, v)
    }

    pub fn stack(&self, z: &[DVector<f64>], v: &[DVector<f64>]) -> DVector<f64> {
        let mut x = DVector::zeros(self.num_vars());
        for (s, zs) in z.iter().enumerate() {
            x.rows_mut(self.z_col(s), self.state_dim()).copy_from(zs);
        }
        for (s, vs) in v.iter().enumerate() {
            x.rows_mut(self.v_col(s), self.input_dim()).copy_from(vs);
        }
        x
    }

    /// Path-probability-weighted quadratic cost of a plan, without `ε ξ²`.
    pub fn plan_cost(&self, z: &[DVector<f64>], v: &[DVector<f64>]) -> f64 {
        let p = &self.params;
        let quad = |w: &DMatrix<f64>, x: &DVector<f64>| (x.transpose() * w * x)[(0, 0)];
        let mut j = 0.0;
        for (s, zs) in z.iter().enumerate() {
            let w = if s < self.tree.input_node_count() { &p.q } else { &p.p };
            j += self.tree.path_probability(s) * quad(w, zs);
        }
        for (s, vs) in v.iter().enumerate() {
            j += self.tree.path_probability(s) * quad(&p.r, vs);
        }
        j
    }
}

/// The QP for a fixed `ξ`: the root is `x_meas` when `xi = 0` and `z_prev`
/// when `xi = 1`.
pub fn assemble(
    cfg: &BmpcConfig,
    x_meas: &DVector<f64>,
    z_prev: &DVector<f64>,
    xi: u8,
) -> Result<QpProblem, BmpcError> {
    let n = cfg.state_dim();
    if x_meas.len() != n || z_prev.len() != n {
        return Err(BmpcError::Dimension(format!(
            "initial states have lengths {} and {}, expected {n}",
            x_meas.len(),
            z_prev.len()
        )));
    }
    if xi > 1 {
        return Err(BmpcError::Index(format!("ξ = {xi}")));
    }
    let root = if xi == 0 { x_meas } else { z_prev };
    let mut b_eq = cfg.b_eq.clone();
    b_eq.rows_mut(0, n).copy_from(root);
    Ok(QpProblem::new(
        cfg.h.clone(),
        DVector::zeros(cfg.num_vars()),
        cfg.a_eq.clone(),
        b_eq,
        cfg.a_in.clone(),
        cfg.b_in.clone(),
    )?)
}

/// A (not necessarily optimal) tree plan.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePlan {
    pub z_nodes: Vec<DVector<f64>>,
    pub v_nodes: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BmpcSolution {
    pub xi: u8,
    pub plan: TreePlan,
    /// `J + ε ξ²`.
    pub cost: f64,
    pub status: QpStatus,
    /// Number of QPs actually solved (0 to 2).
    pub qp_solves: u32,
    pub qp_iterations: usize,
}

impl BmpcSolution {
    /// `z₀¹`
    pub fn root(&self) -> &DVector<f64> {
        &self.plan.z_nodes[0]
    }

    /// `v₀¹`
    pub fn first_input(&self) -> &DVector<f64> {
        &self.plan.v_nodes[0]
    }

    /// `z₁^d`, `d` one-based.
    pub fn depth_one(&self, d: usize) -> &DVector<f64> {
        &self.plan.z_nodes[d]
    }
}

/// Largest violation of the `ξ` problem's constraints by `plan`.
pub fn max_violation(
    cfg: &BmpcConfig,
    plan: &TreePlan,
    x_meas: &DVector<f64>,
    z_prev: &DVector<f64>,
    xi: u8,
) -> Result<f64, BmpcError> {
    let qp = assemble(cfg, x_meas, z_prev, xi)?;
    Ok(qp.max_violation(&cfg.stack(&plan.z_nodes, &plan.v_nodes)))
}

struct Attempt {
    status: QpStatus,
    x: Option<DVector<f64>>,
    objective: f64,
    iterations: usize,
    solved: bool,
}

fn attempt(
    cfg: &BmpcConfig,
    backend: &dyn QpBackend,
    root_ok: bool,
    x_meas: &DVector<f64>,
    z_prev: &DVector<f64>,
    xi: u8,
    warm: Option<&DVector<f64>>,
) -> Result<Attempt, BmpcError> {
    if !root_ok {
        return Ok(Attempt {
            status: QpStatus::Infeasible,
            x: None,
            objective: f64::INFINITY,
            iterations: 0,
            solved: false,
        });
    }
    let qp = assemble(cfg, x_meas, z_prev, xi)?;
    let opts = SolveOptions {
        tol: cfg.tol,
        warm_start: warm.cloned(),
        ..SolveOptions::default()
    };
    let sol = backend.solve(&qp, &opts);
    let ok = sol.is_optimal();
    Ok(Attempt {
        status: sol.status,
        objective: if ok { sol.objective } else { f64::INFINITY },
        x: ok.then_some(sol.x),
        iterations: sol.iterations,
        solved: true,
    })
}

/// Solves the branch MPC with the default backend.
pub fn solve_bmpc(
    cfg: &BmpcConfig,
    x_meas: &DVector<f64>,
    z_prev: &DVector<f64>,
    warm: Option<&TreePlan>,
) -> Result<BmpcSolution, BmpcError> {
    solve_bmpc_with(cfg, x_meas, z_prev, warm, &Admm::default())
}

/// Solves the `ξ = 0` and `ξ = 1` QPs and keeps the cheaper feasible one,
/// preferring `ξ = 0` on ties.
///
/// A root outside `Z` makes its QP infeasible without a solve. When the
/// `ξ = 0` optimum costs at most `ε` the `ξ = 1` QP cannot win and is skipped.
pub fn solve_bmpc_with(
    cfg: &BmpcConfig,
    x_meas: &DVector<f64>,
    z_prev: &DVector<f64>,
    warm: Option<&TreePlan>,
    backend: &dyn QpBackend,
) -> Result<BmpcSolution, BmpcError> {
    let warm = warm.map(|w| cfg.stack(&w.z_nodes, &w.v_nodes));
    let eps = cfg.params.epsilon;
    let z = &cfg.params.z;

    let a0 = attempt(cfg, backend, z.contains(x_meas), x_meas, z_prev, 0, warm.as_ref())?;
    let a1 = if a0.x.is_some() && a0.objective <= eps {
        None
    } else {
        Some(attempt(
            cfg,
            backend,
            z.contains(z_prev),
            x_meas,
            z_prev,
            1,
            warm.as_ref(),
        )?)
    };

    let cost1 = a1.as_ref().map_or(f64::INFINITY, |a| a.objective + eps);
    let pick_one = a1.as_ref().is_some_and(|a| a.x.is_some()) && cost1 < a0.objective;
    let iterations = a0.iterations + a1.as_ref().map_or(0, |a| a.iterations);
    let qp_solves = a0.solved as u32 + a1.as_ref().map_or(0, |a| a.solved as u32);
    let (xi, chosen, cost) = if pick_one {
        (1, a1.unwrap(), cost1)
    } else if a0.x.is_some() {
        let cost = a0.objective;
        (0, a0, cost)
    } else {
        let s1 = a1.map_or(QpStatus::Infeasible, |a| a.status);
        return Err(if a0.status == QpStatus::Infeasible && s1 == QpStatus::Infeasible {
            BmpcError::BothInfeasible
        } else {
            BmpcError::SolverFault {
                xi0: a0.status,
                xi1: s1,
            }
        });
    };
    let (mut z_nodes, v_nodes) = cfg.unstack(&chosen.x.expect("feasible attempt"));
    // the root is pinned by an equality row; make it exact
    z_nodes[0] = if xi == 0 { x_meas.clone() } else { z_prev.clone() };
    Ok(BmpcSolution {
        xi,
        plan: TreePlan { z_nodes, v_nodes },
        cost,
        status: QpStatus::Optimal,
        qp_solves,
        qp_iterations: iterations,
    })
}

/// Re-roots `prev` at depth-one node `realized_d` (one-based) and closes the
/// horizon with the terminal feedback `v = K z`. The result is feasible for
/// the next `ξ = 1` problem whenever `prev` was feasible and `Z_F` is
/// robustly invariant.
pub fn shift_candidate(prev: &TreePlan, realized_d: usize, cfg: &BmpcConfig) -> Result<TreePlan, BmpcError> {
    let tree = cfg.tree();
    let l = tree.branching();
    let horizon = tree.horizon();
    if realized_d == 0 || realized_d > l {
        return Err(BmpcError::Index(format!(
            "realized branch {realized_d} outside 1..={l}"
        )));
    }
    if prev.z_nodes.len() != tree.state_node_count() || prev.v_nodes.len() != tree.input_node_count() {
        return Err(BmpcError::Dimension("plan does not match the tree".into()));
    }
    let p = cfg.params();
    let mut z_nodes = Vec::with_capacity(tree.state_node_count());
    let mut v_nodes = Vec::with_capacity(tree.input_node_count());
    for i in 0..horizon {
        let base = (realized_d - 1) * tree.width(i);
        for j in 1..=tree.width(i) {
            z_nodes.push(prev.z_nodes[tree.node(i + 1, base + j)].clone());
        }
    }
    for i in 0..horizon - 1 {
        let base = (realized_d - 1) * tree.width(i);
        for j in 1..=tree.width(i) {
            v_nodes.push(prev.v_nodes[tree.node(i + 1, base + j)].clone());
        }
    }
    for j in 1..=tree.width(horizon - 1) {
        let zs = &z_nodes[tree.node(horizon - 1, j)];
        v_nodes.push(&p.k * zs);
    }
    for j in 1..=tree.width(horizon - 1) {
        let s = tree.node(horizon - 1, j);
        for mu in &p.atoms {
            let next = &p.a * &z_nodes[s] + &p.b * &v_nodes[s] + mu;
            z_nodes.push(next);
        }
    }
    Ok(TreePlan { z_nodes, v_nodes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn case_params(horizon: usize) -> BmpcParams {
        BmpcParams {
            a: m(1.0),
            b: m(1.0),
            k: m(-1.0),
            z: PolytopeH::interval(-1.579, 1.579),
            v: PolytopeH::interval(-1.533, 1.533),
            z_f: PolytopeH::interval(-1.533, 1.533),
            atoms: vec![s(-1.5), s(0.0), s(1.5)],
            weights: vec![0.2, 0.3, 0.5],
            horizon,
            q: m(1.0),
            r: m(1.0),
            p: m(1.0),
            epsilon: 1e3,
        }
    }

    #[test]
    fn case_study_sizes() {
        let cfg = BmpcConfig::new(case_params(5)).unwrap();
        assert_eq!(cfg.num_vars(), 485);
        assert_eq!(cfg.num_eq_rows(), 364);
        assert_eq!(cfg.num_in_rows(), 2 * 121 + 2 * 121 + 2 * 243);
    }

    #[test]
    fn one_step_tree() {
        let mut p = case_params(1);
        p.atoms = vec![s(0.0)];
        p.weights = vec![1.0];
        let cfg = BmpcConfig::new(p).unwrap();
        let qp = assemble(&cfg, &s(0.3), &s(-0.2), 0).unwrap();
        assert_eq!(
            qp.a_eq().to_dense(),
            DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, -1.0, 1.0, -1.0])
        );
        assert_eq!(qp.b_eq().as_slice(), &[0.3, 0.0]);
        let qp = assemble(&cfg, &s(0.3), &s(-0.2), 1).unwrap();
        assert_eq!(qp.b_eq()[0], -0.2);
    }

    #[test]
    fn case_study_origin_is_optimal_with_xi_zero() {
        let cfg = BmpcConfig::new(case_params(5)).unwrap();
        let sol = solve_bmpc(&cfg, &s(0.0), &s(0.0), None).unwrap();
        assert_eq!(sol.xi, 0);
        assert_eq!(sol.qp_solves, 1);
        let viol = max_violation(&cfg, &sol.plan, &s(0.0), &s(0.0), 0).unwrap();
        assert!(viol <= 1e-6, "{viol}");
    }

    #[test]
    fn measurement_outside_z_resets_to_prediction() {
        let cfg = BmpcConfig::new(case_params(3)).unwrap();
        let sol = solve_bmpc(&cfg, &s(2.5), &s(1.0), None).unwrap();
        assert_eq!(sol.xi, 1);
        assert!((sol.root()[0] - 1.0).abs() < 1e-9);
        assert!(sol.cost >= 1e3);
    }

    #[test]
    fn both_infeasible() {
        let cfg = BmpcConfig::new(case_params(2)).unwrap();
        assert_eq!(solve_bmpc(&cfg, &s(2.5), &s(2.5), None), Err(BmpcError::BothInfeasible));
    }

    #[test]
    fn shifted_plan_is_feasible() {
        let cfg = BmpcConfig::new(case_params(4)).unwrap();
        let sol = solve_bmpc(&cfg, &s(1.2), &s(0.0), None).unwrap();
        for d in 1..=3 {
            let cand = shift_candidate(&sol.plan, d, &cfg).unwrap();
            let z_prev = sol.depth_one(d).clone();
            let viol = max_violation(&cfg, &cand, &s(9.0), &z_prev, 1).unwrap();
            assert!(viol <= 1e-6, "branch {d}: {viol}");
            let next = solve_bmpc(&cfg, &s(9.0), &z_prev, Some(&cand)).unwrap();
            assert!(next.cost <= cfg.plan_cost(&cand.z_nodes, &cand.v_nodes) + 1e3 + 1e-6);
        }
        assert!(shift_candidate(&sol.plan, 4, &cfg).is_err());
    }
}
