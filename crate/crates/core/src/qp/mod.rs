//! Convex quadratic programming behind a backend-agnostic interface.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ xᵀ H x + fᵀ x
//! subject to  A_eq x  = b_eq
//!             A_in x ≤ b_in
//! ```
//!
//! Two backends ship in-tree: [`Admm`], an operator-splitting method with
//! solution polishing (the default), and [`InteriorPoint`], a primal-dual
//! Mehrotra method used as an independent cross-check.

mod admm;
mod ipm;
pub mod ldl;
pub mod sparse;

use nalgebra::DVector;

pub use admm::Admm;
pub use ipm::InteriorPoint;
pub use sparse::CscMatrix;

use ldl::{upper_triangle, LdlFactor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cost matrix is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("cost matrix is not positive semidefinite")]
    NotPsd,
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
}

/// A convex QP. `h` holds the full symmetric cost matrix.
#[derive(Debug, Clone)]
pub struct QpProblem {
    h: CscMatrix,
    f: DVector<f64>,
    a_eq: CscMatrix,
    b_eq: DVector<f64>,
    a_in: CscMatrix,
    b_in: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        h: CscMatrix,
        f: DVector<f64>,
        a_eq: CscMatrix,
        b_eq: DVector<f64>,
        a_in: CscMatrix,
        b_in: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = f.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "H is {}x{}, expected {n}x{n}",
                h.nrows(),
                h.ncols()
            )));
        }
        if a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
            return Err(QpError::DimensionMismatch(format!(
                "A_eq is {}x{} with {} right-hand sides, expected {n} columns",
                a_eq.nrows(),
                a_eq.ncols(),
                b_eq.len()
            )));
        }
        if a_in.ncols() != n || a_in.nrows() != b_in.len() {
            return Err(QpError::DimensionMismatch(format!(
                "A_in is {}x{} with {} right-hand sides, expected {n} columns",
                a_in.nrows(),
                a_in.ncols(),
                b_in.len()
            )));
        }
        for (name, ok) in [
            ("H", h.values().iter().all(|v| v.is_finite())),
            ("f", f.iter().all(|v| v.is_finite())),
            ("A_eq", a_eq.values().iter().all(|v| v.is_finite())),
            ("b_eq", b_eq.iter().all(|v| v.is_finite())),
            ("A_in", a_in.values().iter().all(|v| v.is_finite())),
            ("b_in", b_in.iter().all(|v| !v.is_nan())),
        ] {
            if !ok {
                return Err(QpError::NonFinite(name));
            }
        }
        let hmax = h.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let asym = h.max_asymmetry();
        if asym > 1e-10 * hmax.max(1.0) {
            return Err(QpError::NotSymmetric(asym));
        }
        if n > 0 && !is_psd(&h, hmax) {
            return Err(QpError::NotPsd);
        }
        Ok(Self {
            h,
            f,
            a_eq,
            b_eq,
            a_in,
            b_in,
        })
    }

    /// Dense convenience constructor.
    pub fn from_dense(
        h: &nalgebra::DMatrix<f64>,
        f: DVector<f64>,
        a_eq: &nalgebra::DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: &nalgebra::DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Result<Self, QpError> {
        Self::new(
            CscMatrix::from_dense(h),
            f,
            CscMatrix::from_dense(a_eq),
            b_eq,
            CscMatrix::from_dense(a_in),
            b_in,
        )
    }

    pub fn num_vars(&self) -> usize {
        self.f.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn num_in(&self) -> usize {
        self.b_in.len()
    }

    pub fn h(&self) -> &CscMatrix {
        &self.h
    }

    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }

    pub fn a_eq(&self) -> &CscMatrix {
        &self.a_eq
    }

    pub fn b_eq(&self) -> &DVector<f64> {
        &self.b_eq
    }

    pub fn a_in(&self) -> &CscMatrix {
        &self.a_in
    }

    pub fn b_in(&self) -> &DVector<f64> {
        &self.b_in
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let hx = self.h.mul_vec(x.as_slice());
        0.5 * sparse::dot(x.as_slice(), &hx) + self.f.dot(x)
    }

    /// `‖A_eq x − b_eq‖_∞`
    pub fn eq_residual(&self, x: &DVector<f64>) -> f64 {
        let ax = self.a_eq.mul_vec(x.as_slice());
        ax.iter()
            .zip(self.b_eq.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `max(0, max_i (A_in x − b_in)_i)`
    pub fn in_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = self.a_in.mul_vec(x.as_slice());
        ax.iter().zip(self.b_in.iter()).fold(0.0f64, |m, (a, b)| m.max(a - b))
    }

    /// Largest violation of any constraint at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.eq_residual(x).max(self.in_violation(x))
    }

    /// `‖H x + f + A_eqᵀ y_eq + A_inᵀ y_in‖_∞`
    pub fn stationarity(&self, x: &DVector<f64>, y_eq: &DVector<f64>, y_in: &DVector<f64>) -> f64 {
        let hx = self.h.mul_vec(x.as_slice());
        let ae = self.a_eq.tr_mul_vec(y_eq.as_slice());
        let ai = self.a_in.tr_mul_vec(y_in.as_slice());
        (0..self.num_vars())
            .map(|i| (hx[i] + self.f[i] + ae[i] + ai[i]).abs())
            .fold(0.0, f64::max)
    }
}

fn is_psd(h: &CscMatrix, hmax: f64) -> bool {
    let n = h.ncols();
    let shift = 1e-9 * hmax.max(1.0);
    let mut t: Vec<_> = h.iter().filter(|&(r, c, _)| r <= c).collect();
    t.extend((0..n).map(|i| (i, i, shift)));
    let shifted = CscMatrix::from_triplets(n, n, &t);
    match LdlFactor::new(&shifted) {
        Ok(f) => f.pivots().iter().all(|&d| d > 0.0),
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the equality rows.
    pub y_eq: DVector<f64>,
    /// Nonnegative multipliers of the inequality rows.
    pub y_in: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
}

impl QpSolution {
    pub(crate) fn failed(p: &QpProblem, status: QpStatus, iterations: usize) -> Self {
        Self {
            x: DVector::from_element(p.num_vars(), f64::NAN),
            y_eq: DVector::zeros(p.num_eq()),
            y_in: DVector::zeros(p.num_in()),
            objective: f64::NAN,
            status,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Absolute feasibility tolerance required of an `Optimal` answer.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial primal point hint.
    pub warm_start: Option<DVector<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
            warm_start: None,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// A convex QP solver.
pub trait QpBackend: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;

    fn solve(&self, problem: &QpProblem, opts: &SolveOptions) -> QpSolution;
}

/// Checks the optimality contract; returns `true` when `sol` may be reported
/// as `Optimal`.
pub(crate) fn certify(p: &QpProblem, x: &DVector<f64>, y_eq: &DVector<f64>, y_in: &DVector<f64>, tol: f64) -> bool {
    if !x.iter().all(|v| v.is_finite()) {
        return false;
    }
    let stat_tol = 1e-6 * (1.0 + p.f().amax());
    p.eq_residual(x) <= tol
        && p.in_violation(x) <= tol
        && y_in.iter().all(|&y| y >= -stat_tol)
        && p.stationarity(x, y_eq, y_in) <= stat_tol
}

/// Solves with the default backend at tolerance `tol`.
pub fn solve(problem: &QpProblem, tol: f64) -> QpSolution {
    Admm::default().solve(problem, &SolveOptions::with_tol(tol))
}

pub(crate) fn upper(m: &CscMatrix) -> CscMatrix {
    upper_triangle(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn scalar(h: f64, f: f64, a_in: &[f64], b_in: &[f64]) -> QpProblem {
        QpProblem::from_dense(
            &DMatrix::from_element(1, 1, h),
            DVector::from_element(1, f),
            &DMatrix::zeros(0, 1),
            DVector::zeros(0),
            &DMatrix::from_column_slice(a_in.len(), 1, a_in),
            DVector::from_column_slice(b_in),
        )
        .unwrap()
    }

    #[test]
    fn rejects_indefinite_and_mismatched() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = QpProblem::from_dense(
            &h,
            DVector::zeros(2),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap_err();
        assert_eq!(err, QpError::NotPsd);

        let err = QpProblem::from_dense(
            &DMatrix::identity(2, 2),
            DVector::zeros(2),
            &DMatrix::zeros(1, 3),
            DVector::zeros(1),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap_err();
        assert!(matches!(err, QpError::DimensionMismatch(_)));

        let err = QpProblem::from_dense(
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DVector::zeros(2),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap_err();
        assert!(matches!(err, QpError::NotSymmetric(_)));
    }

    #[test]
    fn psd_singular_cost_is_accepted() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(QpProblem::from_dense(
            &h,
            DVector::zeros(2),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .is_ok());
    }

    // min x² s.t. x ≥ 1  →  ½·2x², −x ≤ −1
    #[test]
    fn lower_bound_active() {
        let p = scalar(2.0, 0.0, &[-1.0], &[-1.0]);
        for backend in [&Admm::default() as &dyn QpBackend, &InteriorPoint::default()] {
            let s = backend.solve(&p, &SolveOptions::default());
            assert_eq!(s.status, QpStatus::Optimal, "{}", backend.name());
            assert!((s.x[0] - 1.0).abs() < 1e-8);
            assert!((s.objective - 1.0).abs() < 1e-8);
        }
    }

    // min (x−3)² s.t. −2 ≤ x ≤ 2; the constant 9 is dropped from the QP
    #[test]
    fn clamped_optimum() {
        let p = scalar(2.0, -6.0, &[1.0, -1.0], &[2.0, 2.0]);
        for backend in [&Admm::default() as &dyn QpBackend, &InteriorPoint::default()] {
            let s = backend.solve(&p, &SolveOptions::default());
            assert_eq!(s.status, QpStatus::Optimal, "{}", backend.name());
            assert!((s.x[0] - 2.0).abs() < 1e-8);
            assert!((s.objective + 9.0 - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn contradictory_box_is_infeasible() {
        let p = scalar(2.0, 0.0, &[1.0, -1.0], &[-1.0, -1.0]);
        let s = Admm::default().solve(&p, &SolveOptions::default());
        assert_eq!(s.status, QpStatus::Infeasible);
        let s = InteriorPoint::default().solve(&p, &SolveOptions::default());
        assert_ne!(s.status, QpStatus::Optimal);
    }

    #[test]
    fn unbounded_linear_cost() {
        let p = QpProblem::from_dense(
            &DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
            &DMatrix::zeros(0, 1),
            DVector::zeros(0),
            &DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let s = Admm::default().solve(&p, &SolveOptions::default());
        assert_eq!(s.status, QpStatus::Unbounded);
    }

    #[test]
    fn equality_constrained() {
        // min x² + y² s.t. x + y = 1
        let p = QpProblem::from_dense(
            &(DMatrix::identity(2, 2) * 2.0),
            DVector::zeros(2),
            &DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 1.0),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        for backend in [&Admm::default() as &dyn QpBackend, &InteriorPoint::default()] {
            let s = backend.solve(&p, &SolveOptions::default());
            assert_eq!(s.status, QpStatus::Optimal);
            assert!((s.x[0] - 0.5).abs() < 1e-9 && (s.x[1] - 0.5).abs() < 1e-9);
        }
    }
}
