//! Convex-set algebra: H-polytopes, ellipsoids, robust invariant sets, and the
//! Lyapunov and chi-squared primitives behind probabilistic reachable sets.

mod chi2;
mod ellipsoid;
mod invariant;
pub mod lp;
mod lyapunov;
mod polytope;

use nalgebra::DVector;

pub use chi2::{chi2_cdf, chi2_inv, gamma_p, ln_gamma};
pub(crate) use ellipsoid::check_spd;
pub use ellipsoid::Ellipsoid;
pub use invariant::{check_terminal_conditions, max_rpi, pre_set, DEFAULT_MAX_ITER};
pub use lyapunov::{dlyap, doubling, kronecker_solve, residual as dlyap_residual, spectral_radius, KRONECKER_MAX_DIM};
pub use polytope::{PolytopeH, PolytopeRepr, SET_TOL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry")]
    NonFinite,
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("closed-loop matrix is not Schur stable (spectral radius {0:.6})")]
    NotStable(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("set is empty")]
    Empty,
    #[error("invariant-set iteration reached the empty set at iteration {0}")]
    EmptyAt(usize),
    #[error("invariant-set iteration did not converge within {0} iterations")]
    NoConvergence(usize),
}

/// `P ⊖ E`: every row `aᵀx ≤ b` becomes `aᵀx ≤ b − h_E(a)`, the exact
/// support-function tightening. The row count is preserved; the result may
/// be empty.
pub fn mink_diff_ellipsoid(p: &PolytopeH, e: &Ellipsoid) -> Result<PolytopeH, SetError> {
    if p.dim() != e.dim() {
        return Err(SetError::Dimension(format!(
            "polytope dim {} vs ellipsoid dim {}",
            p.dim(),
            e.dim()
        )));
    }
    let b = DVector::from_fn(p.num_rows(), |i, _| p.b()[i] - e.support(&p.row(i).transpose()));
    PolytopeH::new(p.a().clone(), b)
}
