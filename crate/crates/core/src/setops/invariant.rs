//! Robust pre-sets and the maximal robust positively invariant set.

use nalgebra::{DMatrix, DVector};

use super::{PolytopeH, SetError};

pub const DEFAULT_MAX_ITER: usize = 500;

/// `{z : A_K z + μ ∈ P  ∀ μ ∈ W}` for a finite disturbance set `W`.
///
/// Each row `aᵀx ≤ b` of `P` contributes `aᵀA_K z ≤ b − max_μ aᵀμ`, which is
/// the tightest of its per-atom copies; redundant rows are then pruned.
pub fn pre_set(p: &PolytopeH, a_k: &DMatrix<f64>, w: &[DVector<f64>]) -> Result<PolytopeH, SetError> {
    if w.is_empty() {
        return Err(SetError::Domain("disturbance set must be nonempty".into()));
    }
    if a_k.nrows() != p.dim() || !a_k.is_square() {
        return Err(SetError::Dimension(format!(
            "closed-loop matrix {:?} does not act on dimension {}",
            a_k.shape(),
            p.dim()
        )));
    }
    if let Some(bad) = w.iter().find(|mu| mu.len() != p.dim()) {
        return Err(SetError::Dimension(format!("disturbance atom of length {}", bad.len())));
    }
    let a = p.a() * a_k;
    let b = DVector::from_fn(p.num_rows(), |i, _| {
        let row = p.a().row(i);
        let worst = w.iter().map(|mu| (row * mu)[(0, 0)]).fold(f64::NEG_INFINITY, f64::max);
        p.b()[i] - worst
    });
    Ok(PolytopeH::new(a, b)?.remove_redundant())
}

/// Maximal robust positively invariant subset of `Z ∩ {z : K z ∈ V}` under
/// `z⁺ = A_K z + μ`, `μ ∈ W`.
///
/// Iterates `Ω_{k+1} = Ω_k ∩ pre(Ω_k)` until `Ω_k ⊆ Ω_{k+1}` (checked with LPs),
/// which makes `Ω_k` the fixed point.
pub fn max_rpi(
    z: &PolytopeH,
    input_set: &PolytopeH,
    k: &DMatrix<f64>,
    a_k: &DMatrix<f64>,
    w: &[DVector<f64>],
    max_iter: usize,
) -> Result<PolytopeH, SetError> {
    if k.ncols() != z.dim() || k.nrows() != input_set.dim() {
        return Err(SetError::Dimension(format!(
            "gain {:?} incompatible with state dim {} and input dim {}",
            k.shape(),
            z.dim(),
            input_set.dim()
        )));
    }
    let mut omega = z.intersect(&input_set.preimage(k)?)?.remove_redundant();
    if omega.is_empty() {
        return Err(SetError::EmptyAt(0));
    }
    for iter in 1..=max_iter {
        let next = omega.intersect(&pre_set(&omega, a_k, w)?)?.remove_redundant();
        if next.is_empty() {
            return Err(SetError::EmptyAt(iter));
        }
        if next.contains_set(&omega) {
            return Ok(next);
        }
        omega = next;
    }
    Err(SetError::NoConvergence(max_iter))
}

/// Checks `A_K Ω ⊕ W ⊆ Ω`, `Ω ⊆ Z` and `K Ω ⊆ V`; returns the first violated
/// condition.
pub fn check_terminal_conditions(
    omega: &PolytopeH,
    z: &PolytopeH,
    input_set: &PolytopeH,
    k: &DMatrix<f64>,
    a_k: &DMatrix<f64>,
    w: &[DVector<f64>],
) -> Result<(), String> {
    if !pre_set(omega, a_k, w).map_err(|e| e.to_string())?.contains_set(omega) {
        return Err("A_K·Z_F ⊕ W ⊄ Z_F".into());
    }
    if !z.contains_set(omega) {
        return Err("Z_F ⊄ Z".into());
    }
    if !input_set.preimage(k).map_err(|e| e.to_string())?.contains_set(omega) {
        return Err("K·Z_F ⊄ V".into());
    }
    Ok(())
}
