//! Discrete Lyapunov equation `A X Aᵀ + Q = X`.

use nalgebra::DMatrix;

use super::ellipsoid::check_spd;
use super::SetError;

/// Up to this dimension the Kronecker-product linear system is solved directly.
pub const KRONECKER_MAX_DIM: usize = 20;

/// Spectral radius via the real Schur form.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)].abs();
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `‖A X Aᵀ + Q − X‖_F`
pub fn residual(a: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    (a * x * a.transpose() + q - x).norm()
}

/// Solves `A X Aᵀ + Q = X` for stable `A` and SPD `Q`.
pub fn dlyap(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, SetError> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(SetError::Dimension(format!(
            "dlyap expects square A and matching Q, got {:?} and {:?}",
            a.shape(),
            q.shape()
        )));
    }
    check_spd(q)?;
    let rho = spectral_radius(a);
    if rho.is_nan() || rho >= 1.0 - 1e-9 {
        return Err(SetError::NotStable(rho));
    }
    let x = if n <= KRONECKER_MAX_DIM {
        kronecker_solve(a, q)?
    } else {
        doubling(a, q)
    };
    Ok(x)
}

/// `(I − A⊗A) vec(X) = vec(Q)` followed by one step of residual correction.
pub fn kronecker_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, SetError> {
    let n = a.nrows();
    let m = DMatrix::identity(n * n, n * n) - a.kronecker(a);
    let lu = m.lu();
    let solve = |rhs: &DMatrix<f64>| -> Result<DMatrix<f64>, SetError> {
        let v = nalgebra::DVector::from_column_slice(rhs.as_slice());
        let sol = lu.solve(&v).ok_or_else(|| SetError::NotStable(spectral_radius(a)))?;
        Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
    };
    let mut x = solve(q)?;
    let r = a * &x * a.transpose() + q - &x;
    x += solve(&r)?;
    Ok((&x + x.transpose()) * 0.5)
}

/// Smith doubling: `X ← X + Aₖ X Aₖᵀ`, `Aₖ ← Aₖ²`.
pub fn doubling(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = &ak * &x * ak.transpose();
        x += &inc;
        ak = &ak * &ak;
        if inc.norm() <= 1e-17 * x.norm() {
            break;
        }
    }
    (&x + x.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dynamics_returns_q() {
        let x = dlyap(&DMatrix::zeros(1, 1), &DMatrix::from_element(1, 1, 0.25)).unwrap();
        assert_eq!(x[(0, 0)], 0.25);
    }

    #[test]
    fn scalar_fixed_point_matches_series() {
        // oracle: truncated series Σ aᵏ q aᵏ
        let series: f64 = (0..200).map(|k| 0.5f64.powi(2 * k) * 0.25).sum();
        let x = dlyap(&DMatrix::from_element(1, 1, 0.5), &DMatrix::from_element(1, 1, 0.25)).unwrap();
        assert!((x[(0, 0)] - series).abs() < 1e-15);
        assert!((x[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_case() {
        let a = DMatrix::identity(2, 2) * 0.5;
        let x = dlyap(&a, &DMatrix::identity(2, 2)).unwrap();
        assert!((x - DMatrix::identity(2, 2) * (4.0 / 3.0)).amax() < 1e-14);
    }

    #[test]
    fn unstable_and_non_spd_rejected() {
        let q = DMatrix::identity(1, 1);
        assert!(matches!(
            dlyap(&DMatrix::from_element(1, 1, 1.0), &q),
            Err(SetError::NotStable(_))
        ));
        assert!(matches!(
            dlyap(&DMatrix::from_element(1, 1, 0.5), &DMatrix::from_element(1, 1, -1.0)),
            Err(SetError::NotSpd(_))
        ));
    }

    #[test]
    fn doubling_agrees_with_kronecker() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, -0.2, 0.4]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x1 = kronecker_solve(&a, &q).unwrap();
        let x2 = doubling(&a, &q);
        assert!((x1 - x2).amax() < 1e-12);
    }
}
