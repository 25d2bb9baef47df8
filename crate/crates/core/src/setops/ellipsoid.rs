use nalgebra::{DMatrix, DVector};

use super::SetError;

/// `{x : xᵀ S x ≤ level}` with `S` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    shape_inv: DMatrix<f64>,
    shape: DMatrix<f64>,
    level: f64,
}

impl Ellipsoid {
    pub fn new(shape_inv: DMatrix<f64>, level: f64) -> Result<Self, SetError> {
        if !shape_inv.is_square() {
            return Err(SetError::Dimension("ellipsoid shape must be square".into()));
        }
        if !(level >= 0.0 && level.is_finite()) {
            return Err(SetError::Domain(format!(
                "ellipsoid level {level} must be finite and nonnegative"
            )));
        }
        let shape = spd_inverse(&shape_inv)?;
        Ok(Self {
            shape_inv,
            shape,
            level,
        })
    }

    /// Ellipsoid with the given covariance-like shape, i.e. `S = Σ⁻¹`.
    pub fn from_covariance(sigma: &DMatrix<f64>, level: f64) -> Result<Self, SetError> {
        if !(level >= 0.0 && level.is_finite()) {
            return Err(SetError::Domain(format!(
                "ellipsoid level {level} must be finite and nonnegative"
            )));
        }
        let shape_inv = spd_inverse(sigma)?;
        Ok(Self {
            shape_inv,
            shape: sigma.clone(),
            level,
        })
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn shape_inv(&self) -> &DMatrix<f64> {
        &self.shape_inv
    }

    /// `S⁻¹`, the covariance-like shape.
    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// Support function `h(a) = sqrt(level · aᵀ S⁻¹ a)`.
    pub fn support(&self, a: &DVector<f64>) -> f64 {
        (self.level * (a.transpose() * &self.shape * a)[(0, 0)]).max(0.0).sqrt()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (x.transpose() * &self.shape_inv * x)[(0, 0)] <= self.level * (1.0 + 1e-12) + 1e-300
    }

    /// Half-widths along the coordinate axes.
    pub fn axis_half_widths(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| (self.level * self.shape[(i, i)]).sqrt())
    }
}

/// Symmetric check within `1e-10` (relative to the largest entry) followed by
/// a Cholesky attempt.
pub(crate) fn check_spd(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, SetError> {
    if !m.is_square() {
        return Err(SetError::NotSpd("matrix is not square".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SetError::NonFinite);
    }
    let scale = m.amax().max(1e-300);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale.max(1.0) {
        return Err(SetError::NotSpd(format!("asymmetry {asym:.3e}")));
    }
    nalgebra::Cholesky::new(m.clone()).ok_or_else(|| SetError::NotSpd("Cholesky factorization failed".into()))
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, SetError> {
    let chol = check_spd(m)?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}
