//! Probabilistic reachable sets of the error dynamics and the tightened
//! nominal constraint sets.

use nalgebra::{DMatrix, DVector};

use crate::mixture::GaussianMixture;
use crate::setops::{
    check_spd, check_terminal_conditions, chi2_inv, dlyap, max_rpi, mink_diff_ellipsoid, spectral_radius, Ellipsoid,
    PolytopeH, SetError,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TighteningError {
    #[error(transparent)]
    Set(#[from] SetError),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("tightening of {0} is empty")]
    EmptyTightening(String),
    #[error("terminal set: {0}")]
    Terminal(String),
}

/// Which covariance drives the error dynamics in the Lyapunov equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrsNoise {
    /// The shared component covariance `Σ`.
    #[default]
    Component,
    /// The full mixture variance, means included.
    Mixture,
}

impl PrsNoise {
    pub fn covariance(self, mixture: &GaussianMixture) -> DMatrix<f64> {
        match self {
            PrsNoise::Component => mixture.cov().clone(),
            PrsNoise::Mixture => mixture.moments().1,
        }
    }
}

/// `e⁺ = (A + BK) e + w_e` with `w_e ~ N(0, noise_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    k: DMatrix<f64>,
    a_k: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    sigma_inf: DMatrix<f64>,
}

impl ErrorModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        k: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
    ) -> Result<Self, TighteningError> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || k.shape() != (b.ncols(), n) || noise_cov.shape() != (n, n) {
            return Err(TighteningError::Invalid(format!(
                "A {:?}, B {:?}, K {:?}, noise {:?}",
                a.shape(),
                b.shape(),
                k.shape(),
                noise_cov.shape()
            )));
        }
        let a_k = &a + &b * &k;
        let sigma_inf = dlyap(&a_k, &noise_cov)?;
        Ok(Self {
            a,
            b,
            k,
            a_k,
            noise_cov,
            sigma_inf,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn a_k(&self) -> &DMatrix<f64> {
        &self.a_k
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn sigma_inf(&self) -> &DMatrix<f64> {
        &self.sigma_inf
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Discrete-time LQR gain `K = −(R + BᵀPB)⁻¹ BᵀPA` from the Riccati fixed
/// point, so that `u = K x`.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, TighteningError> {
    check_spd(r).map_err(|e| TighteningError::Invalid(format!("LQR input weight: {e}")))?;
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>, TighteningError> {
        let s = r + b.transpose() * p * b;
        let chol = nalgebra::Cholesky::new(s).ok_or_else(|| TighteningError::Invalid("R + BᵀPB is singular".into()))?;
        Ok(-chol.solve(&(b.transpose() * p * a)))
    };
    let mut p = q.clone();
    for _ in 0..100_000 {
        let k = gain(&p)?;
        let a_k = a + b * &k;
        let next = q + k.transpose() * r * &k + a_k.transpose() * &p * &a_k;
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).amax();
        p = next;
        if delta <= 1e-13 * p.amax().max(1.0) {
            let k = gain(&p)?;
            let rho = spectral_radius(&(a + b * &k));
            if rho >= 1.0 {
                return Err(TighteningError::Invalid(format!(
                    "LQR closed loop is not stable (spectral radius {rho})"
                )));
            }
            return Ok(k);
        }
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(TighteningError::Invalid(
        "Riccati iteration did not converge; is (A, B) stabilizable?".into(),
    ))
}

/// A polytope with a target satisfaction probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanceConstraint {
    pub name: String,
    pub set: PolytopeH,
    pub probability: f64,
}

impl ChanceConstraint {
    pub fn new(name: impl Into<String>, set: PolytopeH, probability: f64) -> Result<Self, TighteningError> {
        let name = name.into();
        if !(probability > 0.0 && probability < 1.0) {
            return Err(TighteningError::Invalid(format!(
                "{name}: probability {probability} not in (0, 1)"
            )));
        }
        for i in 0..set.num_rows() {
            let norm = set.row(i).norm();
            if !(norm > 0.0 && set.b()[i] / norm > 0.0) {
                return Err(TighteningError::Invalid(format!(
                    "{name}: origin is not in the interior (row {i})"
                )));
            }
        }
        Ok(Self { name, set, probability })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChanceSpec {
    pub states: Vec<ChanceConstraint>,
    pub input: ChanceConstraint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightenedSets {
    pub z: PolytopeH,
    pub v: PolytopeH,
}

/// `{e : eᵀ Σ∞⁻¹ e ≤ χ²_n(p)}`.
pub fn prs_ellipsoid(em: &ErrorModel, p: f64) -> Result<Ellipsoid, TighteningError> {
    let level = chi2_inv(p, em.state_dim())?;
    Ok(Ellipsoid::from_covariance(em.sigma_inf(), level)?)
}

/// `Z = ∩ⱼ Xⱼ ⊖ R^{pⱼ}` and `V = U ⊖ K R^{p_u}`.
pub fn tighten(em: &ErrorModel, spec: &ChanceSpec) -> Result<TightenedSets, TighteningError> {
    if spec.states.is_empty() {
        return Err(TighteningError::Invalid(
            "at least one state constraint is required".into(),
        ));
    }
    let mut z: Option<PolytopeH> = None;
    for c in &spec.states {
        let zi = mink_diff_ellipsoid(&c.set, &prs_ellipsoid(em, c.probability)?)?;
        if zi.is_empty() {
            return Err(TighteningError::EmptyTightening(c.name.clone()));
        }
        z = Some(match z {
            None => zi,
            Some(acc) => {
                let joined = acc.intersect(&zi)?;
                if joined.is_empty() {
                    return Err(TighteningError::EmptyTightening(format!(
                        "intersection including {}",
                        c.name
                    )));
                }
                joined.remove_redundant()
            }
        });
    }
    let z = z.expect("nonempty list");

    let u = &spec.input;
    if u.set.dim() != em.k().nrows() {
        return Err(TighteningError::Invalid(format!(
            "{}: dimension {} but {} inputs",
            u.name,
            u.set.dim(),
            em.k().nrows()
        )));
    }
    let level = chi2_inv(u.probability, em.state_dim())?;
    let shape = em.k() * em.sigma_inf() * em.k().transpose();
    let b = DVector::from_fn(u.set.num_rows(), |i, _| {
        let a = u.set.row(i).transpose();
        u.set.b()[i] - (level * (a.transpose() * &shape * &a)[(0, 0)]).max(0.0).sqrt()
    });
    let v = PolytopeH::new(u.set.a().clone(), b)?;
    if v.is_empty() {
        return Err(TighteningError::EmptyTightening(u.name.clone()));
    }
    Ok(TightenedSets { z, v })
}

/// Maximal robust invariant `Z_F ⊆ Z` with `K Z_F ⊆ V` under the discrete
/// disturbance atoms, verified before it is returned.
pub fn terminal_set(
    em: &ErrorModel,
    z: &PolytopeH,
    v: &PolytopeH,
    atoms: &[DVector<f64>],
    max_iter: usize,
) -> Result<PolytopeH, TighteningError> {
    let omega = max_rpi(z, v, em.k(), em.a_k(), atoms, max_iter).map_err(|e| match e {
        SetError::EmptyAt(0) => TighteningError::Terminal("Z ∩ {z : Kz ∈ V} is empty".into()),
        SetError::EmptyAt(i) => TighteningError::Terminal(format!(
            "no set satisfies A_K·Z_F ⊕ W ⊆ Z_F inside Z (empty at iteration {i})"
        )),
        SetError::NoConvergence(n) => {
            TighteningError::Terminal(format!("invariant-set iteration did not converge in {n} steps"))
        }
        other => TighteningError::Set(other),
    })?;
    check_terminal_conditions(&omega, z, v, em.k(), em.a_k(), atoms).map_err(TighteningError::Terminal)?;
    Ok(omega)
}
