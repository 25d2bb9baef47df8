//! Finite Gaussian mixtures with a shared covariance.
//!
//! A draw `w` from the mixture splits into a discrete part `w_x` (one of the
//! component means) and a zero-mean Gaussian part `w_e`. The split can be
//! made in two directions: forward (draw the component, then the Gaussian),
//! or backward from an observed `w` by drawing the component from its
//! posterior. The backward draw is what lets a controller built on the split
//! model act on the real system: whatever `w` happened, the pair it assigns
//! has the right joint law and adds up to `w`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::rng::RandomStream;
use crate::setops::check_spd;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MixtureError {
    #[error("mixture needs at least one component")]
    NoComponents,
    #[error("{means} means but {weights} weights")]
    CountMismatch { means: usize, weights: usize },
    #[error("weights must sum to 1 (sum is {0})")]
    WeightSum(f64),
    #[error("weight {0} outside [0, 1]")]
    WeightRange(f64),
    #[error("mean {index} has length {len}, covariance is {dim}x{dim}")]
    Dimension { index: usize, len: usize, dim: usize },
    #[error("non-finite mean")]
    NonFinite,
    #[error("covariance is not symmetric positive definite: {0}")]
    Covariance(String),
}

/// `Σ πᵢ N(μᵢ, Σ)`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    means: Vec<DVector<f64>>,
    weights: Vec<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for GaussianMixture {
    fn eq(&self, other: &Self) -> bool {
        self.means == other.means && self.weights == other.weights && self.cov == other.cov
    }
}

/// Discrete part of the split: atoms `μᵢ` with probabilities `πᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDisturbance {
    pub atoms: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

impl DiscreteDisturbance {
    pub fn sample(&self, rng: &mut RandomStream) -> (usize, DVector<f64>) {
        let i = rng.categorical(&self.weights);
        (i, self.atoms[i].clone())
    }
}

/// Zero-mean Gaussian part of the split.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    cov: DMatrix<f64>,
    chol_l: DMatrix<f64>,
}

impl GaussianNoise {
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn sample(&self, rng: &mut RandomStream) -> DVector<f64> {
        let z = DVector::from_fn(self.cov.nrows(), |_, _| rng.standard_normal());
        &self.chol_l * z
    }
}

/// Result of the posterior split of an observed disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDraw {
    /// Zero-based component index.
    pub index: usize,
    pub w_x: DVector<f64>,
    pub w_e: DVector<f64>,
}

impl GaussianMixture {
    pub fn new(means: Vec<DVector<f64>>, weights: Vec<f64>, cov: DMatrix<f64>) -> Result<Self, MixtureError> {
        if means.is_empty() {
            return Err(MixtureError::NoComponents);
        }
        if means.len() != weights.len() {
            return Err(MixtureError::CountMismatch {
                means: means.len(),
                weights: weights.len(),
            });
        }
        if let Some(&w) = weights.iter().find(|w| !(**w >= 0.0 && **w <= 1.0)) {
            return Err(MixtureError::WeightRange(w));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(MixtureError::WeightSum(sum));
        }
        let dim = cov.nrows();
        for (index, m) in means.iter().enumerate() {
            if m.len() != dim {
                return Err(MixtureError::Dimension {
                    index,
                    len: m.len(),
                    dim,
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(MixtureError::NonFinite);
            }
        }
        let chol = check_spd(&cov).map_err(|e| MixtureError::Covariance(e.to_string()))?;
        Ok(Self {
            means,
            weights,
            cov,
            chol,
        })
    }

    /// Scalar mixture, convenient for one-dimensional systems.
    pub fn scalar(means: &[f64], weights: &[f64], variance: f64) -> Result<Self, MixtureError> {
        Self::new(
            means.iter().map(|&m| DVector::from_element(1, m)).collect(),
            weights.to_vec(),
            DMatrix::from_element(1, 1, variance),
        )
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn num_components(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Mean `Σ πᵢ μᵢ` and covariance `Σ + Σ πᵢ μᵢ μᵢᵀ − m mᵀ`.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut mean = DVector::zeros(n);
        let mut second = DMatrix::zeros(n, n);
        for (mu, &p) in self.means.iter().zip(&self.weights) {
            mean += mu * p;
            second += mu * mu.transpose() * p;
        }
        let var = &self.cov + second - &mean * mean.transpose();
        (mean, (&var + var.transpose()) * 0.5)
    }

    /// Draws `(component, w)`.
    pub fn sample_indexed(&self, rng: &mut RandomStream) -> (usize, DVector<f64>) {
        let i = rng.categorical(&self.weights);
        let z = DVector::from_fn(self.dim(), |_, _| rng.standard_normal());
        (i, &self.means[i] + self.chol.l() * z)
    }

    pub fn sample(&self, rng: &mut RandomStream) -> DVector<f64> {
        self.sample_indexed(rng).1
    }

    pub fn decouple(&self) -> (DiscreteDisturbance, GaussianNoise) {
        (
            DiscreteDisturbance {
                atoms: self.means.clone(),
                weights: self.weights.clone(),
            },
            GaussianNoise {
                cov: self.cov.clone(),
                chol_l: self.chol.l(),
            },
        )
    }

    /// `log πᵢ − ½ (w − μᵢ)ᵀ Σ⁻¹ (w − μᵢ)`, i.e. the component log-densities
    /// up to the normalizer they share.
    fn unnormalized_log_posterior(&self, w: &DVector<f64>) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.weights)
            .map(|(mu, &p)| {
                if p == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let y = self
                    .chol
                    .l_dirty()
                    .solve_lower_triangular(&(w - mu))
                    .expect("Cholesky factor is nonsingular");
                p.ln() - 0.5 * y.norm_squared()
            })
            .collect()
    }

    /// Mixture density at `w`.
    pub fn density(&self, w: &DVector<f64>) -> f64 {
        let n = self.dim() as f64;
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let norm = -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det);
        self.unnormalized_log_posterior(w)
            .iter()
            .map(|l| (l + norm).exp())
            .sum()
    }

    /// Posterior component probabilities given an observed `w`, computed with
    /// log-sum-exp so that far-away observations do not underflow.
    pub fn posterior_weights(&self, w: &DVector<f64>) -> Vec<f64> {
        let logs = self.unnormalized_log_posterior(w);
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Splits an observed `w` into `(w_x, w_e)` by drawing the component from
    /// its posterior. `w_e` is chosen so that `w_x + w_e` reproduces `w`
    /// bit for bit whenever such a floating-point value exists.
    pub fn sample_conditional(&self, w: &DVector<f64>, rng: &mut RandomStream) -> ConditionalDraw {
        let post = self.posterior_weights(w);
        let index = rng.categorical(&post);
        let w_x = self.means[index].clone();
        let w_e = DVector::from_fn(w.len(), |i, _| exact_complement(w[i], w_x[i]));
        ConditionalDraw { index, w_x, w_e }
    }
}

/// Returns `e` with `mu + e == w` in floating point when one exists near the
/// rounded difference, else the rounded difference itself.
pub fn exact_complement(w: f64, mu: f64) -> f64 {
    let e = w - mu;
    if mu + e == w {
        return e;
    }
    let (mut up, mut down) = (e, e);
    for _ in 0..4 {
        up = up.next_up();
        if mu + up == w {
            return up;
        }
        down = down.next_down();
        if mu + down == w {
            return down;
        }
    }
    e
}
