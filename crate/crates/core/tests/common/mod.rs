#![allow(dead_code)]

pub mod tree;

use std::path::PathBuf;

use mixture_smpc::experiment::{load_config, ExperimentConfig};
use mixture_smpc::setops::spectral_radius;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn case_study_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../case_study.cfg")
}

pub fn case_study() -> ExperimentConfig {
    load_config(case_study_path()).expect("shipped case study parses")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

pub fn v1(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// Dense QP data `min ½xᵀHx + fᵀx, A_eq x = b_eq, A_in x ≤ b_in`.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl DenseQp {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    /// Strictly convex, feasible by construction around a random point.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(1..=6);
        let p = rng.random_range(0..=n.min(2));
        let q = rng.random_range(1..=8);
        let mut g = || rng.random_range(-1.0..1.0);
        let m = DMatrix::from_fn(n, n, |_, _| g());
        let h = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
        let f = DVector::from_fn(n, |_, _| 3.0 * g());
        let a_eq = DMatrix::from_fn(p, n, |_, _| g());
        let a_in = DMatrix::from_fn(q, n, |_, _| g());
        let x0 = DVector::from_fn(n, |_, _| g());
        let b_eq = &a_eq * &x0;
        let slack = DVector::from_fn(q, |_, _| 0.5 * (g() + 1.0));
        let b_in = &a_in * &x0 + slack;
        Self {
            h,
            f,
            a_eq,
            b_eq,
            a_in,
            b_in,
        }
    }
}

/// Exhaustive active-set enumeration: the KKT point of every subset of
/// inequality rows is computed and the primal-dual feasible one returned.
/// Exact for strictly convex problems with few inequality rows.
pub fn brute_force_qp(qp: &DenseQp) -> Option<(DVector<f64>, f64)> {
    let n = qp.h.nrows();
    let p = qp.a_eq.nrows();
    let q = qp.a_in.nrows();
    assert!(q <= 16);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << q) {
        let active: Vec<usize> = (0..q).filter(|i| mask & (1 << i) != 0).collect();
        let k = p + active.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        rhs.rows_mut(0, n).copy_from(&(-&qp.f));
        for r in 0..p {
            for c in 0..n {
                kkt[(n + r, c)] = qp.a_eq[(r, c)];
                kkt[(c, n + r)] = qp.a_eq[(r, c)];
            }
            rhs[n + r] = qp.b_eq[r];
        }
        for (t, &i) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + p + t, c)] = qp.a_in[(i, c)];
                kkt[(c, n + p + t)] = qp.a_in[(i, c)];
            }
            rhs[n + p + t] = qp.b_in[i];
        }
        let lu = kkt.full_piv_lu();
        if !lu.is_invertible() {
            continue;
        }
        let sol = match lu.solve(&rhs) {
            Some(s) => s,
            None => continue,
        };
        let x = sol.rows(0, n).into_owned();
        let duals_ok = (0..active.len()).all(|t| sol[n + p + t] >= -1e-9);
        let primal_ok = (&qp.a_in * &x - &qp.b_in).iter().all(|&v| v <= 1e-9);
        if duals_ok && primal_ok {
            let obj = qp.objective(&x);
            if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                best = Some((x, obj));
            }
        }
    }
    best
}

/// Two-sided Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 99% critical value of the one-sample KS statistic.
pub fn ks_critical_99(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

pub fn random_stable(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let target = rng.random_range(0.05..0.95);
    let rho = spectral_radius(&a).max(1e-3);
    a * (target / rho)
}

/// `Σ_{k<K} A^k Q (A^k)ᵀ`, truncated when the terms vanish.
pub fn lyapunov_series(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = q.clone();
    let mut term = q.clone();
    for _ in 0..5000 {
        term = a * &term * a.transpose();
        x += &term;
        if term.norm() < 1e-18 * x.norm() {
            break;
        }
    }
    x
}

/// `true` when some double `e` within 64 ulps of `w − mu` gives `mu + e == w`.
pub fn complement_exists(w: f64, mu: f64) -> bool {
    let (mut up, mut down) = (w - mu, w - mu);
    for _ in 0..64 {
        if mu + up == w || mu + down == w {
            return true;
        }
        up = up.next_up();
        down = down.next_down();
    }
    false
}
