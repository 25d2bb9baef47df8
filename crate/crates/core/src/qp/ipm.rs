//! Primal-dual interior-point QP backend (Mehrotra predictor-corrector).
//!
//! Each Newton step solves the augmented system
//! `[[H, A_inᵀ, A_eqᵀ], [A_in, −S/Λ, 0], [A_eq, 0, 0]]` with the sparse LDLᵀ
//! of a slightly regularized copy plus iterative refinement.

use nalgebra::DVector;

use super::ldl::{LdlFactor, OrderingCache};
use super::sparse::{inf_norm, CscMatrix};
use super::{certify, upper, QpBackend, QpProblem, QpSolution, QpStatus, SolveOptions};

#[derive(Debug, Clone)]
pub struct InteriorPoint {
    pub max_iter: usize,
    pub regularization: f64,
    cache: OrderingCache,
}

impl Default for InteriorPoint {
    fn default() -> Self {
        Self {
            max_iter: 200,
            regularization: 1e-9,
            cache: OrderingCache::default(),
        }
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

impl QpBackend for InteriorPoint {
    fn name(&self) -> &'static str {
        "interior-point"
    }

    fn solve(&self, p: &QpProblem, opts: &SolveOptions) -> QpSolution {
        let n = p.num_vars();
        let mi = p.num_in();
        let me = p.num_eq();
        let dim = n + mi + me;
        let h_up = upper(p.h());
        let f = p.f().as_slice();
        let b_in = p.b_in().as_slice();
        let b_eq = p.b_eq().as_slice();

        let mut x: Vec<f64> = match &opts.warm_start {
            Some(w) if w.len() == n => w.iter().copied().collect(),
            _ => vec![0.0; n],
        };
        let ax = p.a_in().mul_vec(&x);
        let mut s: Vec<f64> = (0..mi).map(|i| (b_in[i] - ax[i]).max(1.0)).collect();
        let mut lam = vec![1.0; mi];
        let mut y = vec![0.0; me];

        let mut kkt = {
            let reg = self.regularization;
            let mut t: Vec<_> = h_up.iter().collect();
            t.extend((0..n).map(|j| (j, j, reg)));
            t.extend(p.a_in().iter().map(|(i, j, v)| (j, n + i, v)));
            t.extend((0..mi).map(|i| (n + i, n + i, -1.0)));
            t.extend(p.a_eq().iter().map(|(i, j, v)| (j, n + mi + i, v)));
            t.extend((0..me).map(|i| (n + mi + i, n + mi + i, -reg)));
            CscMatrix::from_triplets(dim, dim, &t)
        };
        // the diagonal is the last stored entry of each upper-triangular column
        let w_pos: Vec<usize> = (0..mi).map(|i| kkt.colptr()[n + i + 1] - 1).collect();
        let mut factor: Option<LdlFactor> = None;
        let scale = 1.0 + inf_norm(f);

        for it in 0..self.max_iter.min(opts.max_iter) {
            let hx = p.h().mul_vec(&x);
            let aeq_y = p.a_eq().tr_mul_vec(&y);
            let ain_l = p.a_in().tr_mul_vec(&lam);
            let r_d: Vec<f64> = (0..n).map(|j| hx[j] + f[j] + aeq_y[j] + ain_l[j]).collect();
            let aex = p.a_eq().mul_vec(&x);
            let r_eq: Vec<f64> = (0..me).map(|i| aex[i] - b_eq[i]).collect();
            let aix = p.a_in().mul_vec(&x);
            let r_in: Vec<f64> = (0..mi).map(|i| aix[i] + s[i] - b_in[i]).collect();
            let mu = if mi > 0 {
                s.iter().zip(&lam).map(|(a, b)| a * b).sum::<f64>() / mi as f64
            } else {
                0.0
            };

            if inf_norm(&r_d) <= 1e-10 * scale
                && inf_norm(&r_eq) <= 0.1 * opts.tol
                && inf_norm(&r_in) <= 0.1 * opts.tol
                && mu <= 1e-11 * scale
            {
                let xv = DVector::from_vec(x);
                let y_eq = DVector::from_vec(y);
                let y_in = DVector::from_vec(lam);
                let status = if certify(p, &xv, &y_eq, &y_in, opts.tol) {
                    QpStatus::Optimal
                } else {
                    QpStatus::MaxIter
                };
                return QpSolution {
                    objective: p.objective(&xv),
                    x: xv,
                    y_eq,
                    y_in,
                    status,
                    iterations: it,
                };
            }
            if inf_norm(&lam).max(inf_norm(&y)) > 1e12 * scale {
                return QpSolution::failed(p, QpStatus::Infeasible, it);
            }

            let w: Vec<f64> = (0..mi).map(|i| s[i] / lam[i]).collect();
            {
                let vals = kkt.values_mut();
                for i in 0..mi {
                    vals[w_pos[i]] = -w[i];
                }
            }
            let ok = match factor.as_mut() {
                Some(fac) => fac.refactor(&kkt).is_ok(),
                None => match self.cache.factor(&kkt) {
                    Ok(fac) => {
                        factor = Some(fac);
                        true
                    }
                    Err(_) => false,
                },
            };
            if !ok {
                return QpSolution::failed(p, QpStatus::MaxIter, it);
            }
            let fac = factor.as_ref().expect("factor set above");
            let apply = |v: &[f64]| {
                let (vx, rest) = v.split_at(n);
                let (vl, vy) = rest.split_at(mi);
                let mut out = p.h().mul_vec(vx);
                let a1 = p.a_in().tr_mul_vec(vl);
                let a2 = p.a_eq().tr_mul_vec(vy);
                for j in 0..n {
                    out[j] += a1[j] + a2[j];
                }
                let ai = p.a_in().mul_vec(vx);
                out.extend((0..mi).map(|i| ai[i] - w[i] * vl[i]));
                out.extend(p.a_eq().mul_vec(vx));
                out
            };
            let newton = |rc_over_lam: &[f64]| {
                let mut rhs: Vec<f64> = r_d.iter().map(|v| -v).collect();
                rhs.extend((0..mi).map(|i| -r_in[i] + rc_over_lam[i]));
                rhs.extend(r_eq.iter().map(|v| -v));
                let sol = fac.solve_refined(apply, &rhs, 3);
                let dx = sol[..n].to_vec();
                let dl = sol[n..n + mi].to_vec();
                let dy = sol[n + mi..].to_vec();
                let adx = p.a_in().mul_vec(&dx);
                let ds: Vec<f64> = (0..mi).map(|i| -r_in[i] - adx[i]).collect();
                (dx, dl, dy, ds)
            };

            // predictor
            let (_, dl_a, _, ds_a) = newton(&s);
            let alpha_a = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
            let sigma = if mi > 0 {
                let mu_aff = (0..mi)
                    .map(|i| (s[i] + alpha_a * ds_a[i]) * (lam[i] + alpha_a * dl_a[i]))
                    .sum::<f64>()
                    / mi as f64;
                (mu_aff / mu).powi(3).min(1.0)
            } else {
                0.0
            };
            // corrector
            let rc: Vec<f64> = (0..mi)
                .map(|i| (s[i] * lam[i] + ds_a[i] * dl_a[i] - sigma * mu) / lam[i])
                .collect();
            let (dx, dl, dy, ds) = newton(&rc);
            let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
            for j in 0..n {
                x[j] += alpha * dx[j];
            }
            for i in 0..mi {
                s[i] = (s[i] + alpha * ds[i]).max(1e-300);
                lam[i] = (lam[i] + alpha * dl[i]).max(1e-300);
            }
            for i in 0..me {
                y[i] += alpha * dy[i];
            }
        }
        QpSolution::failed(p, QpStatus::MaxIter, self.max_iter)
    }
}
