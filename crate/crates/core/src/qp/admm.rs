//! Operator-splitting (ADMM) QP backend.
//!
//! The iteration follows the splitting `l ≤ z = Ax ≤ u` with a single sparse
//! quasi-definite KKT factorization, Ruiz equilibration, adaptive step size
//! and infeasibility certificates. Once the moderate-accuracy ADMM iterate
//! has converged, the active set is guessed from the duals and the reduced
//! equality-constrained KKT system is solved to machine precision
//! ("polishing"). The polished point is only returned when it certifies.

use nalgebra::DVector;

use super::ldl::{LdlFactor, OrderingCache};
use super::sparse::{dot, inf_norm, CscMatrix};
use super::{certify, upper, QpBackend, QpProblem, QpSolution, QpStatus, SolveOptions};

/// ADMM settings.
#[derive(Debug, Clone)]
pub struct Admm {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub scaling_iters: usize,
    pub check_every: usize,
    pub adapt_every: usize,
    cache: OrderingCache,
}

impl Default for Admm {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            eps_infeasible: 1e-6,
            scaling_iters: 10,
            check_every: 5,
            adapt_every: 50,
            cache: OrderingCache::default(),
        }
    }
}

const RHO_EQ_FACTOR: f64 = 1e3;

struct Scaled {
    p: CscMatrix,
    q: Vec<f64>,
    a: CscMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

impl Scaled {
    fn ruiz(p: &CscMatrix, q: &[f64], a: &CscMatrix, l: &[f64], u: &[f64], iters: usize) -> Self {
        let n = q.len();
        let m = l.len();
        let mut ps = p.clone();
        let mut as_ = a.clone();
        let mut qs = q.to_vec();
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];
        let mut c = 1.0;
        let clamp = |v: f64| {
            if v < 1e-4 {
                1.0
            } else {
                1.0 / v.min(1e4).sqrt()
            }
        };
        for _ in 0..iters {
            let pc = ps.col_inf_norms();
            let ac = as_.col_inf_norms();
            let dv: Vec<f64> = (0..n).map(|j| clamp(pc[j].max(ac[j]))).collect();
            let ev: Vec<f64> = as_.row_inf_norms().into_iter().map(clamp).collect();
            ps.scale(&dv, &dv);
            as_.scale(&ev, &dv);
            for j in 0..n {
                qs[j] *= dv[j];
                d[j] *= dv[j];
            }
            for i in 0..m {
                e[i] *= ev[i];
            }
            let pc = ps.col_inf_norms();
            let mean = if n > 0 { pc.iter().sum::<f64>() / n as f64 } else { 0.0 };
            let mut gamma = mean.max(inf_norm(&qs));
            gamma = if gamma < 1e-4 { 1.0 } else { 1.0 / gamma.min(1e4) };
            ps.scale(&vec![gamma; n], &vec![1.0; n]);
            for v in &mut qs {
                *v *= gamma;
            }
            c *= gamma;
        }
        let ls = l.iter().zip(&e).map(|(v, s)| v * s).collect();
        let us = u.iter().zip(&e).map(|(v, s)| v * s).collect();
        Self {
            p: ps,
            q: qs,
            a: as_,
            l: ls,
            u: us,
            d,
            e,
            c,
        }
    }
}

fn build_kkt(p_upper: &CscMatrix, a: &CscMatrix, sigma: f64, rho: &[f64]) -> CscMatrix {
    let n = p_upper.ncols();
    let m = a.nrows();
    let mut t: Vec<_> = p_upper.iter().collect();
    t.reserve(n + a.nnz() + m);
    t.extend((0..n).map(|j| (j, j, sigma)));
    t.extend(a.iter().map(|(i, j, v)| (j, n + i, v)));
    t.extend((0..m).map(|i| (n + i, n + i, -1.0 / rho[i])));
    CscMatrix::from_triplets(n + m, n + m, &t)
}

impl Admm {
    fn rho_vec(&self, rho: f64, l: &[f64], u: &[f64]) -> Vec<f64> {
        l.iter()
            .zip(u)
            .map(|(lo, hi)| if lo == hi { rho * RHO_EQ_FACTOR } else { rho })
            .collect()
    }

    /// Solves the equality-constrained QP on a guessed active set.
    fn polish(&self, p: &QpProblem, y: &[f64], z: &[f64], tol: f64) -> Option<QpSolution> {
        let n = p.num_vars();
        let me = p.num_eq();
        let active: Vec<usize> = (0..p.num_in())
            .filter(|&i| p.b_in()[i] - z[me + i] < y[me + i])
            .collect();
        let rows = me + active.len();

        let mut a_act = Vec::new();
        for (r, c, v) in p.a_eq().iter() {
            a_act.push((r, c, v));
        }
        let mut row_of = vec![usize::MAX; p.num_in()];
        for (k, &i) in active.iter().enumerate() {
            row_of[i] = me + k;
        }
        for (r, c, v) in p.a_in().iter() {
            if row_of[r] != usize::MAX {
                a_act.push((row_of[r], c, v));
            }
        }
        let a_act = CscMatrix::from_triplets(rows, n, &a_act);
        let h_up = upper(p.h());
        let delta = 1e-7;
        let mut t: Vec<_> = h_up.iter().collect();
        t.extend((0..n).map(|j| (j, j, delta)));
        t.extend(a_act.iter().map(|(i, j, v)| (j, n + i, v)));
        t.extend((0..rows).map(|i| (n + i, n + i, -delta)));
        let kkt = CscMatrix::from_triplets(n + rows, n + rows, &t);
        let factor = LdlFactor::new(&kkt).ok()?;

        let apply = |v: &[f64]| {
            let (vx, vy) = v.split_at(n);
            let mut out = p.h().mul_vec(vx);
            let aty = a_act.tr_mul_vec(vy);
            for j in 0..n {
                out[j] += aty[j];
            }
            out.extend(a_act.mul_vec(vx));
            out
        };
        let mut rhs: Vec<f64> = p.f().iter().map(|v| -v).collect();
        rhs.extend(p.b_eq().iter());
        rhs.extend(active.iter().map(|&i| p.b_in()[i]));
        let sol = factor.solve_refined(apply, &rhs, 25);

        let x = DVector::from_column_slice(&sol[..n]);
        let y_eq = DVector::from_column_slice(&sol[n..n + me]);
        let mut y_in = DVector::zeros(p.num_in());
        for (k, &i) in active.iter().enumerate() {
            y_in[i] = sol[n + me + k];
        }
        certify(p, &x, &y_eq, &y_in, tol).then(|| QpSolution {
            objective: p.objective(&x),
            x,
            y_eq,
            y_in,
            status: QpStatus::Optimal,
            iterations: 0,
        })
    }
}

impl QpBackend for Admm {
    fn name(&self) -> &'static str {
        "admm"
    }

    fn solve(&self, p: &QpProblem, opts: &SolveOptions) -> QpSolution {
        let n = p.num_vars();
        let me = p.num_eq();
        let m = me + p.num_in();
        let a = p.a_eq().vstack(p.a_in());
        let mut l: Vec<f64> = p.b_eq().iter().copied().collect();
        let mut u = l.clone();
        l.extend(std::iter::repeat_n(f64::NEG_INFINITY, p.num_in()));
        u.extend(p.b_in().iter());

        let s = Scaled::ruiz(p.h(), p.f().as_slice(), &a, &l, &u, self.scaling_iters);
        let p_upper = upper(&s.p);
        let mut rho = self.rho;
        let mut rho_v = self.rho_vec(rho, &s.l, &s.u);
        let mut factor = match self.cache.factor(&build_kkt(&p_upper, &s.a, self.sigma, &rho_v)) {
            Ok(f) => f,
            Err(_) => return QpSolution::failed(p, QpStatus::MaxIter, 0),
        };

        let mut x: Vec<f64> = match &opts.warm_start {
            Some(w) if w.len() == n => w.iter().zip(&s.d).map(|(v, d)| v / d).collect(),
            _ => vec![0.0; n],
        };
        let mut z: Vec<f64> = s.a.mul_vec(&x);
        for ((zi, l), u) in z.iter_mut().zip(&s.l).zip(&s.u) {
            *zi = zi.clamp(*l, *u);
        }
        let mut y = vec![0.0; m];
        let mut eps_abs = self.eps_abs;
        let mut eps_rel = self.eps_rel;
        let mut rhs = vec![0.0; n + m];
        let mut delta_x = vec![0.0; n];
        let mut delta_y = vec![0.0; m];
        let alpha = self.alpha;

        for it in 1..=opts.max_iter {
            for j in 0..n {
                rhs[j] = self.sigma * x[j] - s.q[j];
            }
            for i in 0..m {
                rhs[n + i] = z[i] - y[i] / rho_v[i];
            }
            factor.solve_in_place(&mut rhs);
            for j in 0..n {
                let xn = alpha * rhs[j] + (1.0 - alpha) * x[j];
                delta_x[j] = xn - x[j];
                x[j] = xn;
            }
            for i in 0..m {
                let zt = z[i] + (rhs[n + i] - y[i]) / rho_v[i];
                let zh = alpha * zt + (1.0 - alpha) * z[i];
                let zn = (zh + y[i] / rho_v[i]).clamp(s.l[i], s.u[i]);
                let yn = y[i] + rho_v[i] * (zh - zn);
                delta_y[i] = yn - y[i];
                y[i] = yn;
                z[i] = zn;
            }

            if it % self.check_every != 0 && it != opts.max_iter {
                continue;
            }

            // residuals in original units
            let ax = s.a.mul_vec(&x);
            let px = s.p.mul_vec(&x);
            let aty = s.a.tr_mul_vec(&y);
            let prim = (0..m).map(|i| ((ax[i] - z[i]) / s.e[i]).abs()).fold(0.0, f64::max);
            let ax_n = (0..m).map(|i| (ax[i] / s.e[i]).abs()).fold(0.0, f64::max);
            let z_n = (0..m).map(|i| (z[i] / s.e[i]).abs()).fold(0.0, f64::max);
            let dual = (0..n)
                .map(|j| ((px[j] + s.q[j] + aty[j]) / s.d[j]).abs())
                .fold(0.0, f64::max)
                / s.c;
            let px_n = (0..n).map(|j| (px[j] / s.d[j]).abs()).fold(0.0, f64::max);
            let aty_n = (0..n).map(|j| (aty[j] / s.d[j]).abs()).fold(0.0, f64::max);
            let q_n = (0..n).map(|j| (s.q[j] / s.d[j]).abs()).fold(0.0, f64::max);
            let eps_prim = eps_abs + eps_rel * ax_n.max(z_n);
            let eps_dual = eps_abs + eps_rel * px_n.max(aty_n).max(q_n) / s.c;

            if prim <= eps_prim && dual <= eps_dual {
                let y_orig: Vec<f64> = (0..m).map(|i| y[i] * s.e[i] / s.c).collect();
                let z_orig: Vec<f64> = (0..m).map(|i| z[i] / s.e[i]).collect();
                if let Some(mut sol) = self.polish(p, &y_orig, &z_orig, opts.tol) {
                    sol.iterations = it;
                    return sol;
                }
                let x_orig = DVector::from_iterator(n, (0..n).map(|j| x[j] * s.d[j]));
                let y_eq = DVector::from_column_slice(&y_orig[..me]);
                let y_in = DVector::from_iterator(p.num_in(), y_orig[me..].iter().map(|v| v.max(0.0)));
                if certify(p, &x_orig, &y_eq, &y_in, opts.tol) {
                    return QpSolution {
                        objective: p.objective(&x_orig),
                        x: x_orig,
                        y_eq,
                        y_in,
                        status: QpStatus::Optimal,
                        iterations: it,
                    };
                }
                eps_abs = (eps_abs * 0.1).max(1e-13);
                eps_rel = (eps_rel * 0.1).max(1e-13);
            }

            if self.primal_infeasible(&s, &delta_y) {
                return QpSolution::failed(p, QpStatus::Infeasible, it);
            }
            if self.dual_infeasible(&s, &delta_x) {
                return QpSolution::failed(p, QpStatus::Unbounded, it);
            }

            if it % self.adapt_every == 0 {
                let prim_s = inf_norm(&ax.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>());
                let dual_s = (0..n).map(|j| (px[j] + s.q[j] + aty[j]).abs()).fold(0.0, f64::max);
                let prim_scale = inf_norm(&ax).max(inf_norm(&z)).max(1e-30);
                let dual_scale = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&s.q)).max(1e-30);
                let ratio = (prim_s / prim_scale) / (dual_s / dual_scale).max(1e-30);
                let new_rho = (rho * ratio.sqrt()).clamp(1e-6, 1e6);
                if new_rho.is_finite() && (new_rho > 5.0 * rho || new_rho < rho / 5.0) {
                    rho = new_rho;
                    rho_v = self.rho_vec(rho, &s.l, &s.u);
                    if factor.refactor(&build_kkt(&p_upper, &s.a, self.sigma, &rho_v)).is_err() {
                        return QpSolution::failed(p, QpStatus::MaxIter, it);
                    }
                }
            }
        }
        QpSolution::failed(p, QpStatus::MaxIter, opts.max_iter)
    }
}

impl Admm {
    fn primal_infeasible(&self, s: &Scaled, dy: &[f64]) -> bool {
        let m = dy.len();
        let norm = (0..m).map(|i| (dy[i] * s.e[i]).abs()).fold(0.0, f64::max);
        if norm < 1e-30 {
            return false;
        }
        let eps = self.eps_infeasible * norm;
        let mut support = 0.0;
        for (i, &v) in dy.iter().enumerate() {
            if v > 0.0 {
                if s.u[i].is_infinite() {
                    if v * s.e[i] > eps {
                        return false;
                    }
                } else {
                    support += s.u[i] * v;
                }
            } else if v < 0.0 {
                if s.l[i].is_infinite() {
                    if -v * s.e[i] > eps {
                        return false;
                    }
                } else {
                    support += s.l[i] * v;
                }
            }
        }
        if support >= -eps {
            return false;
        }
        let aty = s.a.tr_mul_vec(dy);
        (0..aty.len()).all(|j| (aty[j] / s.d[j]).abs() <= eps)
    }

    fn dual_infeasible(&self, s: &Scaled, dx: &[f64]) -> bool {
        let n = dx.len();
        let norm = (0..n).map(|j| (dx[j] * s.d[j]).abs()).fold(0.0, f64::max);
        if norm < 1e-30 {
            return false;
        }
        let eps = self.eps_infeasible * norm;
        if dot(&s.q, dx) >= -s.c * eps {
            return false;
        }
        let pdx = s.p.mul_vec(dx);
        if (0..n).any(|j| (pdx[j] / s.d[j]).abs() > s.c * eps) {
            return false;
        }
        let adx = s.a.mul_vec(dx);
        (0..adx.len()).all(|i| {
            let v = adx[i] / s.e[i];
            let lo_ok = s.l[i].is_infinite() || v >= -eps;
            let hi_ok = s.u[i].is_infinite() || v <= eps;
            lo_ok && hi_ok
        })
    }
}
