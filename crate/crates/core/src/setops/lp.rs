//! Dense two-phase simplex for the small LPs that polytope operations need.
//!
//! Solves `maximize cᵀx s.t. A x ≤ b` over free `x` by splitting
//! `x = x⁺ − x⁻` and using Bland's rule, which cannot cycle.

use nalgebra::{DMatrix, DVector};

const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= piv;
        }
        self.rhs[r] /= piv;
        let prow = self.rows[r].clone();
        let prhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][c];
            if f != 0.0 {
                for (v, p) in self.rows[i].iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                self.rhs[i] -= f * prhs;
                if self.rhs[i] < 0.0 && self.rhs[i] > -1e-13 {
                    self.rhs[i] = 0.0;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `costᵀ v` over the current basis; `allowed` masks entering
    /// columns. Returns `false` if unbounded.
    fn minimize(&mut self, cost: &[f64], allowed: &[bool]) -> bool {
        loop {
            let mut entering = None;
            for j in 0..self.ncols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let reduced = cost[j]
                    - self
                        .rows
                        .iter()
                        .zip(&self.basis)
                        .map(|(row, &b)| cost[b] * row[j])
                        .sum::<f64>();
                if reduced < -1e-12 {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[i] / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li]) {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, c),
                None => return false,
            }
        }
    }

    fn value(&self, cost: &[f64]) -> f64 {
        self.basis.iter().zip(&self.rhs).map(|(&b, v)| cost[b] * v).sum()
    }
}

/// Maximizes `cᵀx` subject to `A x ≤ b`.
pub fn maximize(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> LpOutcome {
    let (q, d) = a.shape();
    let n_art = b.iter().filter(|&&v| v < 0.0).count();
    let ncols = 2 * d + q + n_art;
    let art0 = 2 * d + q;
    let mut rows = Vec::with_capacity(q);
    let mut rhs = Vec::with_capacity(q);
    let mut basis = Vec::with_capacity(q);
    let mut k = 0;
    for i in 0..q {
        let mut row = vec![0.0; ncols];
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            row[j] = sign * a[(i, j)];
            row[d + j] = -sign * a[(i, j)];
        }
        row[2 * d + i] = sign;
        if sign < 0.0 {
            row[art0 + k] = 1.0;
            basis.push(art0 + k);
            k += 1;
        } else {
            basis.push(2 * d + i);
        }
        rows.push(row);
        rhs.push(sign * b[i]);
    }
    let mut t = Tableau {
        rows,
        rhs,
        basis,
        ncols,
    };

    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if n_art > 0 {
        let cost: Vec<f64> = (0..ncols).map(|j| if j >= art0 { 1.0 } else { 0.0 }).collect();
        let allowed = vec![true; ncols];
        t.minimize(&cost, &allowed);
        if t.value(&cost) > 1e-10 * scale {
            return LpOutcome::Infeasible;
        }
        // drive remaining artificials out of the basis
        for r in 0..q {
            if t.basis[r] >= art0 {
                if let Some(c) = (0..art0).find(|&j| t.rows[r][j].abs() > 1e-9 && !t.basis.contains(&j)) {
                    t.pivot(r, c);
                }
            }
        }
    }

    let mut cost = vec![0.0; ncols];
    for j in 0..d {
        cost[j] = -c[j];
        cost[d + j] = c[j];
    }
    let allowed: Vec<bool> = (0..ncols).map(|j| j < art0).collect();
    if !t.minimize(&cost, &allowed) {
        return LpOutcome::Unbounded;
    }
    let mut x = DVector::zeros(d);
    for (r, &bcol) in t.basis.iter().enumerate() {
        if bcol < d {
            x[bcol] += t.rhs[r];
        } else if bcol < 2 * d {
            x[bcol - d] -= t.rhs[r];
        }
    }
    LpOutcome::Optimal { value: c.dot(&x), x }
}

/// Phase-1 feasibility of `A x ≤ b`.
pub fn feasible(a: &DMatrix<f64>, b: &DVector<f64>) -> bool {
    !matches!(maximize(&DVector::zeros(a.ncols()), a, b), LpOutcome::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_maximum() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let c = DVector::from_vec(vec![1.0, -1.0]);
        match maximize(&c, &a, &b) {
            LpOutcome::Optimal { x, value } => {
                assert!((value - 5.0).abs() < 1e-12);
                assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] + 4.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_rhs_needs_phase_one() {
        // 1 ≤ x ≤ 2, maximize −x → x = 1
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![2.0, -1.0]);
        match maximize(&DVector::from_vec(vec![-1.0]), &a, &b) {
            LpOutcome::Optimal { x, .. } => assert!((x[0] - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_and_unbounded() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        assert!(!feasible(&a, &DVector::from_vec(vec![-1.0, -1.0])));
        let half = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert_eq!(
            maximize(&DVector::from_vec(vec![-1.0]), &half, &DVector::from_vec(vec![0.0])),
            LpOutcome::Unbounded
        );
    }
}
