use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use super::lp::{self, LpOutcome};
use super::SetError;

/// Tolerance for membership, containment and redundancy tests.
pub const SET_TOL: f64 = 1e-9;

/// Halfspace representation `{x : A x ≤ b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeRepr", into = "PolytopeRepr")]
pub struct PolytopeH {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

/// Row-major serialized form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolytopeRepr {
    pub rows: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl TryFrom<PolytopeRepr> for PolytopeH {
    type Error = SetError;

    fn try_from(r: PolytopeRepr) -> Result<Self, SetError> {
        let q = r.rows.len();
        let d = r.rows.first().map_or(0, Vec::len);
        if r.rows.iter().any(|row| row.len() != d) {
            return Err(SetError::Dimension("ragged polytope rows".into()));
        }
        let a = DMatrix::from_fn(q, d, |i, j| r.rows[i][j]);
        PolytopeH::new(a, DVector::from_vec(r.b))
    }
}

impl From<PolytopeH> for PolytopeRepr {
    fn from(p: PolytopeH) -> Self {
        Self {
            rows: p.a.row_iter().map(|r| r.iter().copied().collect()).collect(),
            b: p.b.iter().copied().collect(),
        }
    }
}

impl PolytopeH {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, SetError> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(SetError::Dimension(
                "polytope needs at least one row and one column".into(),
            ));
        }
        if a.nrows() != b.len() {
            return Err(SetError::Dimension(format!(
                "{} rows but {} offsets",
                a.nrows(),
                b.len()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| v.is_nan()) {
            return Err(SetError::NonFinite);
        }
        Ok(Self { a, b })
    }

    /// `[lo, hi]` on the real line.
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::new(
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![hi, -lo]),
        )
        .expect("interval is well formed")
    }

    /// Axis-aligned box `lo ≤ x ≤ hi`.
    pub fn axis_box(lo: &[f64], hi: &[f64]) -> Self {
        let d = lo.len();
        assert_eq!(d, hi.len());
        let mut a = DMatrix::zeros(2 * d, d);
        let mut b = DVector::zeros(2 * d);
        for i in 0..d {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = hi[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lo[i];
        }
        Self::new(a, b).expect("box is well formed")
    }

    /// The whole space, as the single trivially satisfied row `0ᵀx ≤ 1`.
    pub fn full_space(dim: usize) -> Self {
        Self::new(DMatrix::zeros(1, dim), DVector::from_element(1, 1.0)).expect("dim > 0")
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.a.row(i).into_owned()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        let ax = &self.a * x;
        ax.iter().zip(self.b.iter()).all(|(l, r)| *l <= r + SET_TOL)
    }

    /// Largest violation `max_i (a_iᵀx − b_i)`, zero when inside.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        ax.iter().zip(self.b.iter()).fold(0.0f64, |m, (l, r)| m.max(l - r))
    }

    pub fn is_empty(&self) -> bool {
        !lp::feasible(&self.a, &self.b)
    }

    /// True when every row is `0ᵀx ≤ c` with `c ≥ 0`.
    pub fn is_full_space(&self) -> bool {
        (0..self.num_rows()).all(|i| self.a.row(i).amax() == 0.0 && self.b[i] >= 0.0)
    }

    /// `sup { dᵀx : x ∈ P }`; `None` when unbounded, `Err` when empty.
    pub fn support(&self, dir: &DVector<f64>) -> Result<Option<f64>, SetError> {
        match lp::maximize(dir, &self.a, &self.b) {
            LpOutcome::Optimal { value, .. } => Ok(Some(value)),
            LpOutcome::Unbounded => Ok(None),
            LpOutcome::Infeasible => Err(SetError::Empty),
        }
    }

    pub fn intersect(&self, other: &Self) -> Result<Self, SetError> {
        if self.dim() != other.dim() {
            return Err(SetError::Dimension(format!("{} vs {}", self.dim(), other.dim())));
        }
        let q = self.num_rows() + other.num_rows();
        let mut a = DMatrix::zeros(q, self.dim());
        a.rows_mut(0, self.num_rows()).copy_from(&self.a);
        a.rows_mut(self.num_rows(), other.num_rows()).copy_from(&other.a);
        let mut b = DVector::zeros(q);
        b.rows_mut(0, self.num_rows()).copy_from(&self.b);
        b.rows_mut(self.num_rows(), other.num_rows()).copy_from(&other.b);
        Self::new(a, b)
    }

    /// `{x : M x ∈ self}` for `M` of shape `self.dim() × k`.
    pub fn preimage(&self, m: &DMatrix<f64>) -> Result<Self, SetError> {
        if m.nrows() != self.dim() {
            return Err(SetError::Dimension(format!(
                "map has {} rows, set dimension {}",
                m.nrows(),
                self.dim()
            )));
        }
        Self::new(&self.a * m, self.b.clone())
    }

    /// `self ⊇ other`, checked by one LP per row of `self`.
    pub fn contains_set(&self, other: &Self) -> bool {
        if other.is_empty() {
            return true;
        }
        (0..self.num_rows()).all(|i| {
            let dir = self.a.row(i).transpose();
            match other.support(&dir) {
                Ok(Some(v)) => v <= self.b[i] + SET_TOL * (1.0 + self.b[i].abs()),
                Ok(None) => false,
                Err(_) => true,
            }
        })
    }

    /// Mutual containment.
    pub fn set_eq(&self, other: &Self) -> bool {
        self.contains_set(other) && other.contains_set(self)
    }

    /// Drops rows implied by the others. Empty sets are returned unchanged.
    pub fn remove_redundant(&self) -> Self {
        if self.is_empty() {
            return self.clone();
        }
        let q = self.num_rows();
        let mut keep = vec![true; q];
        for i in 0..q {
            let ai = self.a.row(i);
            let norm = ai.norm();
            if norm == 0.0 {
                if self.b[i] >= 0.0 {
                    keep[i] = false;
                }
                continue;
            }
            // other kept rows plus a relaxed copy of row i keep the LP bounded
            let others: Vec<usize> = (0..q).filter(|&j| j != i && keep[j]).collect();
            let mut a = DMatrix::zeros(others.len() + 1, self.dim());
            let mut b = DVector::zeros(others.len() + 1);
            for (k, &j) in others.iter().enumerate() {
                a.set_row(k, &self.a.row(j));
                b[k] = self.b[j];
            }
            a.set_row(others.len(), &ai);
            b[others.len()] = self.b[i] + 1.0;
            if let LpOutcome::Optimal { value, .. } = lp::maximize(&ai.transpose(), &a, &b) {
                if value <= self.b[i] + SET_TOL * norm.max(1.0) {
                    keep[i] = false;
                }
            }
        }
        let rows: Vec<usize> = (0..q).filter(|&i| keep[i]).collect();
        if rows.is_empty() {
            return Self::full_space(self.dim());
        }
        let mut a = DMatrix::zeros(rows.len(), self.dim());
        let mut b = DVector::zeros(rows.len());
        for (k, &i) in rows.iter().enumerate() {
            a.set_row(k, &self.a.row(i));
            b[k] = self.b[i];
        }
        Self { a, b }
    }

    /// Brute-force vertex enumeration: every nonsingular choice of `dim` rows
    /// whose intersection point satisfies all rows. Meant for low dimensions.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let d = self.dim();
        let q = self.num_rows();
        let mut out: Vec<DVector<f64>> = Vec::new();
        let mut idx: Vec<usize> = (0..d).collect();
        if q < d {
            return out;
        }
        loop {
            let sub = DMatrix::from_fn(d, d, |r, c| self.a[(idx[r], c)]);
            let rhs = DVector::from_fn(d, |r, _| self.b[idx[r]]);
            if let Some(x) = sub.lu().solve(&rhs) {
                if x.iter().all(|v| v.is_finite()) && self.contains(&x) && !out.iter().any(|v| (v - &x).amax() < 1e-9) {
                    out.push(x);
                }
            }
            // next combination
            let mut k = d;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                if idx[k] < q - d + k {
                    idx[k] += 1;
                    for t in k + 1..d {
                        idx[t] = idx[t - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    /// Interval bounds `[lo, hi]` of a one-dimensional set.
    pub fn interval_bounds(&self) -> Option<(f64, f64)> {
        if self.dim() != 1 || self.is_empty() {
            return None;
        }
        let one = DVector::from_element(1, 1.0);
        let hi = self.support(&one).ok()?.unwrap_or(f64::INFINITY);
        let lo = self.support(&(-one)).ok()?.map_or(f64::NEG_INFINITY, |v| -v);
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_membership() {
        let p = PolytopeH::interval(-2.0, 2.0);
        assert!(p.contains(&DVector::from_element(1, 2.0)));
        assert!(!p.contains(&DVector::from_element(1, 2.0 + 1e-6)));
    }

    #[test]
    fn emptiness() {
        let p = PolytopeH::new(
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
        )
        .unwrap();
        assert!(p.is_empty());
        assert!(!PolytopeH::interval(-1.712, 1.712).is_empty());
    }

    #[test]
    fn redundancy_pruning_keeps_tightest_rows() {
        let p = PolytopeH::interval(-2.0, 2.0)
            .intersect(&PolytopeH::interval(-1.5, 3.0))
            .unwrap()
            .remove_redundant();
        assert_eq!(p.num_rows(), 2);
        assert_eq!(p.interval_bounds(), Some((-1.5, 2.0)));
    }

    #[test]
    fn pruning_full_space() {
        let p = PolytopeH::new(DMatrix::zeros(2, 1), DVector::from_vec(vec![0.5, 0.033])).unwrap();
        let r = p.remove_redundant();
        assert!(r.is_full_space());
        assert_eq!(r.num_rows(), 1);
    }

    #[test]
    fn square_vertices() {
        let p = PolytopeH::axis_box(&[-1.0, -2.0], &[1.0, 2.0]);
        assert_eq!(p.vertices().len(), 4);
    }

    #[test]
    fn serde_repr_round_trip() {
        let p = PolytopeH::axis_box(&[-1.0, -2.0], &[1.0, 2.5]);
        let text = toml::to_string(&std::collections::BTreeMap::from([("p", p.clone())])).unwrap();
        let back: std::collections::BTreeMap<String, PolytopeH> = toml::from_str(&text).unwrap();
        assert_eq!(back["p"], p);
    }
}
