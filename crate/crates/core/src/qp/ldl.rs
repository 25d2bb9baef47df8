//! Sparse LDLᵀ factorization for quasi-definite systems.
//!
//! Quasi-definite matrices `[[P + σI, Aᵀ], [A, −R]]` admit an LDLᵀ
//! factorization for every symmetric permutation, so no pivoting is done.
//! A greedy minimum-degree ordering keeps fill low; on scenario trees it
//! eliminates leaves first and produces no fill at all.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::sync::Mutex;

use super::sparse::CscMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LdlError {
    #[error("matrix is not square")]
    NotSquare,
    #[error("entry below the diagonal in upper-triangular input")]
    NotUpper,
    #[error("zero pivot at column {0}")]
    ZeroPivot(usize),
    #[error("sparsity pattern changed between factorizations")]
    PatternChanged,
}

/// Greedy minimum-degree ordering of the graph of a symmetric matrix given by
/// its upper triangle. Ties are broken by the lower index.
pub fn minimum_degree(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (r, c, _) in upper.iter() {
        if r != c {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<(Reverse<usize>, Reverse<usize>)> =
        (0..n).map(|v| (Reverse(adj[v].len()), Reverse(v))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((Reverse(deg), Reverse(v))) = heap.pop() {
        if eliminated[v] || adj[v].len() != deg {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            adj[u].remove(&v);
        }
        for (k, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[k + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            heap.push((Reverse(adj[u].len()), Reverse(u)));
        }
    }
    order
}

type CachedOrdering = (Vec<usize>, Vec<usize>, Vec<usize>);

/// Remembers the ordering of the last sparsity pattern seen, so repeated
/// solves of structurally identical problems skip the ordering step.
#[derive(Debug, Default)]
pub struct OrderingCache {
    last: Mutex<Option<CachedOrdering>>,
}

impl Clone for OrderingCache {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl OrderingCache {
    pub fn factor(&self, upper: &CscMatrix) -> Result<LdlFactor, LdlError> {
        if upper.nrows() != upper.ncols() {
            return Err(LdlError::NotSquare);
        }
        let cached = {
            let guard = self.last.lock().unwrap_or_else(|e| e.into_inner());
            guard
                .as_ref()
                .filter(|(cp, ri, _)| cp.as_slice() == upper.colptr() && ri.as_slice() == upper.rowind())
                .map(|(_, _, perm)| perm.clone())
        };
        let perm = match cached {
            Some(perm) => perm,
            None => {
                let perm = minimum_degree(upper);
                *self.last.lock().unwrap_or_else(|e| e.into_inner()) =
                    Some((upper.colptr().to_vec(), upper.rowind().to_vec(), perm.clone()));
                perm
            }
        };
        LdlFactor::with_ordering(upper, perm)
    }
}

/// Numeric LDLᵀ factor of `P K Pᵀ` together with the ordering `P`.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    etree: Vec<Option<usize>>,
    lnz: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    src_colptr: Vec<usize>,
    src_rowind: Vec<usize>,
    /// Position in `permuted` of each stored entry of the source matrix.
    map: Vec<usize>,
    permuted: CscMatrix,
}

impl LdlFactor {
    /// Orders, analyses and factors the symmetric matrix whose upper triangle
    /// (diagonal included, every diagonal entry stored) is `upper`.
    pub fn new(upper: &CscMatrix) -> Result<Self, LdlError> {
        if upper.nrows() != upper.ncols() {
            return Err(LdlError::NotSquare);
        }
        let perm = minimum_degree(upper);
        Self::with_ordering(upper, perm)
    }

    pub fn with_ordering(upper: &CscMatrix, perm: Vec<usize>) -> Result<Self, LdlError> {
        let n = upper.ncols();
        let mut pinv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }
        let permuted = permute_upper(upper, &pinv)?;
        let (etree, lnz) = elimination_tree(&permuted)?;
        let map = upper
            .iter()
            .map(|(r, c, _)| {
                let (pr, pc) = (pinv[r].min(pinv[c]), pinv[r].max(pinv[c]));
                let col = &permuted.rowind()[permuted.colptr()[pc]..permuted.colptr()[pc + 1]];
                permuted.colptr()[pc] + col.binary_search(&pr).expect("entry present")
            })
            .collect();
        let total: usize = lnz.iter().sum();
        let mut f = Self {
            n,
            perm,
            etree,
            lnz,
            lp: vec![0; n + 1],
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            src_colptr: upper.colptr().to_vec(),
            src_rowind: upper.rowind().to_vec(),
            map,
            permuted: CscMatrix::zeros(0, 0),
        };
        f.numeric(&permuted)?;
        f.permuted = permuted;
        Ok(f)
    }

    /// Refactors a matrix with the same sparsity pattern, reusing the ordering.
    pub fn refactor(&mut self, upper: &CscMatrix) -> Result<(), LdlError> {
        if upper.colptr() != self.src_colptr.as_slice() || upper.rowind() != self.src_rowind.as_slice() {
            return Err(LdlError::PatternChanged);
        }
        let mut permuted = std::mem::replace(&mut self.permuted, CscMatrix::zeros(0, 0));
        {
            let dst = permuted.values_mut();
            dst.fill(0.0);
            for (k, &v) in upper.values().iter().enumerate() {
                dst[self.map[k]] += v;
            }
        }
        let result = self.numeric(&permuted);
        self.permuted = permuted;
        result
    }

    /// The fill-reducing ordering in use.
    pub fn ordering(&self) -> &[usize] {
        &self.perm
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Diagonal of `D` in the permuted ordering.
    pub fn pivots(&self) -> &[f64] {
        &self.d
    }

    pub fn fill(&self) -> usize {
        self.lx.len()
    }

    fn numeric(&mut self, a: &CscMatrix) -> Result<(), LdlError> {
        let n = self.n;
        let (ap, ai, ax) = (a.colptr(), a.rowind(), a.values());
        self.lp[0] = 0;
        for i in 0..n {
            self.lp[i + 1] = self.lp[i] + self.lnz[i];
        }
        let mut marked = vec![false; n];
        let mut y = vec![0.0; n];
        let mut y_idx = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut lnext: Vec<usize> = self.lp[..n].to_vec();

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in ap[k]..ap[k + 1] {
                let b = ai[p];
                if b == k {
                    self.d[k] = ax[p];
                    continue;
                }
                y[b] = ax[p];
                if marked[b] {
                    continue;
                }
                marked[b] = true;
                stack[0] = b;
                let mut depth = 1;
                let mut next = self.etree[b];
                while let Some(nx) = next {
                    if nx >= k || marked[nx] {
                        break;
                    }
                    marked[nx] = true;
                    stack[depth] = nx;
                    depth += 1;
                    next = self.etree[nx];
                }
                while depth > 0 {
                    depth -= 1;
                    y_idx[nnz_y] = stack[depth];
                    nnz_y += 1;
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let end = lnext[c];
                let yc = y[c];
                for j in self.lp[c]..end {
                    y[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[end] = k;
                let l = yc * self.dinv[c];
                self.lx[end] = l;
                self.d[k] -= yc * l;
                lnext[c] += 1;
                y[c] = 0.0;
                marked[c] = false;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(LdlError::ZeroPivot(self.perm[k]));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// Solves `K x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..self.n {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let range = self.lp[i]..self.lp[i + 1];
            for (&r, &l) in self.li[range.clone()].iter().zip(&self.lx[range]) {
                x[r] -= l * xi;
            }
        }
        for (xi, di) in x.iter_mut().zip(&self.dinv) {
            *xi *= di;
        }
        for i in (0..self.n).rev() {
            let range = self.lp[i]..self.lp[i + 1];
            let acc: f64 = self.li[range.clone()]
                .iter()
                .zip(&self.lx[range])
                .map(|(&r, &l)| l * x[r])
                .sum();
            x[i] -= acc;
        }
        for (&p, xi) in self.perm.iter().zip(&x) {
            b[p] = *xi;
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `K_true x = b` with iterative refinement, where the factor holds
    /// a regularized approximation of `K_true` and `apply` evaluates `K_true·v`.
    pub fn solve_refined(&self, apply: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], steps: usize) -> Vec<f64> {
        let mut x = self.solve(b);
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for _ in 0..steps {
            let kx = apply(&x);
            let mut r: Vec<f64> = b.iter().zip(&kx).map(|(bi, ki)| bi - ki).collect();
            if super::sparse::inf_norm(&r) <= 1e-15 * scale {
                break;
            }
            self.solve_in_place(&mut r);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi += ri;
            }
        }
        x
    }
}

fn permute_upper(upper: &CscMatrix, pinv: &[usize]) -> Result<CscMatrix, LdlError> {
    let mut t = Vec::with_capacity(upper.nnz());
    for (r, c, v) in upper.iter() {
        if r > c {
            return Err(LdlError::NotUpper);
        }
        let (pr, pc) = (pinv[r], pinv[c]);
        t.push((pr.min(pc), pr.max(pc), v));
    }
    Ok(CscMatrix::from_triplets(upper.nrows(), upper.ncols(), &t))
}

fn elimination_tree(a: &CscMatrix) -> Result<(Vec<Option<usize>>, Vec<usize>), LdlError> {
    let n = a.ncols();
    let mut work = vec![usize::MAX; n];
    let mut lnz = vec![0usize; n];
    let mut etree: Vec<Option<usize>> = vec![None; n];
    for j in 0..n {
        work[j] = j;
        for p in a.colptr()[j]..a.colptr()[j + 1] {
            let mut i = a.rowind()[p];
            if i > j {
                return Err(LdlError::NotUpper);
            }
            while work[i] != j {
                if etree[i].is_none() {
                    etree[i] = Some(j);
                }
                lnz[i] += 1;
                work[i] = j;
                i = etree[i].expect("parent set above");
            }
        }
    }
    Ok((etree, lnz))
}

/// Upper triangle (diagonal included) of a symmetric CSC matrix.
pub fn upper_triangle(m: &CscMatrix) -> CscMatrix {
    let t: Vec<_> = m.iter().filter(|&(r, c, _)| r <= c).collect();
    CscMatrix::from_triplets(m.nrows(), m.ncols(), &t)
}
