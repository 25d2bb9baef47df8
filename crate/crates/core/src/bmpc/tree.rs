//! L-ary scenario trees.
//!
//! Nodes are addressed as `(depth i, branch j)` with `j` one-based in
//! `1..=L^i`, and stored flat in breadth-first order.

use super::BmpcError;

/// Hard cap on state nodes, well beyond anything a dense horizon can solve.
pub const MAX_STATE_NODES: usize = 4_000_000;

/// Branch index at depth `i + 1` reached from `(i, j)` under disturbance `d`.
pub fn child_index(i: usize, j: usize, d: usize, l: usize) -> Result<usize, BmpcError> {
    let width = l
        .checked_pow(i as u32)
        .ok_or_else(|| BmpcError::Index(format!("L^{i} overflows")))?;
    if l == 0 || j == 0 || j > width {
        return Err(BmpcError::Index(format!("branch {j} outside 1..={width} at depth {i}")));
    }
    if d == 0 || d > l {
        return Err(BmpcError::Index(format!("disturbance {d} outside 1..={l}")));
    }
    Ok((j - 1) * l + d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchTree {
    weights: Vec<f64>,
    horizon: usize,
    offsets: Vec<usize>,
    path_probs: Vec<f64>,
}

impl BranchTree {
    pub fn new(weights: Vec<f64>, horizon: usize) -> Result<Self, BmpcError> {
        let l = weights.len();
        if l == 0 || horizon == 0 {
            return Err(BmpcError::Dimension("tree needs L ≥ 1 and N ≥ 1".into()));
        }
        let mut offsets = vec![0usize];
        let mut width = 1usize;
        for _ in 0..horizon {
            let next = offsets.last().unwrap() + width;
            width = width
                .checked_mul(l)
                .filter(|w| next + w <= MAX_STATE_NODES)
                .ok_or_else(|| {
                    BmpcError::Dimension(format!("tree with L={l}, N={horizon} exceeds {MAX_STATE_NODES} nodes"))
                })?;
            offsets.push(next);
        }
        offsets.push(offsets.last().unwrap() + width);

        let mut path_probs = vec![1.0];
        for i in 0..horizon {
            let (start, end) = (offsets[i], offsets[i + 1]);
            for s in start..end {
                let p = path_probs[s];
                path_probs.extend(weights.iter().map(|w| p * w));
            }
        }
        Ok(Self {
            weights,
            horizon,
            offsets,
            path_probs,
        })
    }

    pub fn branching(&self) -> usize {
        self.weights.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ_{i=0}^{N} L^i`
    pub fn state_node_count(&self) -> usize {
        self.offsets[self.horizon + 1]
    }

    /// `Σ_{i=0}^{N−1} L^i`; input node `(i, j)` shares the flat index of
    /// state node `(i, j)`.
    pub fn input_node_count(&self) -> usize {
        self.offsets[self.horizon]
    }

    pub fn width(&self, depth: usize) -> usize {
        self.offsets[depth + 1] - self.offsets[depth]
    }

    /// Flat index of the first node at `depth`.
    pub fn depth_offset(&self, depth: usize) -> usize {
        self.offsets[depth]
    }

    /// Flat index of `(i, j)`, `j` one-based.
    pub fn node(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.horizon && j >= 1 && j <= self.width(i));
        self.offsets[i] + j - 1
    }

    /// `(depth, branch)` of a flat index.
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let i = self.offsets.partition_point(|&o| o <= flat) - 1;
        (i, flat - self.offsets[i] + 1)
    }

    /// Flat index of the child of flat node `s` under disturbance `d` (one-based).
    pub fn child(&self, s: usize, d: usize) -> usize {
        let (i, j) = self.locate(s);
        self.offsets[i + 1] + (j - 1) * self.branching() + d - 1
    }

    pub fn path_probability(&self, flat: usize) -> f64 {
        self.path_probs[flat]
    }

    pub fn path_probabilities(&self) -> &[f64] {
        &self.path_probs
    }

    pub fn leaves(&self) -> std::ops::Range<usize> {
        self.offsets[self.horizon]..self.offsets[self.horizon + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn child_index_examples() {
        assert_eq!(child_index(0, 1, 2, 3).unwrap(), 2);
        assert_eq!(child_index(1, 2, 3, 3).unwrap(), 6);
        assert_eq!(child_index(2, 9, 1, 3).unwrap(), 25);
        assert!(child_index(1, 4, 1, 3).is_err());
        assert!(child_index(1, 1, 4, 3).is_err());
        assert!(child_index(0, 0, 1, 3).is_err());
    }

    #[test]
    fn counts_and_probabilities() {
        let t = BranchTree::new(vec![0.2, 0.3, 0.5], 5).unwrap();
        assert_eq!(t.state_node_count(), 364);
        assert_eq!(t.input_node_count(), 121);
        for i in 0..=5 {
            let s: f64 = (t.depth_offset(i)..t.depth_offset(i) + t.width(i))
                .map(|f| t.path_probability(f))
                .sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(t.locate(t.node(2, 9)), (2, 9));
        assert_eq!(t.child(t.node(1, 2), 3), t.node(2, 6));
        assert!((t.path_probability(t.node(2, 6)) - 0.3 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn refuses_huge_trees() {
        assert!(BranchTree::new(vec![0.5, 0.5], 40).is_err());
    }
}
