use nalgebra::{DMatrix, DVector};

use super::MarketModel;
use crate::tree::{EventTree, RandomVariable};

/// Singular values below `RANK_TOL * sigma_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of the one-period payoff span over the children of one node.
///
/// Columns of `vectors` are orthonormal under the conditional probabilities:
/// `sum_c q_c e_ci e_cj = delta_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisBlock {
    pub parent: usize,
    pub children: Vec<usize>,
    pub cond_probs: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Per-level, per-node orthonormal bases of the payoff spaces `L_k`, `k >= 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PayoffSpaceBasis {
    levels: Vec<Vec<BasisBlock>>,
}

impl BasisBlock {
    pub fn rank(&self) -> usize {
        self.vectors.ncols()
    }

    /// Weighted projection of child values onto the block span.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let n = self.children.len();
        let mut out = vec![0.0; n];
        for j in 0..self.rank() {
            let coef: f64 = (0..n).map(|c| self.cond_probs[c] * y[c] * self.vectors[(c, j)]).sum();
            for (c, o) in out.iter_mut().enumerate() {
                *o += coef * self.vectors[(c, j)];
            }
        }
        out
    }

    /// The `children x children` projection matrix acting on child values.
    pub fn projector(&self) -> DMatrix<f64> {
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&self.cond_probs));
        &self.vectors * self.vectors.transpose() * q
    }
}

impl PayoffSpaceBasis {
    pub(super) fn build(m: &MarketModel) -> Self {
        let tree = m.tree();
        let levels = (1..=tree.horizon())
            .map(|k| (0..tree.n_atoms(k - 1)).map(|a| Self::block(tree, k, a, &m.node_payoffs(k, a))).collect())
            .collect();
        PayoffSpaceBasis { levels }
    }

    fn block(tree: &EventTree, k: usize, parent: usize, x: &DMatrix<f64>) -> BasisBlock {
        let children = tree.children(k - 1, parent).to_vec();
        let q: Vec<f64> = children.iter().map(|&c| tree.cond_prob(k, c)).collect();
        let sq: Vec<f64> = q.iter().map(|v| v.sqrt()).collect();
        let weighted = DMatrix::from_fn(x.nrows(), x.ncols(), |r, s| sq[r] * x[(r, s)]);
        let svd = weighted.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> =
            (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > RANK_TOL * smax).collect();
        let vectors = DMatrix::from_fn(children.len(), keep.len(), |r, j| u[(r, keep[j])] / sq[r]);
        BasisBlock { parent, children, cond_probs: q, vectors }
    }

    /// Blocks of level `k >= 1`, one per level-`k-1` atom.
    pub fn blocks(&self, k: usize) -> &[BasisBlock] {
        &self.levels[k - 1]
    }

    pub fn block_at(&self, k: usize, parent: usize) -> &BasisBlock {
        &self.levels[k - 1][parent]
    }

    /// `dim L_k`.
    pub fn rank(&self, k: usize) -> usize {
        self.levels[k - 1].iter().map(BasisBlock::rank).sum()
    }

    /// `P^k x`. Components of `x` finer than level `k` are averaged first.
    pub fn project(&self, tree: &EventTree, x: &RandomVariable, k: usize) -> RandomVariable {
        if k == 0 {
            return tree.condexp(x, 0);
        }
        let y = tree.condexp(x, k);
        let mut out = vec![0.0; tree.n_atoms(k)];
        for b in &self.levels[k - 1] {
            let local: Vec<f64> = b.children.iter().map(|&c| y.value(c)).collect();
            for (c, v) in b.children.iter().zip(b.project(&local)) {
                out[*c] = v;
            }
        }
        RandomVariable::new(k, out)
    }

    /// Globally orthonormal basis of `L_k` under the tree measure.
    pub fn orthonormal_basis(&self, tree: &EventTree, k: usize) -> Vec<RandomVariable> {
        let mut out = Vec::new();
        for b in &self.levels[k - 1] {
            let w = tree.atom_prob(k - 1, b.parent).sqrt();
            for j in 0..b.rank() {
                let mut v = vec![0.0; tree.n_atoms(k)];
                for (r, &c) in b.children.iter().enumerate() {
                    v[c] = b.vectors[(r, j)] / w;
                }
                out.push(RandomVariable::new(k, v));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;

    #[test]
    fn complete_binomial_projects_identically() {
        let m = binomial(0.0, 1.0, 1.4, 0.7);
        assert_eq!(m.basis().rank(1), 2);
        let x = m.tree().indicator(1, 0);
        let p = m.project(&x, 1);
        assert!(p.max_abs_diff(&x) < 1e-14);
    }

    #[test]
    fn incomplete_basis_is_orthonormal() {
        let m = trinomial_incomplete();
        for k in 1..=2 {
            let e = m.basis().orthonormal_basis(m.tree(), k);
            assert_eq!(e.len(), m.basis().rank(k));
            for i in 0..e.len() {
                for j in 0..e.len() {
                    let ip = m.tree().inner(&e[i], &e[j]);
                    assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
        assert_eq!(m.basis().rank(1), 2);
        assert_eq!(m.basis().rank(2), 6);
    }

    #[test]
    fn payoffs_are_fixed_points() {
        let m = trinomial_incomplete();
        for k in 1..=2 {
            for s in 0..m.n_slots() {
                let x = m.payoff(k, s);
                assert!(m.project(&x, k).max_abs_diff(&x) < 1e-12);
            }
        }
    }
}
