//! Finite filtered probability spaces.
//!
//! A tree is a sequence of nested partitions of a finite set of leaves.
//! Level `k` atoms are the cells of the `k`-th partition; level 0 is the
//! trivial partition and level `T` consists of singletons. A random variable
//! measurable at level `k` is stored as one value per level-`k` atom.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability sums are accepted and renormalized within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Serialized tree: `levels[k][a]` lists the leaves of atom `a` at level `k`,
/// `probs[leaf]` is the probability of each leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub levels: Vec<Vec<Vec<usize>>>,
    pub probs: Vec<f64>,
}

/// A finite filtration `G_0 ⊆ ... ⊆ G_T` with atom probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTree {
    horizon: usize,
    atoms: Vec<Vec<Vec<usize>>>,
    leaf_atom: Vec<Vec<usize>>,
    parent: Vec<Vec<usize>>,
    children: Vec<Vec<Vec<usize>>>,
    probs: Vec<f64>,
    atom_probs: Vec<Vec<f64>>,
}

/// A value per atom of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomVariable {
    level: usize,
    values: Vec<f64>,
}

/// One random variable per level `0..=T`, component `k` measurable at level `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    components: Vec<RandomVariable>,
}

impl EventTree {
    /// Validates nesting, singleton leaves and probabilities, then indexes
    /// parents and children.
    pub fn from_spec(spec: &TreeSpec) -> Result<Self> {
        if spec.horizon < 1 {
            return Err(Error::InvalidTree("horizon must be at least 1".into()));
        }
        Self::build(spec.horizon, spec.levels.clone(), spec.probs.clone())
    }

    pub fn to_spec(&self) -> TreeSpec {
        TreeSpec {
            horizon: self.horizon,
            levels: self.atoms.clone(),
            probs: self.probs.clone(),
        }
    }

    /// Builds a tree from conditional branching probabilities:
    /// `cond[k][a]` holds the conditional probabilities of the children of
    /// atom `a` at level `k`. Leaves are numbered depth first.
    pub fn from_conditional(cond: &[Vec<Vec<f64>>]) -> Result<Self> {
        let horizon = cond.len();
        if horizon == 0 {
            return Err(Error::InvalidTree("horizon must be at least 1".into()));
        }
        // Path probability and child lists per level.
        let mut level_probs = vec![vec![1.0]];
        let mut kids: Vec<Vec<Vec<usize>>> = Vec::with_capacity(horizon);
        for (k, nodes) in cond.iter().enumerate() {
            if nodes.len() != level_probs[k].len() {
                return Err(Error::InvalidTree(format!(
                    "level {k} has {} atoms but {} branching rows",
                    level_probs[k].len(),
                    nodes.len()
                )));
            }
            let mut next = Vec::new();
            let mut level_kids = Vec::with_capacity(nodes.len());
            for (a, q) in nodes.iter().enumerate() {
                if q.is_empty() {
                    return Err(Error::InvalidTree(format!("atom {a} at level {k} has no children")));
                }
                let s: f64 = q.iter().sum();
                if q.iter().any(|&x| !(x > 0.0) || !x.is_finite()) || (s - 1.0).abs() > PROB_SUM_TOL {
                    return Err(Error::BadProbability(format!(
                        "conditional probabilities at level {k}, atom {a} must be positive and sum to 1"
                    )));
                }
                let mut ids = Vec::with_capacity(q.len());
                for &x in q {
                    ids.push(next.len());
                    next.push(level_probs[k][a] * x / s);
                }
                level_kids.push(ids);
            }
            kids.push(level_kids);
            level_probs.push(next);
        }
        // Leaves of each atom follow from descending the child lists.
        let mut atoms: Vec<Vec<Vec<usize>>> = vec![Vec::new(); horizon + 1];
        atoms[horizon] = (0..level_probs[horizon].len()).map(|i| vec![i]).collect();
        for k in (0..horizon).rev() {
            atoms[k] = kids[k]
                .iter()
                .map(|ch| ch.iter().flat_map(|&c| atoms[k + 1][c].iter().copied()).collect())
                .collect();
        }
        Self::build(horizon, atoms, level_probs[horizon].clone())
    }

    /// Every node has `branching` equally likely children.
    pub fn regular(horizon: usize, branching: usize) -> Result<Self> {
        let mut cond = Vec::with_capacity(horizon);
        let mut n = 1usize;
        for _ in 0..horizon {
            cond.push(vec![vec![1.0 / branching as f64; branching]; n]);
            n *= branching;
        }
        Self::from_conditional(&cond)
    }

    fn build(horizon: usize, atoms: Vec<Vec<Vec<usize>>>, probs: Vec<f64>) -> Result<Self> {
        if atoms.len() != horizon + 1 {
            return Err(Error::InvalidTree(format!(
                "expected {} levels, found {}",
                horizon + 1,
                atoms.len()
            )));
        }
        let n = probs.len();
        if n == 0 {
            return Err(Error::InvalidTree("no leaves".into()));
        }
        if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::BadProbability("leaf probabilities must be positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::BadProbability(format!("leaf probabilities sum to {total}")));
        }
        // Sums already equal to one up to rounding are kept bit for bit, so
        // serialized trees reload unchanged.
        let probs: Vec<f64> = if (total - 1.0).abs() <= 1e-14 { probs } else { probs.iter().map(|p| p / total).collect() };

        let mut leaf_atom = vec![vec![usize::MAX; n]; horizon + 1];
        for (k, level) in atoms.iter().enumerate() {
            for (a, leaves) in level.iter().enumerate() {
                if leaves.is_empty() {
                    return Err(Error::InvalidTree(format!("atom {a} at level {k} is empty")));
                }
                for &l in leaves {
                    if l >= n {
                        return Err(Error::InvalidTree(format!("leaf {l} out of range at level {k}")));
                    }
                    if leaf_atom[k][l] != usize::MAX {
                        return Err(Error::InvalidTree(format!("leaf {l} appears twice at level {k}")));
                    }
                    leaf_atom[k][l] = a;
                }
            }
            if let Some(l) = leaf_atom[k].iter().position(|&a| a == usize::MAX) {
                return Err(Error::InvalidTree(format!("leaf {l} missing at level {k}")));
            }
        }
        if atoms[0].len() != 1 {
            return Err(Error::InvalidTree("level 0 must be the trivial partition".into()));
        }
        if atoms[horizon].iter().any(|a| a.len() != 1) {
            return Err(Error::InvalidTree("level T atoms must be singletons".into()));
        }

        let mut parent = vec![Vec::new(); horizon + 1];
        let mut children = vec![Vec::new(); horizon + 1];
        for k in 1..=horizon {
            let mut par = Vec::with_capacity(atoms[k].len());
            let mut ch = vec![Vec::new(); atoms[k - 1].len()];
            for (a, leaves) in atoms[k].iter().enumerate() {
                let p = leaf_atom[k - 1][leaves[0]];
                if leaves.iter().any(|&l| leaf_atom[k - 1][l] != p) {
                    return Err(Error::NonNested { level: k - 1, next: k, atom: a });
                }
                par.push(p);
                ch[p].push(a);
            }
            parent[k] = par;
            children[k - 1] = ch;
        }
        children[horizon] = vec![Vec::new(); atoms[horizon].len()];

        let atom_probs = atoms
            .iter()
            .map(|level| level.iter().map(|ls| ls.iter().map(|&l| probs[l]).sum()).collect())
            .collect();
        Ok(EventTree { horizon, atoms, leaf_atom, parent, children, probs, atom_probs })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_atoms(&self, level: usize) -> usize {
        self.atoms[level].len()
    }

    pub fn n_leaves(&self) -> usize {
        self.probs.len()
    }

    pub fn leaves(&self, level: usize, atom: usize) -> &[usize] {
        &self.atoms[level][atom]
    }

    pub fn leaf_probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn atom_prob(&self, level: usize, atom: usize) -> f64 {
        self.atom_probs[level][atom]
    }

    pub fn atom_probs(&self, level: usize) -> &[f64] {
        &self.atom_probs[level]
    }

    /// Atom at level `level` containing `leaf`.
    pub fn atom_of_leaf(&self, level: usize, leaf: usize) -> usize {
        self.leaf_atom[level][leaf]
    }

    pub fn parent(&self, level: usize, atom: usize) -> usize {
        self.parent[level][atom]
    }

    pub fn children(&self, level: usize, atom: usize) -> &[usize] {
        &self.children[level][atom]
    }

    /// Conditional probability of a level-`level` atom given its parent.
    pub fn cond_prob(&self, level: usize, atom: usize) -> f64 {
        let p = self.parent[level][atom];
        self.atom_probs[level][atom] / self.atom_probs[level - 1][p]
    }

    /// The level-`to` atom containing level-`level` atom `atom` (`to <= level`).
    pub fn ancestor(&self, level: usize, atom: usize, to: usize) -> usize {
        debug_assert!(to <= level);
        self.leaf_atom[to][self.atoms[level][atom][0]]
    }

    /// Level-`to` atoms contained in level-`level` atom `atom` (`to >= level`).
    pub fn descendants(&self, level: usize, atom: usize, to: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.atoms[level][atom].iter().map(|&l| self.leaf_atom[to][l]).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Indicator of a level-`level` atom, as a random variable at that level.
    pub fn indicator(&self, level: usize, atom: usize) -> RandomVariable {
        let mut v = vec![0.0; self.n_atoms(level)];
        v[atom] = 1.0;
        RandomVariable::new(level, v)
    }

    pub fn constant(&self, level: usize, c: f64) -> RandomVariable {
        RandomVariable::new(level, vec![c; self.n_atoms(level)])
    }

    pub fn check(&self, x: &RandomVariable) -> Result<()> {
        if x.level > self.horizon || x.values.len() != self.n_atoms(x.level) {
            return Err(Error::InvalidTree(format!(
                "random variable with {} values does not fit level {}",
                x.values.len(),
                x.level
            )));
        }
        Ok(())
    }

    /// Re-expresses `x` at a finer level `to >= x.level()`.
    pub fn lift(&self, x: &RandomVariable, to: usize) -> RandomVariable {
        assert!(to >= x.level, "cannot lift level {} to coarser level {to}", x.level);
        if to == x.level {
            return x.clone();
        }
        let values = (0..self.n_atoms(to)).map(|b| x.values[self.ancestor(to, b, x.level)]).collect();
        RandomVariable::new(to, values)
    }

    /// `E[x | G_k]` for `k <= x.level()`; for `k > x.level()` this is `x` lifted.
    pub fn condexp(&self, x: &RandomVariable, k: usize) -> RandomVariable {
        if k >= x.level {
            return self.lift(x, k);
        }
        let m = x.level;
        let mut acc = vec![0.0; self.n_atoms(k)];
        for (b, &v) in x.values.iter().enumerate() {
            acc[self.ancestor(m, b, k)] += self.atom_probs[m][b] * v;
        }
        for (a, s) in acc.iter_mut().enumerate() {
            *s /= self.atom_probs[k][a];
        }
        RandomVariable::new(k, acc)
    }

    pub fn expectation(&self, x: &RandomVariable) -> f64 {
        self.condexp(x, 0).values[0]
    }

    /// `E[x y]`, evaluated at the finer of the two levels.
    pub fn inner(&self, x: &RandomVariable, y: &RandomVariable) -> f64 {
        let m = x.level.max(y.level);
        let (x, y) = (self.lift(x, m), self.lift(y, m));
        x.values.iter().zip(&y.values).zip(&self.atom_probs[m]).map(|((a, b), p)| a * b * p).sum()
    }

    pub fn norm(&self, x: &RandomVariable) -> f64 {
        self.inner(x, x).sqrt()
    }

    /// Pointwise combination after lifting both operands to the finer level.
    pub fn zip(&self, x: &RandomVariable, y: &RandomVariable, f: impl Fn(f64, f64) -> f64) -> RandomVariable {
        let m = x.level.max(y.level);
        let (x, y) = (self.lift(x, m), self.lift(y, m));
        RandomVariable::new(m, x.values.iter().zip(&y.values).map(|(&a, &b)| f(a, b)).collect())
    }

    /// The subtree rooted at atom `atom` of level `level`, with conditional
    /// probabilities. `map[j][b]` is the original level-`level + j` atom of
    /// new atom `b`. A root at level `T` gives a horizon-0 tree.
    pub fn subtree(&self, level: usize, atom: usize) -> (EventTree, Vec<Vec<usize>>) {
        let horizon = self.horizon - level;
        let mut map = vec![vec![atom]];
        for j in 1..=horizon {
            let next: Vec<usize> =
                map[j - 1].iter().flat_map(|&a| self.children[level + j - 1][a].iter().copied()).collect();
            map.push(next);
        }
        // Leaves of the subtree are its level-`horizon` atoms in order.
        let leaf_of: Vec<usize> = map[horizon].clone();
        let root_p = self.atom_probs[level][atom];
        let probs: Vec<f64> = leaf_of.iter().map(|&b| self.atom_probs[self.horizon][b] / root_p).collect();
        let mut atoms = Vec::with_capacity(horizon + 1);
        for j in 0..=horizon {
            let level_atoms: Vec<Vec<usize>> = map[j]
                .iter()
                .map(|&a| {
                    let mut ls: Vec<usize> = leaf_of
                        .iter()
                        .enumerate()
                        .filter(|(_, &b)| self.ancestor(self.horizon, b, level + j) == a)
                        .map(|(i, _)| i)
                        .collect();
                    ls.sort_unstable();
                    ls
                })
                .collect();
            atoms.push(level_atoms);
        }
        let total: f64 = probs.iter().sum();
        let probs = probs.iter().map(|p| p / total).collect();
        let tree = Self::build(horizon, atoms, probs).expect("subtree of a valid tree is valid");
        (tree, map)
    }
}

impl RandomVariable {
    pub fn new(level: usize, values: Vec<f64>) -> Self {
        RandomVariable { level, values }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, atom: usize) -> f64 {
        self.values[atom]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RandomVariable {
        RandomVariable::new(self.level, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, s: f64) -> RandomVariable {
        self.map(|v| v * s)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute pointwise difference; both must share a level.
    pub fn max_abs_diff(&self, other: &RandomVariable) -> f64 {
        assert_eq!(self.level, other.level, "comparing random variables at different levels");
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl AdaptedProcess {
    /// Component `k` must live at level `k` and match the tree's atom count.
    pub fn new(tree: &EventTree, components: Vec<RandomVariable>) -> Result<Self> {
        if components.len() != tree.horizon() + 1 {
            return Err(Error::InvalidTree(format!(
                "process has {} components, expected {}",
                components.len(),
                tree.horizon() + 1
            )));
        }
        for (k, c) in components.iter().enumerate() {
            if c.level != k {
                return Err(Error::LevelMismatch { expected: k, found: c.level });
            }
            tree.check(c)?;
        }
        Ok(AdaptedProcess { components })
    }

    /// Builds from raw per-level arrays.
    pub fn from_levels(tree: &EventTree, values: Vec<Vec<f64>>) -> Result<Self> {
        let comps = values.into_iter().enumerate().map(|(k, v)| RandomVariable::new(k, v)).collect();
        Self::new(tree, comps)
    }

    pub fn zeros(tree: &EventTree) -> Self {
        Self::constant(tree, 0.0)
    }

    pub fn constant(tree: &EventTree, c: f64) -> Self {
        AdaptedProcess { components: (0..=tree.horizon()).map(|k| tree.constant(k, c)).collect() }
    }

    pub fn horizon(&self) -> usize {
        self.components.len() - 1
    }

    pub fn at(&self, k: usize) -> &RandomVariable {
        &self.components[k]
    }

    pub fn at_mut(&mut self, k: usize) -> &mut RandomVariable {
        &mut self.components[k]
    }

    pub fn components(&self) -> &[RandomVariable] {
        &self.components
    }

    pub fn to_levels(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.values.clone()).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> AdaptedProcess {
        AdaptedProcess { components: self.components.iter().map(|c| c.map(&f)).collect() }
    }

    /// Largest absolute difference over all periods and atoms.
    pub fn max_abs_diff(&self, other: &AdaptedProcess) -> f64 {
        self.components.iter().zip(&other.components).fold(0.0, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }

    /// Restriction to the subtree returned by [`EventTree::subtree`].
    pub fn restrict(&self, map: &[Vec<usize>], level: usize) -> AdaptedProcess {
        AdaptedProcess {
            components: map
                .iter()
                .enumerate()
                .map(|(j, atoms)| RandomVariable::new(j, atoms.iter().map(|&a| self.components[level + j].values[a]).collect()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_period() -> EventTree {
        EventTree::from_conditional(&[vec![vec![0.3, 0.7]], vec![vec![0.5, 0.5], vec![0.2, 0.3, 0.5]]]).unwrap()
    }

    #[test]
    fn conditional_builder_indexes_parents_and_children() {
        let t = two_period();
        assert_eq!(t.horizon(), 2);
        assert_eq!(t.n_atoms(1), 2);
        assert_eq!(t.n_atoms(2), 5);
        assert_eq!(t.children(1, 1), &[2, 3, 4]);
        assert_eq!(t.parent(2, 3), 1);
        assert!((t.atom_prob(2, 3) - 0.7 * 0.3).abs() < 1e-15);
        assert!((t.cond_prob(2, 4) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn condexp_of_coin_flip_is_half() {
        let t = EventTree::regular(1, 2).unwrap();
        let x = RandomVariable::new(1, vec![1.0, 0.0]);
        assert_eq!(t.condexp(&x, 0).values(), &[0.5]);
    }

    #[test]
    fn tower_property_holds() {
        let t = two_period();
        let x = RandomVariable::new(2, vec![1.0, -2.0, 3.5, 0.25, 7.0]);
        let direct = t.condexp(&x, 0);
        let nested = t.condexp(&t.condexp(&x, 1), 0);
        assert!((direct.value(0) - nested.value(0)).abs() < 1e-14);
    }

    #[test]
    fn spec_round_trip() {
        let t = two_period();
        let back = EventTree::from_spec(&t.to_spec()).unwrap();
        assert_eq!(t.to_spec().levels, back.to_spec().levels);
        for (a, b) in t.leaf_probs().iter().zip(back.leaf_probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_nested_levels() {
        let spec = TreeSpec {
            horizon: 2,
            levels: vec![vec![vec![0, 1, 2, 3]], vec![vec![0, 1], vec![2, 3]], vec![vec![0], vec![1], vec![2], vec![3]]],
            probs: vec![0.25; 4],
        };
        assert!(EventTree::from_spec(&spec).is_ok());
        let bad = TreeSpec {
            levels: vec![vec![vec![0, 1, 2, 3]], vec![vec![0, 1], vec![2, 3]], vec![vec![0], vec![1, 2], vec![3]]],
            ..spec.clone()
        };
        assert!(EventTree::from_spec(&bad).is_err());
        let mut mid = spec.clone();
        mid.horizon = 3;
        mid.levels.insert(2, vec![vec![0, 2], vec![1, 3]]);
        assert!(matches!(EventTree::from_spec(&mid), Err(Error::NonNested { .. })));
    }

    #[test]
    fn rejects_bad_probabilities() {
        let spec = TreeSpec {
            horizon: 1,
            levels: vec![vec![vec![0, 1]], vec![vec![0], vec![1]]],
            probs: vec![0.5, 0.6],
        };
        assert!(matches!(EventTree::from_spec(&spec), Err(Error::BadProbability(_))));
    }

    #[test]
    fn subtree_renormalizes() {
        let t = two_period();
        let (s, map) = t.subtree(1, 1);
        assert_eq!(s.horizon(), 1);
        assert_eq!(map[1], vec![2, 3, 4]);
        assert!((s.atom_prob(1, 0) - 0.2).abs() < 1e-14);
        let (leaf, _) = t.subtree(2, 3);
        assert_eq!(leaf.horizon(), 0);
        assert_eq!(leaf.n_atoms(0), 1);
    }

    #[test]
    fn inner_product_lifts_coarser_operand() {
        let t = two_period();
        let x = RandomVariable::new(1, vec![1.0, 2.0]);
        let y = RandomVariable::new(2, vec![1.0; 5]);
        assert!((t.inner(&x, &y) - (0.3 + 1.4)).abs() < 1e-14);
    }
}
