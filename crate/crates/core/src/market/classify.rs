//! Market classes with special structure.
//!
//! * complete: `L_k` is all of `L^2(G_k)`;
//! * idiosyncratic: a sub-filtration `F` carries a complete market and the
//!   remaining randomness is conditionally independent of it;
//! * type C: every `P^k` is a conditional expectation `E[. | H_k]`, which
//!   for an orthogonal projection is equivalent to preserving positivity.

use nalgebra::DMatrix;
use serde::Serialize;

use super::MarketModel;
use crate::error::{Error, Result};
use crate::tree::EventTree;

const CLASS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketClass {
    Complete,
    Idiosyncratic,
    TypeC,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub class: MarketClass,
    pub deterministic_interest: bool,
    /// `dim L_k` for `k = 1..=T`.
    pub ranks: Vec<usize>,
    /// For type C (and complete) markets: the atoms of `H_k` as groups of
    /// level-`k` atoms, for `k = 1..=T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_partition: Option<Vec<Vec<Vec<usize>>>>,
}

/// A candidate sub-filtration: `levels[k][a]` lists the leaves of atom `a` of `F_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtration {
    levels: Vec<Vec<Vec<usize>>>,
    leaf_atom: Vec<Vec<usize>>,
}

impl Filtration {
    /// Checks only that each level partitions the leaves; the structural
    /// clauses are checked by [`classify_market`].
    pub fn new(tree: &EventTree, levels: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        let n = tree.n_leaves();
        if levels.len() != tree.horizon() + 1 {
            return Err(Error::InvalidWitness {
                clause: "shape".into(),
                detail: format!("expected {} levels, found {}", tree.horizon() + 1, levels.len()),
            });
        }
        let mut leaf_atom = vec![vec![usize::MAX; n]; levels.len()];
        for (k, level) in levels.iter().enumerate() {
            for (a, leaves) in level.iter().enumerate() {
                for &l in leaves {
                    if l >= n || leaf_atom[k][l] != usize::MAX {
                        return Err(Error::InvalidWitness {
                            clause: "shape".into(),
                            detail: format!("level {k} is not a partition of the leaves"),
                        });
                    }
                    leaf_atom[k][l] = a;
                }
            }
            if leaf_atom[k].contains(&usize::MAX) {
                return Err(Error::InvalidWitness {
                    clause: "shape".into(),
                    detail: format!("level {k} does not cover every leaf"),
                });
            }
        }
        Ok(Filtration { levels, leaf_atom })
    }

    pub fn levels(&self) -> &[Vec<Vec<usize>>] {
        &self.levels
    }

    pub fn atom_of_leaf(&self, k: usize, leaf: usize) -> usize {
        self.leaf_atom[k][leaf]
    }

    /// `E[f | F_k]` for a function on leaves, returned on leaves.
    pub fn condexp_leaves(&self, probs: &[f64], f: &[f64], k: usize) -> Vec<f64> {
        let na = self.levels[k].len();
        let (mut num, mut den) = (vec![0.0; na], vec![0.0; na]);
        for (l, (&p, &v)) in probs.iter().zip(f).enumerate() {
            num[self.leaf_atom[k][l]] += p * v;
            den[self.leaf_atom[k][l]] += p;
        }
        (0..f.len()).map(|l| num[self.leaf_atom[k][l]] / den[self.leaf_atom[k][l]]).collect()
    }
}

/// Classifies the market, validating a supplied witness filtration first.
pub fn classify_market(m: &MarketModel) -> Result<Classification> {
    let tree = m.tree();
    let t = tree.horizon();
    let ranks: Vec<usize> = (1..=t).map(|k| m.basis().rank(k)).collect();
    let deterministic_interest = m.has_deterministic_rates();
    let complete = (1..=t).all(|k| ranks[k - 1] == tree.n_atoms(k));
    let h_partition = type_c_partition(m);
    let class = if complete {
        MarketClass::Complete
    } else if let Some(f) = m.filtration() {
        validate_witness(m, f)?;
        MarketClass::Idiosyncratic
    } else if h_partition.is_some() {
        MarketClass::TypeC
    } else {
        MarketClass::General
    };
    Ok(Classification { class, deterministic_interest, ranks, h_partition })
}

/// The `H_k` atoms if every node projector preserves positivity.
pub fn type_c_partition(m: &MarketModel) -> Option<Vec<Vec<Vec<usize>>>> {
    let tree = m.tree();
    let mut out = Vec::with_capacity(tree.horizon());
    for k in 1..=tree.horizon() {
        let mut groups = Vec::new();
        for b in m.basis().blocks(k) {
            let p = b.projector();
            if p.iter().any(|&v| v < -CLASS_TOL) {
                return None;
            }
            let comps = components(&p);
            // A positive projector must average uniformly within each group.
            for g in &comps {
                let qs: f64 = g.iter().map(|&c| b.cond_probs[c]).sum();
                for &r in g {
                    for &c in g {
                        if (p[(r, c)] - b.cond_probs[c] / qs).abs() > 1e-8 {
                            return None;
                        }
                    }
                }
            }
            groups.extend(comps.into_iter().map(|g| g.into_iter().map(|c| b.children[c]).collect::<Vec<_>>()));
        }
        out.push(groups);
    }
    Some(out)
}

fn components(p: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let mut label = vec![usize::MAX; n];
    let mut groups = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let mut stack = vec![s];
        let mut g = Vec::new();
        label[s] = id;
        while let Some(r) = stack.pop() {
            g.push(r);
            for c in 0..n {
                if label[c] == usize::MAX && (p[(r, c)].abs() > CLASS_TOL || p[(c, r)].abs() > CLASS_TOL) {
                    label[c] = id;
                    stack.push(c);
                }
            }
        }
        g.sort_unstable();
        groups.push(g);
    }
    groups
}

fn witness_err(clause: &str, detail: String) -> Error {
    Error::InvalidWitness { clause: clause.into(), detail }
}

fn validate_witness(m: &MarketModel, f: &Filtration) -> Result<()> {
    let tree = m.tree();
    let t = tree.horizon();
    let n = tree.n_leaves();
    if f.levels[0].len() != 1 {
        return Err(witness_err("trivial F_0", "F_0 must have a single atom".into()));
    }
    for k in 0..=t {
        for a in 0..tree.n_atoms(k) {
            let leaves = tree.leaves(k, a);
            let fa = f.atom_of_leaf(k, leaves[0]);
            if leaves.iter().any(|&l| f.atom_of_leaf(k, l) != fa) {
                return Err(witness_err("F_k within G_k", format!("atom {a} of G_{k} straddles atoms of F_{k}")));
            }
        }
        if k < t {
            for (a, leaves) in f.levels[k + 1].iter().enumerate() {
                let fa = f.atom_of_leaf(k, leaves[0]);
                if leaves.iter().any(|&l| f.atom_of_leaf(k, l) != fa) {
                    return Err(witness_err("filtration", format!("atom {a} of F_{} straddles F_{k}", k + 1)));
                }
            }
        }
    }
    // Prices and dividends must be F-adapted, rates F-predictable.
    let constant_on = |vals: &dyn Fn(usize) -> f64, level: usize, what: String| -> Result<()> {
        for leaves in &f.levels[level] {
            let v0 = vals(leaves[0]);
            if leaves.iter().any(|&l| (vals(l) - v0).abs() > 1e-12 * (1.0 + v0.abs())) {
                return Err(witness_err("F-adapted prices", format!("{what} varies within an atom of F_{level}")));
            }
        }
        Ok(())
    };
    for k in 1..=t {
        let r = m.rate(k);
        constant_on(&|l| r.value(tree.atom_of_leaf(k - 1, l)), k - 1, format!("rate of period {k}"))?;
        for i in 0..m.n_assets() {
            let s = m.price(k - 1, i + 1);
            constant_on(&|l| s.value(tree.atom_of_leaf(k - 1, l)), k - 1, format!("price of asset {}", i + 1))?;
            let d = m.dividend(k, i);
            constant_on(&|l| d.value(tree.atom_of_leaf(k, l)), k, format!("dividend of asset {}", i + 1))?;
        }
    }
    // Completeness of the F-market: payoffs span each F-node's children.
    for k in 1..=t {
        let payoffs: Vec<_> = (0..m.n_slots()).map(|s| m.payoff(k, s)).collect();
        for parent in &f.levels[k - 1] {
            let mut kids: Vec<usize> = parent.iter().map(|&l| f.atom_of_leaf(k, l)).collect();
            kids.sort_unstable();
            kids.dedup();
            let rep: Vec<usize> = kids.iter().map(|&c| f.levels[k][c][0]).collect();
            let x = DMatrix::from_fn(rep.len(), payoffs.len(), |r, s| payoffs[s].value(tree.atom_of_leaf(k, rep[r])));
            let sv = x.singular_values();
            let smax = sv.iter().copied().fold(0.0, f64::max);
            let rank = sv.iter().filter(|&&v| v > super::RANK_TOL * smax).count();
            if rank < rep.len() {
                return Err(witness_err(
                    "F-market complete",
                    format!("payoffs span {rank} of {} F-children at period {k}", rep.len()),
                ));
            }
        }
    }
    // Conditional independence: E[1_A | G_k] = E[1_A | F_k] for A in F_{k+1}.
    let probs = tree.leaf_probs();
    for k in 0..t {
        for (a, leaves) in f.levels[k + 1].iter().enumerate() {
            let mut ind = vec![0.0; n];
            for &l in leaves {
                ind[l] = 1.0;
            }
            let ef = f.condexp_leaves(probs, &ind, k);
            let mut num = vec![0.0; tree.n_atoms(k)];
            for l in 0..n {
                num[tree.atom_of_leaf(k, l)] += probs[l] * ind[l];
            }
            for l in 0..n {
                let g = tree.atom_of_leaf(k, l);
                let eg = num[g] / tree.atom_prob(k, g);
                if (eg - ef[l]).abs() > CLASS_TOL {
                    return Err(witness_err(
                        "conditional independence",
                        format!("E[1_A | G_{k}] differs from E[1_A | F_{k}] for atom {a} of F_{}", k + 1),
                    ));
                }
            }
        }
    }
    Ok(())
}
