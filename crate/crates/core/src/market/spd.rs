//! State-price densities.
//!
//! A positive SPD is found node by node: at each level-`k-1` atom the
//! one-period deflator `Z = R_k / R_{k-1}` over the children must satisfy
//! `sum_c q_c Z_c X_c = S` for every slot. The market is arbitrage free
//! exactly when every node admits such a `Z` with all entries positive.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MarketModel;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::preferences::HabitWeights;
use crate::tree::{AdaptedProcess, EventTree, RandomVariable};

/// Node deflators whose smallest entry falls below this are treated as arbitrage.
const MIN_DEFLATOR: f64 = 1e-9;
/// Aggregate SPD values at or below this magnitude count as vanishing.
const VANISHING_SPD: f64 = 1e-12;

/// How to pick one positive SPD among many in an incomplete market.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpdObjective {
    /// Maximize the smallest node deflator entry.
    MaxMin,
    /// Maximize a random positive functional over deflators bounded away from zero.
    Randomized { seed: u64 },
}

/// A positive SPD `R` together with the aggregate SPD `M` built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingKernel {
    pub deflator: AdaptedProcess,
    pub aggregate: AdaptedProcess,
}

impl PricingKernel {
    pub(super) fn compute(m: &MarketModel) -> Result<Self> {
        let deflator = check_no_arbitrage(m)?;
        let aggregate = aggregate_spd(m, &deflator)?;
        Ok(PricingKernel { deflator, aggregate })
    }

    /// Both processes rescaled to start at 1 on the subtree below `atom`.
    pub(super) fn restrict(&self, sub: &EventTree, map: &[Vec<usize>], level: usize, atom: usize) -> Self {
        let norm = |x: &AdaptedProcess| {
            let base = x.at(level).value(atom);
            let comps = map
                .iter()
                .enumerate()
                .map(|(j, atoms)| RandomVariable::new(j, atoms.iter().map(|&a| x.at(level + j).value(a) / base).collect()))
                .collect();
            AdaptedProcess::new(sub, comps).expect("restriction matches subtree")
        };
        PricingKernel { deflator: norm(&self.deflator), aggregate: norm(&self.aggregate) }
    }

    /// One-period deflator `R_k / R_{k-1}` at level `k`.
    pub fn step(&self, tree: &EventTree, k: usize) -> RandomVariable {
        tree.zip(self.deflator.at(k), self.deflator.at(k - 1), |a, b| a / b)
    }

    /// `M_k / M_{k-1}` at level `k`.
    pub fn aggregate_step(&self, tree: &EventTree, k: usize) -> RandomVariable {
        tree.zip(self.aggregate.at(k), self.aggregate.at(k - 1), |a, b| a / b)
    }
}

/// Returns a strictly positive SPD or the first node admitting arbitrage.
pub fn check_no_arbitrage(m: &MarketModel) -> Result<AdaptedProcess> {
    find_positive_spd(m, SpdObjective::MaxMin)
}

pub fn find_positive_spd(m: &MarketModel, objective: SpdObjective) -> Result<AdaptedProcess> {
    let tree = m.tree();
    let mut rng = match objective {
        SpdObjective::Randomized { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        SpdObjective::MaxMin => None,
    };
    let mut comps = vec![tree.constant(0, 1.0)];
    for k in 1..=tree.horizon() {
        let mut r = vec![0.0; tree.n_atoms(k)];
        for a in 0..tree.n_atoms(k - 1) {
            let z = node_deflator(m, k, a, rng.as_mut())?;
            let base = comps[k - 1].value(a);
            for (&c, zc) in tree.children(k - 1, a).iter().zip(z) {
                r[c] = base * zc;
            }
        }
        comps.push(RandomVariable::new(k, r));
    }
    AdaptedProcess::new(tree, comps)
}

fn node_deflator(m: &MarketModel, k: usize, a: usize, rng: Option<&mut ChaCha8Rng>) -> Result<Vec<f64>> {
    let tree = m.tree();
    let children = tree.children(k - 1, a);
    let n = children.len();
    let x = m.node_payoffs(k, a);
    let s = m.node_prices(k - 1, a);
    let q: Vec<f64> = children.iter().map(|&c| tree.cond_prob(k, c)).collect();
    let a_mat = DMatrix::from_fn(s.len(), n, |i, c| q[c] * x[(c, i)]);
    let arbitrage = || Error::ArbitrageDetected { level: k - 1, node: a };

    // Max-min: variables Z_0..Z_{n-1}, t.
    let mut lp = LinearProgram::new(n + 1);
    let mut obj = vec![0.0; n + 1];
    obj[n] = 1.0;
    lp.set_objective(obj);
    for (i, &si) in s.iter().enumerate() {
        let mut row: Vec<f64> = (0..n).map(|c| a_mat[(i, c)]).collect();
        row.push(0.0);
        lp.add_row(row, Relation::Eq, si);
    }
    for c in 0..n {
        let mut row = vec![0.0; n + 1];
        row[c] = 1.0;
        row[n] = -1.0;
        lp.add_row(row, Relation::Ge, 0.0);
    }
    let (mut z, tstar) = match lp.maximize() {
        LpOutcome::Optimal { x, value } if value > MIN_DEFLATOR => (x[..n].to_vec(), value),
        _ => return Err(arbitrage()),
    };

    if let Some(rng) = rng {
        let mut lp = LinearProgram::new(n);
        lp.set_objective((0..n).map(|c| q[c] * rng.gen_range(0.5..1.5)).collect());
        for (i, &si) in s.iter().enumerate() {
            lp.add_row((0..n).map(|c| a_mat[(i, c)]).collect(), Relation::Eq, si);
        }
        for c in 0..n {
            let mut row = vec![0.0; n];
            row[c] = 1.0;
            lp.add_row(row, Relation::Ge, 0.5 * tstar);
        }
        match lp.maximize() {
            LpOutcome::Optimal { x, .. } => z = x,
            _ => return Err(arbitrage()),
        }
    }

    // Remove the simplex round-off from the pricing identities.
    let zv = DVector::from_vec(z);
    let resid = &a_mat * &zv - DVector::from_column_slice(&s);
    let corr = a_mat.clone().svd(true, true).solve(&resid, 1e-13).map_err(|_| arbitrage())?;
    let z: Vec<f64> = (zv - corr).iter().copied().collect();
    if z.iter().any(|&v| v < 0.5 * MIN_DEFLATOR) {
        return Err(arbitrage());
    }
    Ok(z)
}

/// `M_k = prod_{l <= k} P^l[R_l / R_{l-1}]`, `M_0 = 1`; fails if `M` vanishes.
pub fn aggregate_spd(m: &MarketModel, r: &AdaptedProcess) -> Result<AdaptedProcess> {
    let tree = m.tree();
    let mut comps = vec![tree.constant(0, 1.0)];
    for k in 1..=tree.horizon() {
        let z = tree.zip(r.at(k), r.at(k - 1), |a, b| a / b);
        let p = m.project(&z, k);
        let mk = tree.zip(&p, &comps[k - 1], |a, b| a * b);
        if let Some(atom) = mk.values().iter().position(|v| v.abs() <= VANISHING_SPD) {
            return Err(Error::VanishingAggregateSpd { level: k, atom });
        }
        comps.push(mk);
    }
    AdaptedProcess::new(tree, comps)
}

/// `M~_k = M_k + sum_{m > k} beta^(m)_k E[M~_m | G_k]`, computed backward.
/// Each chain of habit weights from `k` to a later period is counted once.
pub fn perturbed_aggregate_spd(tree: &EventTree, m: &AdaptedProcess, beta: &HabitWeights) -> AdaptedProcess {
    let t = tree.horizon();
    let mut out: Vec<RandomVariable> = m.components().to_vec();
    for k in (0..t).rev() {
        let mut acc = m.at(k).clone();
        for j in k + 1..=t {
            let b = beta.get(j, k);
            if b != 0.0 {
                let e = tree.condexp(&out[j], k);
                acc = tree.zip(&acc, &e, |x, y| x + b * y);
            }
        }
        out[k] = acc;
    }
    AdaptedProcess::new(tree, out).expect("same shape as input")
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn binomial_deflator_is_unique() {
        // q* = (1.05 - 0.9) / (1.3 - 0.9) = 0.375 under the bond numeraire.
        let m = binomial(0.05, 1.0, 1.3, 0.9);
        let r = check_no_arbitrage(&m).unwrap();
        let expect = [2.0 * 0.375 / 1.05, 2.0 * 0.625 / 1.05];
        for (a, b) in r.at(1).values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let mm = aggregate_spd(&m, &r).unwrap();
        assert!(mm.max_abs_diff(&r) < 1e-12);
    }

    #[test]
    fn dominated_asset_is_arbitrage() {
        let m = binomial(0.0, 1.0, 1.2, 1.1);
        assert!(matches!(check_no_arbitrage(&m), Err(Error::ArbitrageDetected { level: 0, node: 0 })));
    }

    #[test]
    fn aggregate_spd_independent_of_deflator() {
        let m = trinomial_incomplete();
        let r1 = check_no_arbitrage(&m).unwrap();
        let r2 = find_positive_spd(&m, SpdObjective::Randomized { seed: 7 }).unwrap();
        assert!(r1.max_abs_diff(&r2) > 1e-6, "deflators should differ in an incomplete market");
        let m1 = aggregate_spd(&m, &r1).unwrap();
        let m2 = aggregate_spd(&m, &r2).unwrap();
        assert!(m1.max_abs_diff(&m2) < 1e-10);
    }

    #[test]
    fn perturbed_spd_single_counts_chains() {
        // Constant M = 1 on a two-period tree with one-lag weight b.
        let tree = EventTree::regular(2, 2).unwrap();
        let m = AdaptedProcess::constant(&tree, 1.0);
        let b = 0.5;
        let beta = HabitWeights::one_lag(2, b);
        let mt = perturbed_aggregate_spd(&tree, &m, &beta);
        assert!((mt.at(0).value(0) - (1.0 + b + b * b)).abs() < 1e-15);
        assert!((mt.at(1).value(1) - (1.0 + b)).abs() < 1e-15);
        assert_eq!(mt.at(2).values(), &[1.0; 4]);
    }
}
