//! Continuation problems: the optimization seen from one node with the
//! consumption history fixed and a given amount of wealth.
//!
//! Past consumption only matters through the habit it leaves behind, so it
//! is folded into the baseline habit of the subtree:
//! `h'_j = h_j + sum_{l<k} beta^(j)_l c_l`.

use super::newton::solve_general;
use super::Solution;
use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::preferences::HabitPreferences;
use crate::tree::{AdaptedProcess, RandomVariable};

/// The restricted market, preferences and endowment below one node.
#[derive(Debug, Clone)]
pub struct Continuation {
    pub market: MarketModel,
    pub preferences: HabitPreferences,
    pub endowment: AdaptedProcess,
    /// `map[j][b]`: original level-`k + j` atom of subtree atom `b`.
    pub map: Vec<Vec<usize>>,
}

/// Builds the problem at level-`k` atom `node` with wealth `w`; the root
/// endowment becomes `eps_k + w`. Only levels below `k` of `history` are used.
pub fn continuation_problem(
    m: &MarketModel,
    p: &HabitPreferences,
    eps: &AdaptedProcess,
    k: usize,
    node: usize,
    history: &AdaptedProcess,
    w: f64,
) -> Result<Continuation> {
    let tree = m.tree();
    if k > tree.horizon() || node >= tree.n_atoms(k) {
        return Err(Error::PreconditionViolated(format!("no atom {node} at level {k}")));
    }
    let (market, map) = m.restrict(k, node)?;
    let sub = market.tree();
    let mut endowment = eps.restrict(&map, k);
    endowment.at_mut(0).values_mut()[0] += w;
    let habit = AdaptedProcess::new(
        sub,
        map.iter()
            .enumerate()
            .map(|(j, atoms)| {
                let values = atoms
                    .iter()
                    .map(|&a| {
                        let mut h = p.habit().at(k + j).value(a);
                        for l in 0..k {
                            h += p.beta().get(k + j, l) * history.at(l).value(tree.ancestor(k + j, a, l));
                        }
                        h
                    })
                    .collect();
                RandomVariable::new(j, values)
            })
            .collect(),
    )?;
    Ok(Continuation { preferences: p.continuation(k, habit), market, endowment, map })
}

/// Optimal continuation plan; its root consumption is the policy `psi_k(w)`.
pub fn solve_subproblem(
    m: &MarketModel,
    p: &HabitPreferences,
    eps: &AdaptedProcess,
    k: usize,
    node: usize,
    history: &AdaptedProcess,
    w: f64,
) -> Result<Solution> {
    let c = continuation_problem(m, p, eps, k, node, history, w)?;
    solve_general(&c.market, &c.preferences, &c.endowment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::*;
    use crate::preferences::{HabitWeights, UtilityFamily};

    #[test]
    fn bellman_consistency_at_every_node() {
        let m = trinomial_incomplete();
        let tree = m.tree();
        let h = AdaptedProcess::constant(tree, 0.1);
        let p = HabitPreferences::new(tree, UtilityFamily::power(2.0, 0.02, 2), HabitWeights::one_lag(2, 0.4), Some(h))
            .unwrap();
        let eps = AdaptedProcess::from_levels(tree, vec![vec![1.5], vec![0.5, 0.7, 0.6], vec![0.4; 9]]).unwrap();
        let s = solve_general(&m, &p, &eps).unwrap();
        for k in 0..=2 {
            for a in 0..tree.n_atoms(k) {
                let sub = solve_subproblem(&m, &p, &eps, k, a, &s.consumption, s.wealth.at(k).value(a)).unwrap();
                let got = sub.consumption.at(0).value(0);
                assert!((got - s.consumption.at(k).value(a)).abs() < 1e-8, "k={k} a={a}");
            }
        }
    }
}
