//! The bijection between budget-feasible consumption and wealth processes.
//!
//! `W_k = sum_{l >= k} E[(M_l / M_k)(c_l - eps_l) | G_k]` is the value of the
//! remaining net consumption; conversely
//! `c_k = eps_k + W_k - E[(M_{k+1} / M_k) W_{k+1} | G_k]` with `W_0 = 0`.

use super::MarketModel;
use crate::error::{Error, Result};
use crate::tree::{AdaptedProcess, RandomVariable};

/// Membership tolerance relative to the size of the wealth process.
const MEMBERSHIP_TOL: f64 = 1e-7;

/// Wealth of a budget-feasible consumption plan. Fails with
/// `NotInPayoffSpace` when `c - eps` cannot be financed.
pub fn consumption_to_wealth(m: &MarketModel, c: &AdaptedProcess, eps: &AdaptedProcess) -> Result<AdaptedProcess> {
    let tree = m.tree();
    let mm = &m.kernel()?.aggregate;
    let t = tree.horizon();
    let mut w: Vec<RandomVariable> = vec![tree.constant(0, 0.0); t + 1];
    w[t] = tree.zip(c.at(t), eps.at(t), |a, b| a - b);
    for k in (0..t).rev() {
        let next = discounted_next(m, mm, &w[k + 1], k);
        w[k] = tree.zip(&tree.zip(c.at(k), eps.at(k), |a, b| a - b), &next, |a, b| a + b);
    }
    let w = AdaptedProcess::new(tree, w)?;
    check_membership(m, &w)?;
    Ok(w)
}

/// Consumption financed by a wealth process with `W_0 = 0`, `W_k in L_k`.
pub fn wealth_to_consumption(m: &MarketModel, w: &AdaptedProcess, eps: &AdaptedProcess) -> Result<AdaptedProcess> {
    check_membership(m, w)?;
    let tree = m.tree();
    let mm = &m.kernel()?.aggregate;
    let t = tree.horizon();
    let comps = (0..=t)
        .map(|k| {
            let base = tree.zip(eps.at(k), w.at(k), |a, b| a + b);
            if k == t {
                base
            } else {
                tree.zip(&base, &discounted_next(m, mm, w.at(k + 1), k), |a, b| a - b)
            }
        })
        .collect();
    AdaptedProcess::new(tree, comps)
}

/// `E[(M_{k+1} / M_k) x | G_k]` for `x` at level `k + 1`.
fn discounted_next(m: &MarketModel, mm: &AdaptedProcess, x: &RandomVariable, k: usize) -> RandomVariable {
    let tree = m.tree();
    let ratio = tree.zip(mm.at(k + 1), mm.at(k), |a, b| a / b);
    tree.condexp(&tree.zip(&ratio, x, |a, b| a * b), k)
}

fn check_membership(m: &MarketModel, w: &AdaptedProcess) -> Result<()> {
    let tree = m.tree();
    let scale = 1.0 + w.max_abs();
    let w0 = w.at(0).value(0);
    if w0.abs() > MEMBERSHIP_TOL * scale {
        return Err(Error::NotInPayoffSpace { level: 0, residual: w0.abs() });
    }
    for k in 1..=tree.horizon() {
        let p = m.project(w.at(k), k);
        let residual = p.max_abs_diff(w.at(k));
        if residual > MEMBERSHIP_TOL * scale {
            return Err(Error::NotInPayoffSpace { level: k, residual });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn round_trip_on_incomplete_market() {
        let m = trinomial_incomplete();
        let tree = m.tree();
        // Wealth spanned by payoffs: W_1 = 0.3 * bond - 0.2 * stock, W_2 = stock payoff.
        let w1 = tree.zip(&m.payoff(1, 0), &m.payoff(1, 1), |a, b| 0.3 * a - 0.2 * b);
        let w = AdaptedProcess::new(tree, vec![tree.constant(0, 0.0), w1, m.payoff(2, 1)]).unwrap();
        let eps = AdaptedProcess::constant(tree, 1.0);
        let c = wealth_to_consumption(&m, &w, &eps).unwrap();
        let back = consumption_to_wealth(&m, &c, &eps).unwrap();
        assert!(back.max_abs_diff(&w) < 1e-12);
    }

    #[test]
    fn unspanned_wealth_is_rejected() {
        let m = trinomial_incomplete();
        let tree = m.tree();
        let w = AdaptedProcess::new(
            tree,
            vec![tree.constant(0, 0.0), tree.indicator(1, 0), tree.constant(2, 0.0)],
        )
        .unwrap();
        let eps = AdaptedProcess::zeros(tree);
        assert!(matches!(wealth_to_consumption(&m, &w, &eps), Err(Error::NotInPayoffSpace { level: 1, .. })));
    }
}
