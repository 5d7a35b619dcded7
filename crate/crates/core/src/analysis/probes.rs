//! Finite-difference probes of the policy functions `psi_k` (consumption
//! as a function of wealth) and `eta_{k+1}` (next-period wealth as a
//! function of today's consumption), evaluated by re-solving continuation
//! problems with the optimal history held fixed.

use rayon::prelude::*;
use serde::Serialize;

use super::{Scope, BoundEntry, BoundReport};
use crate::error::Result;
use crate::market::{perturbed_aggregate_spd, MarketModel};
use crate::preferences::HabitPreferences;
use crate::solvers::{continuation_problem, solve_general, Solution};
use crate::tree::{AdaptedProcess, EventTree, RandomVariable};

/// Relative disagreement between the estimates at `dW` and `dW / 2` above
/// which a probe is flagged unreliable.
pub const RICHARDSON_GATE: f64 = 0.1;

/// `dW = max(1e-4, 1e-4 |w|)`.
pub fn default_step(w: f64) -> f64 {
    1e-4f64.max(1e-4 * w.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyProbe {
    pub period: usize,
    pub node: usize,
    pub wealth: f64,
    pub step: f64,
    pub consumption: f64,
    /// Central difference of `psi_k` at step `dW`.
    pub first_derivative: f64,
    /// `psi(w + dW) - 2 psi(w) + psi(w - dW)`, not divided by `dW^2`.
    pub second_difference: f64,
    pub second_derivative: f64,
    /// `B_k` at this node.
    pub bound: f64,
    pub reliable: bool,
}

/// Continuation solutions at `w + s` for each shift `s`.
struct Sweep {
    root: Vec<f64>,
    /// Next-period wealth on the children of the node, one row per shift.
    next: Vec<Vec<f64>>,
}

fn solve_shifts(
    m: &MarketModel,
    p: &HabitPreferences,
    eps: &AdaptedProcess,
    base: &Solution,
    k: usize,
    node: usize,
    shifts: &[f64],
) -> Result<Sweep> {
    let w = base.wealth.at(k).value(node);
    let mut root = Vec::with_capacity(shifts.len());
    let mut next = Vec::with_capacity(shifts.len());
    for &s in shifts {
        let cont = continuation_problem(m, p, eps, k, node, &base.consumption, w + s)?;
        let sol = solve_general(&cont.market, &cont.preferences, &cont.endowment)?;
        root.push(sol.consumption.at(0).value(0));
        next.push(if k < m.horizon() { sol.wealth.at(1).values().to_vec() } else { Vec::new() });
    }
    Ok(Sweep { root, next })
}

/// `B_k = 1 / (1 + sum_{j>k} C[k][j] E[M_j / M_k | G_k])`, `C` the chain
/// sums of habit weights.
pub fn monotonicity_bound(tree: &EventTree, mm: &AdaptedProcess, p: &HabitPreferences, k: usize) -> RandomVariable {
    let chain = p.beta().chain_coefficients();
    let mut s = tree.constant(k, 0.0);
    for j in k + 1..=tree.horizon() {
        if chain[k][j] != 0.0 {
            let e = tree.condexp(mm.at(j), k);
            s = tree.zip(&s, &e, |a, b| a + chain[k][j] * b);
        }
    }
    tree.zip(&s, mm.at(k), |a, b| 1.0 / (1.0 + a / b))
}

/// `sum_{j>k} C[k][j] E[M_j / M_{k+1} | G_{k+1}]` at level `k + 1`.
pub fn eta_bound(tree: &EventTree, mm: &AdaptedProcess, p: &HabitPreferences, k: usize) -> RandomVariable {
    let chain = p.beta().chain_coefficients();
    let mut s = tree.constant(k + 1, 0.0);
    for j in k + 1..=tree.horizon() {
        if chain[k][j] != 0.0 {
            let e = tree.condexp(mm.at(j), k + 1);
            s = tree.zip(&s, &e, |a, b| a + chain[k][j] * b);
        }
    }
    tree.zip(&s, mm.at(k + 1), |a, b| a / b)
}

fn gate(coarse: f64, fine: f64, floor: f64) -> bool {
    (coarse - fine).abs() <= RICHARDSON_GATE * fine.abs() || (coarse.abs() <= floor && fine.abs() <= floor)
}

/// Derivatives of `psi_k` at one node; for `k = 0` this is `psi'_0(eps_0)`.
pub fn policy_probe(
    m: &MarketModel,
    p: &HabitPreferences,
    eps: &AdaptedProcess,
    base: &Solution,
    k: usize,
    node: usize,
    step: Option<f64>,
) -> Result<PolicyProbe> {
    let w = base.wealth.at(k).value(node);
    let d = step.unwrap_or_else(|| default_step(w));
    let sw = solve_shifts(m, p, eps, base, k, node, &[-d, 0.0, d, -0.5 * d, 0.5 * d])?;
    let c = &sw.root;
    let first = (c[2] - c[0]) / (2.0 * d);
    let first_half = (c[4] - c[3]) / d;
    let second = c[2] - 2.0 * c[1] + c[0];
    let second_half = c[4] - 2.0 * c[1] + c[3];
    let scale = c[1].abs().max(1.0);
    // Rounding in the solves bounds how small a meaningful second difference can be.
    let reliable = gate(first, first_half, 0.0) && gate(second / (d * d), second_half / (0.25 * d * d), 1e-12 * scale / (d * d));
    let bound = monotonicity_bound(m.tree(), &m.kernel()?.aggregate, p, k).value(node);
    Ok(PolicyProbe {
        period: k,
        node,
        wealth: w,
        step: d,
        consumption: c[1],
        first_derivative: first,
        second_difference: second,
        second_derivative: second / (d * d),
        bound,
        reliable,
    })
}

fn nodes(tree: &EventTree, periods: &[usize]) -> Vec<(usize, usize)> {
    periods.iter().flat_map(|&k| (0..tree.n_atoms(k)).map(move |a| (k, a))).collect()
}

/// `0 < dpsi_k / dW_k <= B_k + tol` at every node of every period.
pub fn monotonicity_check(
    m: &MarketModel,
    p: &HabitPreferences,
    eps: &AdaptedProcess,
    base: &Solution,
    tol: f64,
) -> Result<BoundReport> {
    let scope = Scope::of(m, p)?;
    let tree = m.tree();
    let all: Vec<usize> = (0..=tree.horizon()).collect();
    let entries = nodes(tree, &all)
        .into_par_iter()
        .map(|(k, a)| {
            let probe = policy_probe(m, p, eps, base, k, a, None)?;
            let est = probe.first_derivative;
            Ok(BoundEntry {
                period: k,
                node: a,
                estimate: est,
                bound: probe.bound,
                tol,
                pass: est > 0.0 && est <= probe.bound + tol,
                reliable: probe.reliable,
                reference: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport::new("monotonicity", scope.monotonicity, scope.note(scope.monotonicity), entries))
}

/// Second differences of `psi_k` must not exceed `tol * max(1, |c_k|)`.
pub fn concavity_check(
    m: &MarketModel,
    p: &HabitPreferences,
    eps: &AdaptedProcess,
    base: &Solution,
    tol: f64,
) -> Result<BoundReport> {
    let scope = Scope::of(m, p)?;
    let tree = m.tree();
    // psi_T is the identity plus eps_T, so the last period carries no information.
    let periods: Vec<usize> = (0..tree.horizon()).collect();
    let entries = nodes(tree, &periods)
        .into_par_iter()
        .map(|(k, a)| {
            let probe = policy_probe(m, p, eps, base, k, a, None)?;
            let t = tol * probe.consumption.abs().max(1.0);
            Ok(BoundEntry {
                period: k,
                node: a,
                estimate: probe.second_difference,
                bound: 0.0,
                tol: t,
                pass: probe.second_difference <= t,
                reliable: probe.reliable,
                reference: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport::new("concavity", scope.concavity, scope.note(scope.concavity), entries))
}

/// `d eta_{k+1} / d c_k`, the response of next-period wealth to consumption,
/// must dominate `sum_{j>k} C[k][j] E[M_j / M_{k+1} | G_{k+1}] - tol`.
///
/// Moving `W_k` at a node moves both `c_k` and the optimal `W_{k+1}` on its
/// children along the first-order manifold, so the ratio of their central
/// differences is the derivative. At `k = T - 1` the estimate is compared
/// with `beta^(T)_{T-1} + (M~_T / M~_{T-1}) u''_{T-1} / P^T[u''_T]`,
/// reported as `reference`.
pub fn eta_check(
    m: &MarketModel,
    p: &HabitPreferences,
    eps: &AdaptedProcess,
    base: &Solution,
    tol: f64,
) -> Result<BoundReport> {
    let scope = Scope::of(m, p)?;
    let tree = m.tree();
    let t = tree.horizon();
    let mm = &m.kernel()?.aggregate;
    let reference = last_period_eta(m, p, base)?;
    let periods: Vec<usize> = (0..t).collect();
    let per_node = nodes(tree, &periods)
        .into_par_iter()
        .map(|(k, a)| {
            let w = base.wealth.at(k).value(a);
            let d = default_step(w);
            let sw = solve_shifts(m, p, eps, base, k, a, &[-d, d, -0.5 * d, 0.5 * d])?;
            let lower = eta_bound(tree, mm, p, k);
            let dc = sw.root[1] - sw.root[0];
            let dc_half = sw.root[3] - sw.root[2];
            let out: Vec<BoundEntry> = tree
                .children(k, a)
                .iter()
                .enumerate()
                .map(|(i, &child)| {
                    let est = (sw.next[1][i] - sw.next[0][i]) / dc;
                    let est_half = (sw.next[3][i] - sw.next[2][i]) / dc_half;
                    let bound = lower.value(child);
                    BoundEntry {
                        period: k + 1,
                        node: child,
                        estimate: est,
                        bound,
                        tol,
                        pass: est >= bound - tol,
                        reliable: gate(est, est_half, 0.0),
                        reference: (k + 1 == t).then(|| reference.value(child)),
                    }
                })
                .collect();
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = per_node.into_iter().flatten().collect();
    Ok(BoundReport::new("eta", scope.eta, scope.note(scope.eta), entries))
}

/// `beta^(T)_{T-1} + (M~_T / M~_{T-1}) u''_{T-1}(c^_{T-1}) / P^T[u''_T(c^_T)]` at level `T`.
fn last_period_eta(m: &MarketModel, p: &HabitPreferences, base: &Solution) -> Result<RandomVariable> {
    let tree = m.tree();
    let t = tree.horizon();
    let mt = perturbed_aggregate_spd(tree, &m.kernel()?.aggregate, p.beta());
    let chat = crate::preferences::perturbed_consumption(p, tree, &base.consumption);
    let (u_prev, u_last) = (p.period(t - 1), p.period(t));
    let d2_last = m.project(&chat.at(t).map(|x| u_last.d2(x)), t);
    let d2_prev = tree.lift(&chat.at(t - 1).map(|x| u_prev.d2(x)), t);
    let ratio = tree.zip(mt.at(t), &tree.lift(mt.at(t - 1), t), |a, b| a / b);
    let b = p.beta().get(t, t - 1);
    let num = tree.zip(&ratio, &d2_prev, |a, c| a * c);
    Ok(tree.zip(&num, &d2_last, |x, y| b + x / y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::*;
    use crate::preferences::{HabitWeights, UtilityFamily};
    use crate::tree::EventTree;

    fn bond_market(tree: &EventTree, r: f64) -> MarketModel {
        let t = tree.horizon();
        MarketModel::new(
            tree.clone(),
            0,
            vec![vec![]; t],
            vec![vec![]; t],
            (0..t).map(|k| tree.constant(k, r)).collect(),
            false,
        )
        .unwrap()
    }

    #[test]
    fn bound_agrees_with_perturbed_spd_ratio() {
        let m = trinomial_incomplete();
        let tree = m.tree();
        let p = HabitPreferences::new(tree, UtilityFamily::Log { rho: 0.0 }, HabitWeights::new(vec![vec![], vec![0.4], vec![0.2, 0.7]]).unwrap(), None)
            .unwrap();
        let mm = &m.kernel().unwrap().aggregate;
        let mt = perturbed_aggregate_spd(tree, mm, p.beta());
        for k in 0..=2 {
            let b = monotonicity_bound(tree, mm, &p, k);
            let ratio = tree.zip(mm.at(k), mt.at(k), |a, c| a / c);
            assert!(b.max_abs_diff(&ratio) < 1e-14);
        }
    }

    #[test]
    fn one_period_log_propensity() {
        // Log, no baseline habit, r = 0, one-lag weight b: c_0 = eps_0 / (2 (1 + b)).
        let tree = EventTree::regular(1, 1).unwrap();
        let m = bond_market(&tree, 0.0);
        let b = 0.6;
        let p = HabitPreferences::new(&tree, UtilityFamily::Log { rho: 0.0 }, HabitWeights::one_lag(1, b), None).unwrap();
        let eps = AdaptedProcess::from_levels(&tree, vec![vec![2.0], vec![0.0]]).unwrap();
        let base = solve_general(&m, &p, &eps).unwrap();
        let probe = policy_probe(&m, &p, &eps, &base, 0, 0, None).unwrap();
        assert!((probe.first_derivative - 1.0 / (2.0 * (1.0 + b))).abs() < 1e-8);
        assert!((probe.bound - 1.0 / (1.0 + b)).abs() < 1e-14);
        assert!(probe.reliable);
    }

    #[test]
    fn bond_market_probes_hold() {
        let tree = EventTree::regular(2, 2).unwrap();
        let m = bond_market(&tree, 0.05);
        let h = AdaptedProcess::constant(&tree, 0.1);
        let p = HabitPreferences::new(&tree, UtilityFamily::power(2.0, 0.0, 2), HabitWeights::one_lag(2, 0.5), Some(h)).unwrap();
        let eps = AdaptedProcess::from_levels(&tree, vec![vec![2.0], vec![0.5, 1.0], vec![0.3, 0.9, 0.2, 1.2]]).unwrap();
        let base = solve_general(&m, &p, &eps).unwrap();
        let mono = monotonicity_check(&m, &p, &eps, &base, 1e-4).unwrap();
        assert!(mono.in_scope && mono.passed(), "{mono:?}");
        let conc = concavity_check(&m, &p, &eps, &base, 1e-6).unwrap();
        assert!(conc.in_scope && conc.passed(), "{conc:?}");
        let eta = eta_check(&m, &p, &eps, &base, 1e-4).unwrap();
        assert!(eta.passed(), "{eta:?}");
        for e in eta.entries.iter().filter(|e| e.period == 2) {
            assert!((e.estimate - e.reference.unwrap()).abs() < 1e-5 * e.estimate.abs().max(1.0), "{e:?}");
        }
    }
}
