//! Solvers exploiting explicit structure of the optimum.

use super::newton::{check_inputs, solve_general};
use super::{Diagnostics, Solution};
use crate::error::{Error, Result};
use crate::market::{perturbed_aggregate_spd, MarketModel};
use crate::preferences::{HabitPreferences, UtilityFamily};
use crate::tree::{AdaptedProcess, EventTree, RandomVariable};

/// Power utility with wealth only at time 0.
#[derive(Debug, Clone)]
pub struct PowerNoEndowmentSolution {
    pub solution: Solution,
    /// `A_k`: the fraction of available wealth consumed at `k`; `A_T = 1`.
    pub consumption_fraction: AdaptedProcess,
}

/// Optimum for uniform power (or log) utility, no baseline habit and no
/// endowment after time 0. The plan is homogeneous of degree one in
/// `eps_0`, so it is solved once at unit wealth and rescaled.
pub fn solve_power_no_endowment(m: &MarketModel, p: &HabitPreferences, eps: &AdaptedProcess) -> Result<PowerNoEndowmentSolution> {
    check_inputs(m, p, eps)?;
    if p.uniform_gamma().is_none() {
        return Err(Error::WrongUtilityFamily("power or log utility with one risk aversion required".into()));
    }
    if p.habit().max_abs() != 0.0 {
        return Err(Error::PreconditionViolated("baseline habit must be zero".into()));
    }
    let tree = m.tree();
    let t = tree.horizon();
    if (1..=t).any(|k| eps.at(k).max_abs() != 0.0) {
        return Err(Error::PreconditionViolated("endowment must vanish after time 0".into()));
    }
    let e0 = eps.at(0).value(0);
    if !(e0 > 0.0) {
        return Err(Error::PreconditionViolated("initial endowment must be positive".into()));
    }
    let unit_eps = eps.map(|v| v / e0);
    let unit = solve_general(m, p, &unit_eps)?;
    let mm = &m.kernel()?.aggregate;
    let fraction = AdaptedProcess::new(
        tree,
        (0..=t)
            .map(|k| {
                if k == t {
                    return tree.constant(t, 1.0);
                }
                let ratio = tree.zip(mm.at(k + 1), mm.at(k), |a, b| a / b);
                let invest = tree.condexp(&tree.zip(&ratio, unit.wealth.at(k + 1), |a, b| a * b), k);
                tree.zip(unit.consumption.at(k), &invest, |c, i| c / (c + i))
            })
            .collect(),
    )?;
    let c = unit.consumption.map(|v| v * e0);
    let w = unit.wealth.map(|v| v * e0);
    let diag = Diagnostics { method: "power_no_endowment".into(), ..unit.diagnostics.clone() };
    let solution = Solution::assemble(m, p, eps, c, Some(w), diag)?;
    Ok(PowerNoEndowmentSolution { solution, consumption_fraction: fraction })
}

/// Coefficients of the exponential-utility recursion. Optimal policies are
/// `c_k = l_k W_k + m_k c_{k-1} + n_k` and
/// `W_k = l'_k c_{k-1} + m'_k c_{k-2} + n'_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialCoefficients {
    pub l: Vec<f64>,
    pub m: Vec<f64>,
    pub n: Vec<RandomVariable>,
    /// Index 0 is unused; entries `1..=T` are `l'_k`.
    pub l_prime: Vec<f64>,
    pub m_prime: Vec<f64>,
    /// `n'_k` at level `k - 1`; index 0 is unused.
    pub n_prime: Vec<RandomVariable>,
    /// `X_k = M~_{k-1} / M~_k`; index 0 is unused.
    pub x: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExponentialSolution {
    pub solution: Solution,
    pub coefficients: ExponentialCoefficients,
}

/// Exponential utility, one-lag habit with a constant weight, bond-only
/// market with deterministic rates. Solved by a backward recursion for the
/// linear policy coefficients followed by a forward roll.
pub fn solve_exponential_bonds(m: &MarketModel, p: &HabitPreferences, eps: &AdaptedProcess) -> Result<ExponentialSolution> {
    check_inputs(m, p, eps)?;
    let (gamma, rho) = match p.family() {
        UtilityFamily::Exponential { gamma, rho } => (*gamma, *rho),
        _ => return Err(Error::WrongUtilityFamily("exponential utility required".into())),
    };
    if m.n_assets() != 0 {
        return Err(Error::WrongMarketClass("bond-only market required".into()));
    }
    if !m.has_deterministic_rates() {
        return Err(Error::PreconditionViolated("interest rates must be deterministic".into()));
    }
    let tree = m.tree();
    let t = tree.horizon();
    let beta = one_lag_weight(p)?;
    let r: Vec<f64> = (0..=t).map(|k| if k == 0 { 0.0 } else { m.rate(k).value(0) }).collect();
    let disc: Vec<f64> = r.iter().map(|x| 1.0 / (1.0 + x)).collect();
    let h = p.habit();

    let mut x = vec![0.0; t + 1];
    x[t] = beta + 1.0 + r[t];
    for k in (1..t).rev() {
        x[k] = beta + (1.0 + r[k]) * (1.0 - beta / x[k + 1]);
    }

    let mut l = vec![0.0; t + 1];
    let mut mc = vec![0.0; t + 1];
    let mut n: Vec<RandomVariable> = (0..=t).map(|k| tree.constant(k, 0.0)).collect();
    let mut lp = vec![0.0; t + 1];
    let mut mp = vec![0.0; t + 1];
    let mut np: Vec<RandomVariable> = (0..=t).map(|k| tree.constant(k.saturating_sub(1), 0.0)).collect();
    l[t] = 1.0;
    n[t] = eps.at(t).clone();
    let mut warnings = Vec::new();
    for k in (1..=t).rev() {
        lp[k] = (1.0 + beta - mc[k]) / l[k];
        mp[k] = -beta / l[k];
        let tail = tree.zip(h.at(k), &n[k], |hv, nv| (gamma * (hv - nv)).exp());
        let e = tree.condexp(&tail, k - 1);
        let npk = tree.zip(&e, h.at(k - 1), |ev, hv| ((ev * x[k]).ln() - rho - gamma * hv) / (gamma * l[k]));
        let den = 1.0 + disc[k] * lp[k];
        l[k - 1] = 1.0 / den;
        mc[k - 1] = -disc[k] * mp[k] / den;
        n[k - 1] = tree.zip(eps.at(k - 1), &npk, |ev, nv| (ev - disc[k] * nv) / den);
        np[k] = npk;
    }
    for k in 0..=t {
        if !(l[k] > 0.0 && l[k] <= 1.0 + 1e-12) {
            return Err(Error::PreconditionViolated(format!("policy coefficient l_{k} = {} outside (0, 1]", l[k])));
        }
        if k < t && (l[k] - 1.0).abs() <= 1e-12 {
            warnings.push(format!("l_{k} = 1 before the horizon"));
        }
    }

    // Forward roll. W_k is known at level k - 1 and lifted to level k.
    let mut c: Vec<RandomVariable> = vec![n[0].clone()];
    let mut w: Vec<RandomVariable> = vec![tree.constant(0, 0.0)];
    for k in 1..=t {
        let prev2 = if k >= 2 { c[k - 2].clone() } else { tree.constant(0, 0.0) };
        let wk = tree.zip(&tree.zip(&c[k - 1], &prev2, |a, b| lp[k] * a + mp[k] * b), &np[k], |a, b| a + b);
        let wk = tree.lift(&wk, k);
        let ck = tree.zip(&tree.zip(&wk, &c[k - 1], |a, b| l[k] * a + mc[k] * b), &n[k], |a, b| a + b);
        w.push(wk);
        c.push(ck);
    }
    if c.iter().any(|ck| ck.min() < 0.0) {
        warnings.push("optimal consumption is negative somewhere".into());
    }
    let c = AdaptedProcess::new(tree, c)?;
    let w = AdaptedProcess::new(tree, w)?;
    let diag = Diagnostics { method: "exponential_bonds".into(), warnings, ..Diagnostics::default() };
    let solution = Solution::assemble(m, p, eps, c, Some(w), diag)?;
    let coefficients = ExponentialCoefficients { l, m: mc, n, l_prime: lp, m_prime: mp, n_prime: np, x };
    Ok(ExponentialSolution { solution, coefficients })
}

fn one_lag_weight(p: &HabitPreferences) -> Result<f64> {
    let t = p.horizon();
    let b = if t >= 1 { p.beta().get(1, 0) } else { 0.0 };
    for k in 1..=t {
        for l in 0..k {
            let expect = if l + 1 == k { b } else { 0.0 };
            if p.beta().get(k, l) != expect {
                return Err(Error::PreconditionViolated("habit must be one-lag with a constant weight".into()));
            }
        }
    }
    Ok(b)
}

pub(crate) fn is_complete(m: &MarketModel) -> bool {
    let tree = m.tree();
    (1..=tree.horizon()).all(|k| m.basis().rank(k) == tree.n_atoms(k))
}

fn require_complete(m: &MarketModel) -> Result<()> {
    if is_complete(m) {
        Ok(())
    } else {
        Err(Error::WrongMarketClass("complete market required".into()))
    }
}

/// `sum_k E[M_k x_k]`.
fn price_of(tree: &EventTree, mm: &AdaptedProcess, x: &AdaptedProcess) -> f64 {
    (0..=tree.horizon()).map(|k| tree.inner(mm.at(k), x.at(k))).sum()
}

/// Complete market, any utility: the plan is determined by `c_0` through
/// `u'_k(c^_k) = u'_{k-1}(c^_{k-1}) M~_k / M~_{k-1}`, and `c_0` is the root
/// of the budget constraint.
pub fn solve_complete_general(m: &MarketModel, p: &HabitPreferences, eps: &AdaptedProcess) -> Result<Solution> {
    check_inputs(m, p, eps)?;
    require_complete(m)?;
    let tree = m.tree();
    let t = tree.horizon();
    let mm = &m.kernel()?.aggregate;
    let mt = perturbed_aggregate_spd(tree, mm, p.beta());
    let utils: Vec<_> = (0..=t).map(|k| p.period(k)).collect();
    let ratios: Vec<RandomVariable> =
        (1..=t).map(|k| tree.zip(mt.at(k), mt.at(k - 1), |a, b| a / b)).collect();
    let forward = |c0: f64| -> AdaptedProcess {
        let mut c = vec![tree.constant(0, c0)];
        let mut chat = vec![tree.constant(0, c0 - p.habit().at(0).value(0))];
        for k in 1..=t {
            let mu = chat[k - 1].map(|x| utils[k - 1].d1(x));
            let target = tree.zip(&ratios[k - 1], &mu, |a, b| a * b);
            let hatk = target.map(|y| utils[k].inverse_d1(y));
            let mut ck = tree.zip(&hatk, p.habit().at(k), |a, b| a + b);
            for l in 0..k {
                let b = p.beta().get(k, l);
                if b != 0.0 {
                    ck = tree.zip(&ck, &c[l], |a, v| a + b * v);
                }
            }
            c.push(ck);
            chat.push(hatk);
        }
        AdaptedProcess::new(tree, c).expect("levels match")
    };
    let eps_value = price_of(tree, mm, eps);
    let budget = |c0: f64| price_of(tree, mm, &forward(c0)) - eps_value;

    let lb = p.habit().at(0).value(0) + utils[0].lower_bound();
    let (mut lo, mut hi);
    if lb.is_finite() {
        let mut s = 1.0;
        lo = lb + s;
        let mut found = false;
        for _ in 0..1100 {
            lo = lb + s;
            let b = budget(lo);
            if b.is_finite() && b < 0.0 {
                found = true;
                break;
            }
            s *= 0.5;
        }
        if !found {
            return Err(Error::BracketFailure("budget stays positive near the lower end of the domain".into()));
        }
        hi = lb + 1.0;
    } else {
        lo = -1.0;
        let mut k = 0;
        while budget(lo) >= 0.0 {
            lo = 2.0 * lo - 1.0;
            k += 1;
            if k > 60 {
                return Err(Error::BracketFailure("budget stays positive as c_0 decreases".into()));
            }
        }
        hi = 1.0;
    }
    let mut k = 0;
    while !(budget(hi) > 0.0) {
        hi = lo + 2.0 * (hi - lo);
        k += 1;
        if k > 60 {
            return Err(Error::BracketFailure("budget stays negative as c_0 grows".into()));
        }
    }
    let mut iterations = 0;
    while iterations < 400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * mid.abs().max(1e-300) {
            break;
        }
        if budget(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let c0 = if budget(lo).abs() <= budget(hi).abs() { lo } else { hi };
    let c = forward(c0);
    let diag = Diagnostics { method: "complete_general".into(), iterations, ..Diagnostics::default() };
    Solution::assemble(m, p, eps, c, None, diag)
}

#[derive(Debug, Clone)]
pub struct CompletePowerSolution {
    pub solution: Solution,
    /// With one risk aversion for all periods, `c_k` is affine in `W_k` with
    /// this slope: `c_k - H^c_k = slope_k (W_k - H^W_k + E^W_k)`, where the
    /// offsets collect the habit and endowment terms.
    pub slope: Option<AdaptedProcess>,
}

/// Complete market, power (or log) utility possibly with period-specific
/// risk aversion: perturbed consumption is explicit in `c^_0`,
/// `c^_k = c^_0^(g_0/g_k) e^(-rho k / g_k) (M~_k / M~_0)^(-1/g_k)`.
pub fn solve_complete_power(m: &MarketModel, p: &HabitPreferences, eps: &AdaptedProcess) -> Result<CompletePowerSolution> {
    check_inputs(m, p, eps)?;
    require_complete(m)?;
    let tree = m.tree();
    let t = tree.horizon();
    let (gammas, rho): (Vec<f64>, f64) = match p.family() {
        UtilityFamily::Power { gammas, rho } => (gammas[p.offset()..].to_vec(), *rho),
        UtilityFamily::Log { rho } => (vec![1.0; t + 1], *rho),
        _ => return Err(Error::WrongUtilityFamily("power or log utility required".into())),
    };
    let mm = &m.kernel()?.aggregate;
    let mt = perturbed_aggregate_spd(tree, mm, p.beta());
    let mt0 = mt.at(0).value(0);
    let chain = p.beta().chain_coefficients();
    let off = p.offset() as f64;
    // e_i = c^_i / c^_0^(g_0/g_i).
    let e: Vec<RandomVariable> = (0..=t)
        .map(|i| {
            let w = (-rho * (i as f64 + off)).exp() / (-rho * off).exp();
            mt.at(i).map(|v| (w * mt0 / v).powf(1.0 / gammas[i]))
        })
        .collect();
    let q: Vec<f64> = gammas.iter().map(|g| gammas[0] / g).collect();
    let weight: Vec<f64> = (0..=t).map(|i| tree.inner(mt.at(i), &e[i])).collect();
    let habit_cost: f64 = (0..=t).map(|i| tree.inner(mt.at(i), p.habit().at(i))).sum();
    let target = price_of(tree, mm, eps) - habit_cost;
    if !(target > 0.0) {
        return Err(Error::Infeasible("endowment does not cover the baseline habit".into()));
    }
    let lhs = |y: f64| -> f64 { (0..=t).map(|i| y.powf(q[i]) * weight[i]).sum() };
    let uniform = q.iter().all(|&x| x == 1.0);
    let y = if uniform {
        target / weight.iter().sum::<f64>()
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut k = 0;
        while lhs(hi) < target {
            hi *= 2.0;
            k += 1;
            if k > 60 {
                return Err(Error::BracketFailure("budget not bracketed".into()));
            }
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if lhs(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let chat: Vec<RandomVariable> = (0..=t).map(|i| e[i].scale(y.powf(q[i]))).collect();
    let c: Vec<RandomVariable> = (0..=t)
        .map(|k| {
            let mut ck = tree.constant(k, 0.0);
            for i in 0..=k {
                let ci = chain[i][k];
                if ci != 0.0 {
                    let term = tree.zip(&chat[i], p.habit().at(i), |a, b| a + b);
                    ck = tree.zip(&ck, &term, |a, b| a + ci * b);
                }
            }
            ck
        })
        .collect();
    let c = AdaptedProcess::new(tree, c)?;
    let slope = if uniform {
        // D^(i)_k = C[i][k] e_i and F^(i)_k = sum_{j >= max(i, k)} E[(M_j / M_k) D^(i)_j | G_k].
        let comps = (0..=t)
            .map(|k| {
                let mut num = tree.constant(k, 0.0);
                let mut den = tree.constant(k, 0.0);
                for i in 0..=t {
                    if i <= k {
                        num = tree.zip(&num, &e[i], |a, b| a + chain[i][k] * b);
                    }
                    for j in i.max(k)..=t {
                        let d = e[i].map(|v| chain[i][j] * v);
                        let disc = tree.zip(&tree.zip(mm.at(j), &d, |a, b| a * b), mm.at(k), |a, b| a / b);
                        den = tree.zip(&den, &tree.condexp(&disc, k), |a, b| a + b);
                    }
                }
                tree.zip(&num, &den, |a, b| a / b)
            })
            .collect();
        Some(AdaptedProcess::new(tree, comps)?)
    } else {
        None
    };
    let diag = Diagnostics { method: "complete_power".into(), ..Diagnostics::default() };
    let solution = Solution::assemble(m, p, eps, c, None, diag)?;
    Ok(CompletePowerSolution { solution, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::*;
    use crate::preferences::HabitWeights;

    fn two_period_complete() -> MarketModel {
        let tree = EventTree::from_conditional(&[vec![vec![0.4, 0.6]], vec![vec![0.5, 0.5], vec![0.3, 0.7]]]).unwrap();
        MarketModel::new(
            tree,
            1,
            vec![vec![RandomVariable::new(0, vec![1.0])], vec![RandomVariable::new(1, vec![1.1, 0.9])]],
            vec![
                vec![RandomVariable::new(1, vec![0.05, 0.02])],
                vec![RandomVariable::new(2, vec![1.5, 0.9, 1.2, 0.6])],
            ],
            vec![RandomVariable::new(0, vec![0.03]), RandomVariable::new(1, vec![0.02, 0.04])],
            false,
        )
        .unwrap()
    }

    #[test]
    fn complete_solvers_agree_with_newton() {
        let m = two_period_complete();
        let tree = m.tree();
        let h = AdaptedProcess::constant(tree, 0.05);
        let eps = AdaptedProcess::from_levels(tree, vec![vec![2.0], vec![0.3, 0.5], vec![0.2, 0.4, 0.1, 0.3]]).unwrap();
        for fam in [
            UtilityFamily::Power { gammas: vec![2.0, 2.0, 2.0], rho: 0.05 },
            UtilityFamily::Power { gammas: vec![1.0, 2.0, 3.0], rho: 0.0 },
        ] {
            let p = HabitPreferences::new(tree, fam, HabitWeights::one_lag(2, 0.5), Some(h.clone())).unwrap();
            let newton = solve_general(&m, &p, &eps).unwrap();
            let general = solve_complete_general(&m, &p, &eps).unwrap();
            let power = solve_complete_power(&m, &p, &eps).unwrap();
            assert!(general.consumption.max_abs_diff(&newton.consumption) < 1e-9);
            assert!(power.solution.consumption.max_abs_diff(&newton.consumption) < 1e-9);
        }
    }

    #[test]
    fn uniform_power_slope_links_consumption_and_wealth() {
        let m = two_period_complete();
        let tree = m.tree();
        let p = HabitPreferences::new(tree, UtilityFamily::power(3.0, 0.0, 2), HabitWeights::one_lag(2, 0.4), None).unwrap();
        let eps = AdaptedProcess::from_levels(tree, vec![vec![2.0], vec![0.0, 0.0], vec![0.0; 4]]).unwrap();
        let s = solve_complete_power(&m, &p, &eps).unwrap();
        let slope = s.slope.unwrap();
        // No habit or later endowment: c_k = slope_k * (W_k + eps_k) for k >= 1 and c_0 = slope_0 eps_0.
        assert!((s.solution.consumption.at(0).value(0) - slope.at(0).value(0) * 2.0).abs() < 1e-12);
        for k in 1..=2 {
            for a in 0..tree.n_atoms(k) {
                let expect = slope.at(k).value(a) * s.solution.wealth.at(k).value(a);
                assert!((s.solution.consumption.at(k).value(a) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exponential_recursion_matches_newton() {
        let tree = EventTree::regular(2, 2).unwrap();
        let m = MarketModel::new(
            tree.clone(),
            0,
            vec![vec![], vec![]],
            vec![vec![], vec![]],
            vec![RandomVariable::new(0, vec![0.03]), RandomVariable::new(1, vec![0.05, 0.05])],
            false,
        )
        .unwrap();
        let eps = AdaptedProcess::from_levels(&tree, vec![vec![1.0], vec![0.5, 1.5], vec![0.2, 0.9, 0.4, 1.1]]).unwrap();
        let h = AdaptedProcess::from_levels(&tree, vec![vec![0.1], vec![0.0, 0.2], vec![0.1, 0.0, 0.3, 0.2]]).unwrap();
        for b in [0.0, 0.5] {
            let p = HabitPreferences::new(
                &tree,
                UtilityFamily::Exponential { gamma: 1.5, rho: 0.02 },
                HabitWeights::one_lag(2, b),
                Some(h.clone()),
            )
            .unwrap();
            let newton = solve_general(&m, &p, &eps).unwrap();
            let rec = solve_exponential_bonds(&m, &p, &eps).unwrap();
            assert!(rec.solution.consumption.max_abs_diff(&newton.consumption) < 1e-9, "beta {b}");
            assert!(rec.coefficients.l.iter().all(|&l| l > 0.0 && l <= 1.0));
            // X_k = M~_{k-1} / M~_k.
            let mt = perturbed_aggregate_spd(&tree, &m.kernel().unwrap().aggregate, p.beta());
            for k in 1..=2 {
                assert!((rec.coefficients.x[k] - mt.at(k - 1).value(0) / mt.at(k).value(0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exponential_rejects_risky_assets() {
        let m = binomial(0.0, 1.0, 1.2, 0.9);
        let tree = m.tree();
        let p = HabitPreferences::new(tree, UtilityFamily::Exponential { gamma: 1.0, rho: 0.0 }, HabitWeights::none(1), None)
            .unwrap();
        let eps = AdaptedProcess::constant(tree, 1.0);
        assert!(matches!(solve_exponential_bonds(&m, &p, &eps), Err(Error::WrongMarketClass(_))));
    }

    #[test]
    fn power_no_endowment_fraction() {
        let m = trinomial_incomplete();
        let tree = m.tree();
        let p = HabitPreferences::new(tree, UtilityFamily::power(2.0, 0.0, 2), HabitWeights::one_lag(2, 0.5), None).unwrap();
        let mut eps = AdaptedProcess::zeros(tree);
        eps.at_mut(0).values_mut()[0] = 3.0;
        let s = solve_power_no_endowment(&m, &p, &eps).unwrap();
        let direct = solve_general(&m, &p, &eps).unwrap();
        assert!(s.solution.consumption.max_abs_diff(&direct.consumption) < 1e-9);
        for k in 0..=2 {
            assert!(s.consumption_fraction.at(k).values().iter().all(|&a| a > 0.0 && a <= 1.0 + 1e-12));
        }
    }
}
