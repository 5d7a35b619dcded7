//! Time-separable utilities of habit-adjusted consumption.
//!
//! Perturbed consumption is `c^_k = c_k - sum_{l<k} beta^(k)_l c_l - h_k`
//! and the objective is `E[sum_k u_k(c^_k)]`.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{classify_market, perturbed_aggregate_spd, MarketClass, MarketModel};
use crate::tree::{AdaptedProcess, EventTree, RandomVariable};

/// A user-supplied period utility on `(lower_bound, inf)`: strictly
/// increasing, strictly concave, with `u' -> inf` at the lower bound when
/// that bound is finite.
pub trait Utility: Send + Sync + Debug {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
    fn d3(&self, _x: f64) -> Option<f64> {
        None
    }
    fn lower_bound(&self) -> f64 {
        0.0
    }
    /// Inverse of `u'` by bisection; `u'` is decreasing.
    fn inverse_d1(&self, y: f64) -> f64 {
        let lb = self.lower_bound();
        let (mut lo, mut hi) = if lb.is_finite() { (lb, lb + 1.0) } else { (-1.0, 1.0) };
        while self.d1(hi) > y {
            let w = hi - lo;
            hi += 2.0 * w;
        }
        if !lb.is_finite() {
            while self.d1(lo) < y {
                let w = hi - lo;
                lo -= 2.0 * w;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.d1(mid) > y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// The utility of one period, discount already applied.
#[derive(Debug, Clone)]
pub enum PeriodUtility {
    /// `w x^(1-gamma) / (1-gamma)`, `gamma > 0`, `gamma != 1`.
    Power { gamma: f64, weight: f64 },
    /// `w ln x`.
    Log { weight: f64 },
    /// `-w exp(-gamma x)`.
    Exponential { gamma: f64, weight: f64 },
    Custom(Arc<dyn Utility>),
}

impl PeriodUtility {
    /// Infimum of the domain; `-inf` for exponential utility.
    pub fn lower_bound(&self) -> f64 {
        match self {
            PeriodUtility::Exponential { .. } => f64::NEG_INFINITY,
            PeriodUtility::Custom(u) => u.lower_bound(),
            _ => 0.0,
        }
    }

    pub fn in_domain(&self, x: f64) -> bool {
        x.is_finite() && x > self.lower_bound()
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            PeriodUtility::Power { gamma, weight } => weight * x.powf(1.0 - gamma) / (1.0 - gamma),
            PeriodUtility::Log { weight } => weight * x.ln(),
            PeriodUtility::Exponential { gamma, weight } => -weight * (-gamma * x).exp(),
            PeriodUtility::Custom(ref u) => u.value(x),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            PeriodUtility::Power { gamma, weight } => weight * x.powf(-gamma),
            PeriodUtility::Log { weight } => weight / x,
            PeriodUtility::Exponential { gamma, weight } => gamma * weight * (-gamma * x).exp(),
            PeriodUtility::Custom(ref u) => u.d1(x),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            PeriodUtility::Power { gamma, weight } => -gamma * weight * x.powf(-gamma - 1.0),
            PeriodUtility::Log { weight } => -weight / (x * x),
            PeriodUtility::Exponential { gamma, weight } => -gamma * gamma * weight * (-gamma * x).exp(),
            PeriodUtility::Custom(ref u) => u.d2(x),
        }
    }

    pub fn d3(&self, x: f64) -> Option<f64> {
        match *self {
            PeriodUtility::Power { gamma, weight } => Some(gamma * (gamma + 1.0) * weight * x.powf(-gamma - 2.0)),
            PeriodUtility::Log { weight } => Some(2.0 * weight / (x * x * x)),
            PeriodUtility::Exponential { gamma, weight } => Some(gamma.powi(3) * weight * (-gamma * x).exp()),
            PeriodUtility::Custom(ref u) => u.d3(x),
        }
    }

    pub fn inverse_d1(&self, y: f64) -> f64 {
        match *self {
            PeriodUtility::Power { gamma, weight } => (y / weight).powf(-1.0 / gamma),
            PeriodUtility::Log { weight } => weight / y,
            PeriodUtility::Exponential { gamma, weight } => -(y / (gamma * weight)).ln() / gamma,
            PeriodUtility::Custom(ref u) => u.inverse_d1(y),
        }
    }
}

/// Utility family shared by all periods. Power utility may vary `gamma` by
/// period; `gamma = 1` means log utility for that period.
#[derive(Debug, Clone)]
pub enum UtilityFamily {
    Power { gammas: Vec<f64>, rho: f64 },
    Log { rho: f64 },
    Exponential { gamma: f64, rho: f64 },
    Custom(Vec<Arc<dyn Utility>>),
}

impl UtilityFamily {
    pub fn power(gamma: f64, rho: f64, horizon: usize) -> Self {
        UtilityFamily::Power { gammas: vec![gamma; horizon + 1], rho }
    }

    pub fn period(&self, k: usize) -> PeriodUtility {
        match self {
            UtilityFamily::Power { gammas, rho } => {
                let weight = (-rho * k as f64).exp();
                if gammas[k] == 1.0 {
                    PeriodUtility::Log { weight }
                } else {
                    PeriodUtility::Power { gamma: gammas[k], weight }
                }
            }
            UtilityFamily::Log { rho } => PeriodUtility::Log { weight: (-rho * k as f64).exp() },
            UtilityFamily::Exponential { gamma, rho } => {
                PeriodUtility::Exponential { gamma: *gamma, weight: (-rho * k as f64).exp() }
            }
            UtilityFamily::Custom(us) => PeriodUtility::Custom(us[k].clone()),
        }
    }

    /// Number of periods the family covers, if bounded.
    fn periods(&self) -> Option<usize> {
        match self {
            UtilityFamily::Power { gammas, .. } => Some(gammas.len()),
            UtilityFamily::Custom(us) => Some(us.len()),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPreferences(m));
        match self {
            UtilityFamily::Power { gammas, rho } => {
                if let Some(g) = gammas.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
                    return bad(format!("power utility needs gamma > 0, found {g}"));
                }
                if !rho.is_finite() {
                    return bad("rho must be finite".into());
                }
            }
            UtilityFamily::Exponential { gamma, rho } => {
                if !(*gamma > 0.0) || !gamma.is_finite() || !rho.is_finite() {
                    return bad(format!("exponential utility needs gamma > 0, found {gamma}"));
                }
            }
            UtilityFamily::Log { rho } => {
                if !rho.is_finite() {
                    return bad("rho must be finite".into());
                }
            }
            UtilityFamily::Custom(_) => {}
        }
        Ok(())
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self, UtilityFamily::Exponential { .. })
    }

    /// The common relative risk aversion when every period is power or log
    /// with the same `gamma`.
    pub fn uniform_gamma(&self) -> Option<f64> {
        match self {
            UtilityFamily::Power { gammas, .. } => {
                let g = gammas[0];
                gammas.iter().all(|&x| x == g).then_some(g)
            }
            UtilityFamily::Log { .. } => Some(1.0),
            _ => None,
        }
    }

    pub fn rho(&self) -> Option<f64> {
        match self {
            UtilityFamily::Power { rho, .. } | UtilityFamily::Log { rho } | UtilityFamily::Exponential { rho, .. } => {
                Some(*rho)
            }
            UtilityFamily::Custom(_) => None,
        }
    }
}

/// Habit weights `beta^(k)_l >= 0` for `l < k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HabitWeights {
    rows: Vec<Vec<f64>>,
}

impl HabitWeights {
    /// `rows[k]` lists `beta^(k)_0..beta^(k)_{k-1}`; row 0 is empty.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (k, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(Error::InvalidPreferences(format!("habit row {k} needs {k} weights, found {}", r.len())));
            }
            if r.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
                return Err(Error::InvalidPreferences(format!("habit weights in row {k} must be non-negative")));
            }
        }
        Ok(HabitWeights { rows })
    }

    pub fn none(horizon: usize) -> Self {
        HabitWeights { rows: (0..=horizon).map(|k| vec![0.0; k]).collect() }
    }

    /// `beta^(k)_{k-1} = b`, all other weights zero.
    pub fn one_lag(horizon: usize, b: f64) -> Self {
        let mut w = Self::none(horizon);
        for k in 1..=horizon {
            w.rows[k][k - 1] = b;
        }
        w
    }

    pub fn horizon(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `beta^(k)_l`, zero unless `l < k`.
    pub fn get(&self, k: usize, l: usize) -> f64 {
        if l < k {
            self.rows[k][l]
        } else {
            0.0
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(|&b| b == 0.0))
    }

    /// Weights among periods `from..=T`, re-indexed to start at 0.
    pub fn tail(&self, from: usize) -> Self {
        HabitWeights { rows: (from..self.rows.len()).map(|k| self.rows[k][from..].to_vec()).collect() }
    }

    /// `C[k][j]` for `j >= k`: the sum over all chains `k = l_0 < ... < l_n = j`
    /// of the products of weights, with `C[k][k] = 1`.
    pub fn chain_coefficients(&self) -> Vec<Vec<f64>> {
        let t = self.horizon();
        let mut c = vec![vec![0.0; t + 1]; t + 1];
        for j in 0..=t {
            c[j][j] = 1.0;
            for k in (0..j).rev() {
                c[k][j] = (k + 1..=j).map(|m| self.get(m, k) * c[m][j]).sum();
            }
        }
        c
    }
}

/// Preferences over consumption on a tree: a utility family, habit weights
/// and a baseline habit `h`. `offset` shifts period indices so that
/// continuation problems keep the discounting of the original clock.
#[derive(Debug, Clone)]
pub struct HabitPreferences {
    family: UtilityFamily,
    beta: HabitWeights,
    habit: AdaptedProcess,
    offset: usize,
}

impl HabitPreferences {
    pub fn new(tree: &EventTree, family: UtilityFamily, beta: HabitWeights, habit: Option<AdaptedProcess>) -> Result<Self> {
        family.validate()?;
        let t = tree.horizon();
        if beta.horizon() != t {
            return Err(Error::InvalidPreferences(format!("habit weights cover {} periods, tree has {t}", beta.horizon())));
        }
        if let Some(n) = family.periods() {
            if n != t + 1 {
                return Err(Error::InvalidPreferences(format!("utility family lists {n} periods, need {}", t + 1)));
            }
        }
        let habit = match habit {
            Some(h) => {
                AdaptedProcess::new(tree, h.components().to_vec())?;
                h
            }
            None => AdaptedProcess::zeros(tree),
        };
        Ok(HabitPreferences { family, beta, habit, offset: 0 })
    }

    /// Preferences for the periods `from..` seen from one node, with the
    /// habit process already restricted to the subtree.
    pub(crate) fn continuation(&self, from: usize, habit: AdaptedProcess) -> Self {
        HabitPreferences { family: self.family.clone(), beta: self.beta.tail(from), habit, offset: self.offset + from }
    }

    pub fn family(&self) -> &UtilityFamily {
        &self.family
    }

    pub fn beta(&self) -> &HabitWeights {
        &self.beta
    }

    pub fn habit(&self) -> &AdaptedProcess {
        &self.habit
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn horizon(&self) -> usize {
        self.beta.horizon()
    }

    /// Utility of local period `k`.
    pub fn period(&self, k: usize) -> PeriodUtility {
        self.family.period(k + self.offset)
    }

    /// Common risk aversion over the periods this problem covers.
    pub fn uniform_gamma(&self) -> Option<f64> {
        match &self.family {
            UtilityFamily::Power { gammas, .. } => {
                let g = &gammas[self.offset..];
                g.iter().all(|&x| x == g[0]).then_some(g[0])
            }
            UtilityFamily::Log { .. } => Some(1.0),
            _ => None,
        }
    }
}

/// `c^_k = c_k - sum_{l<k} beta^(k)_l c_l - h_k`.
pub fn perturbed_consumption(p: &HabitPreferences, tree: &EventTree, c: &AdaptedProcess) -> AdaptedProcess {
    let comps = (0..=tree.horizon())
        .map(|k| {
            let mut x = tree.zip(c.at(k), p.habit.at(k), |a, b| a - b);
            for l in 0..k {
                let b = p.beta.get(k, l);
                if b != 0.0 {
                    x = tree.zip(&x, c.at(l), |a, v| a - b * v);
                }
            }
            x
        })
        .collect();
    AdaptedProcess::new(tree, comps).expect("shape preserved")
}

fn check_domain(p: &HabitPreferences, chat: &AdaptedProcess) -> Result<()> {
    for (k, x) in chat.components().iter().enumerate() {
        let u = p.period(k);
        if let Some(atom) = x.values().iter().position(|&v| !u.in_domain(v)) {
            return Err(Error::DomainViolation { period: k, atom, value: x.value(atom) });
        }
    }
    Ok(())
}

/// `E[sum_k u_k(c^_k)]`.
pub fn utility_value(p: &HabitPreferences, tree: &EventTree, c: &AdaptedProcess) -> Result<f64> {
    let chat = perturbed_consumption(p, tree, c);
    check_domain(p, &chat)?;
    Ok((0..=tree.horizon())
        .map(|k| {
            let u = p.period(k);
            tree.expectation(&chat.at(k).map(|x| u.value(x)))
        })
        .sum())
}

/// `u'_k(c^_k)` for every period.
pub fn marginal_utilities(p: &HabitPreferences, tree: &EventTree, c: &AdaptedProcess) -> Result<AdaptedProcess> {
    let chat = perturbed_consumption(p, tree, c);
    check_domain(p, &chat)?;
    let comps = (0..=tree.horizon()).map(|k| {
        let u = p.period(k);
        chat.at(k).map(|x| u.d1(x))
    });
    AdaptedProcess::new(tree, comps.collect())
}

/// `R_k(c) = u'_k(c^_k) - sum_{m>k} beta^(m)_k E[u'_m(c^_m) | G_k]`: the
/// marginal value of one unit of consumption at `k` net of the habit it adds.
pub fn habit_adjusted_marginal(p: &HabitPreferences, tree: &EventTree, c: &AdaptedProcess) -> Result<AdaptedProcess> {
    let mu = marginal_utilities(p, tree, c)?;
    let t = tree.horizon();
    let comps = (0..=t)
        .map(|k| {
            let mut r = mu.at(k).clone();
            for m in k + 1..=t {
                let b = p.beta.get(m, k);
                if b != 0.0 {
                    r = tree.zip(&r, &tree.condexp(mu.at(m), k), |a, e| a - b * e);
                }
            }
            r
        })
        .collect();
    AdaptedProcess::new(tree, comps)
}

/// `max |P^k[R_k(c) / R_{k-1}(c)] - M_k / M_{k-1}|` for `k = 1..=T`.
/// Zero at the optimum.
pub fn foc_residual(m: &MarketModel, p: &HabitPreferences, c: &AdaptedProcess) -> Result<Vec<f64>> {
    let tree = m.tree();
    let r = habit_adjusted_marginal(p, tree, c)?;
    let kernel = m.kernel()?;
    (1..=tree.horizon())
        .map(|k| {
            let prev = r.at(k - 1);
            if let Some(atom) = prev.values().iter().position(|&v| v == 0.0) {
                return Err(Error::DivisionByZeroSpd { period: k - 1, atom });
            }
            let ratio = tree.zip(r.at(k), prev, |a, b| a / b);
            Ok(m.project(&ratio, k).max_abs_diff(&kernel.aggregate_step(tree, k)))
        })
        .collect()
}

/// Residuals of the reduced first-order condition
/// `P^k[u'_k(c^_k)] = (M~_k / M~_{k-1}) u'_{k-1}(c^_{k-1})`, which is exact
/// at the optimum in complete, idiosyncratic and deterministic-interest markets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplifiedFoc {
    pub residuals: Vec<f64>,
    pub class: MarketClass,
    pub deterministic_interest: bool,
    /// False when the market is outside the classes where the identity holds;
    /// the residuals are still reported.
    pub applicable: bool,
}

pub fn simplified_foc_residual(m: &MarketModel, p: &HabitPreferences, c: &AdaptedProcess) -> Result<SimplifiedFoc> {
    let tree = m.tree();
    let cls = classify_market(m)?;
    let kernel = m.kernel()?;
    let mt = perturbed_aggregate_spd(tree, &kernel.aggregate, p.beta());
    let mu = marginal_utilities(p, tree, c)?;
    let mut residuals = Vec::with_capacity(tree.horizon());
    for k in 1..=tree.horizon() {
        let lhs = m.project(mu.at(k), k);
        let prev = mt.at(k - 1);
        if let Some(atom) = prev.values().iter().position(|&v| v == 0.0) {
            return Err(Error::DivisionByZeroSpd { period: k - 1, atom });
        }
        let ratio = tree.zip(mt.at(k), prev, |a, b| a / b);
        let rhs = tree.zip(&ratio, mu.at(k - 1), |a, b| a * b);
        residuals.push(lhs.max_abs_diff(&rhs));
    }
    let applicable = matches!(cls.class, MarketClass::Complete | MarketClass::Idiosyncratic) || cls.deterministic_interest;
    Ok(SimplifiedFoc { residuals, class: cls.class, deterministic_interest: cls.deterministic_interest, applicable })
}

/// Serialized preferences. `gamma` is a scalar or one value per period;
/// `beta` rows follow [`HabitWeights::new`], or `habit_lag` gives one-lag
/// weights; `h` lists the baseline habit per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencesSpec {
    pub family: String,
    #[serde(default)]
    pub gamma: Option<GammaSpec>,
    #[serde(default)]
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub habit_lag: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Scalar(f64),
    PerPeriod(Vec<f64>),
}

impl PreferencesSpec {
    pub fn build(&self, tree: &EventTree) -> Result<HabitPreferences> {
        let t = tree.horizon();
        let gammas = |g: &Option<GammaSpec>| -> Result<Vec<f64>> {
            match g {
                Some(GammaSpec::Scalar(x)) => Ok(vec![*x; t + 1]),
                Some(GammaSpec::PerPeriod(v)) => Ok(v.clone()),
                None => Err(Error::InvalidPreferences("gamma is required".into())),
            }
        };
        let family = match self.family.as_str() {
            "power" => UtilityFamily::Power { gammas: gammas(&self.gamma)?, rho: self.rho },
            "log" => UtilityFamily::Log { rho: self.rho },
            "exp" | "exponential" => match &self.gamma {
                Some(GammaSpec::Scalar(g)) => UtilityFamily::Exponential { gamma: *g, rho: self.rho },
                _ => return Err(Error::InvalidPreferences("exponential utility needs a scalar gamma".into())),
            },
            other => return Err(Error::InvalidPreferences(format!("unknown utility family '{other}'"))),
        };
        let beta = match (&self.beta, self.habit_lag) {
            (Some(_), Some(_)) => return Err(Error::InvalidPreferences("give either beta or habit_lag".into())),
            (Some(rows), None) => HabitWeights::new(rows.clone())?,
            (None, Some(b)) => {
                if !(b >= 0.0) {
                    return Err(Error::InvalidPreferences("habit_lag must be non-negative".into()));
                }
                HabitWeights::one_lag(t, b)
            }
            (None, None) => HabitWeights::none(t),
        };
        let habit = match &self.h {
            Some(levels) => Some(AdaptedProcess::from_levels(tree, levels.clone())?),
            None => None,
        };
        HabitPreferences::new(tree, family, beta, habit)
    }

    pub fn from_preferences(p: &HabitPreferences) -> Option<Self> {
        let (family, gamma, rho) = match p.family() {
            UtilityFamily::Power { gammas, rho } => ("power", Some(GammaSpec::PerPeriod(gammas.clone())), *rho),
            UtilityFamily::Log { rho } => ("log", None, *rho),
            UtilityFamily::Exponential { gamma, rho } => ("exp", Some(GammaSpec::Scalar(*gamma)), *rho),
            UtilityFamily::Custom(_) => return None,
        };
        Some(PreferencesSpec {
            family: family.into(),
            gamma,
            rho,
            beta: Some(p.beta().rows().to_vec()),
            habit_lag: None,
            h: Some(p.habit().to_levels()),
            seed: None,
        })
    }
}

/// Pointwise helper: a random variable of period-`k` marginal utilities.
pub fn period_marginal(p: &HabitPreferences, k: usize, chat: &RandomVariable) -> RandomVariable {
    let u = p.period(k);
    chat.map(|x| u.d1(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let us = [
            PeriodUtility::Power { gamma: 2.5, weight: 0.9 },
            PeriodUtility::Log { weight: 1.1 },
            PeriodUtility::Exponential { gamma: 0.7, weight: 1.0 },
        ];
        let h = 1e-5;
        for u in &us {
            for &x in &[0.3, 1.0, 2.7] {
                let d1 = (u.value(x + h) - u.value(x - h)) / (2.0 * h);
                let d2 = (u.d1(x + h) - u.d1(x - h)) / (2.0 * h);
                let d3 = (u.d2(x + h) - u.d2(x - h)) / (2.0 * h);
                assert!((d1 - u.d1(x)).abs() < 1e-7 * (1.0 + d1.abs()));
                assert!((d2 - u.d2(x)).abs() < 1e-6 * (1.0 + d2.abs()));
                assert!((d3 - u.d3(x).unwrap()).abs() < 1e-5 * (1.0 + d3.abs()));
                assert!((u.inverse_d1(u.d1(x)) - x).abs() < 1e-12);
            }
        }
    }

    #[derive(Debug)]
    struct Sqrt;
    impl Utility for Sqrt {
        fn value(&self, x: f64) -> f64 {
            2.0 * x.sqrt()
        }
        fn d1(&self, x: f64) -> f64 {
            1.0 / x.sqrt()
        }
        fn d2(&self, x: f64) -> f64 {
            -0.5 * x.powf(-1.5)
        }
    }

    #[test]
    fn custom_inverse_by_bisection() {
        let u = Sqrt;
        assert!((u.inverse_d1(0.5) - 4.0).abs() < 1e-10);
    }

    #[test]
    fn gamma_one_dispatches_to_log() {
        let f = UtilityFamily::Power { gammas: vec![1.0, 2.0], rho: 0.0 };
        assert!(matches!(f.period(0), PeriodUtility::Log { .. }));
        assert!(matches!(f.period(1), PeriodUtility::Power { .. }));
    }

    #[test]
    fn rejects_zero_gamma() {
        let tree = EventTree::regular(1, 2).unwrap();
        let r = HabitPreferences::new(&tree, UtilityFamily::power(0.0, 0.0, 1), HabitWeights::none(1), None);
        assert!(matches!(r, Err(Error::InvalidPreferences(_))));
    }

    #[test]
    fn chain_coefficients_sum_paths() {
        let mut rows = HabitWeights::none(3).rows().to_vec();
        rows[1][0] = 0.5;
        rows[2][1] = 0.5;
        rows[2][0] = 0.2;
        rows[3][2] = 0.5;
        let w = HabitWeights::new(rows).unwrap();
        let c = w.chain_coefficients();
        assert!((c[0][2] - (0.2 + 0.25)).abs() < 1e-15);
        assert!((c[0][3] - 0.5 * 0.45).abs() < 1e-15);
        assert_eq!(c[1][1], 1.0);
    }

    #[test]
    fn perturbed_consumption_subtracts_habit() {
        let tree = EventTree::regular(2, 2).unwrap();
        let h = AdaptedProcess::constant(&tree, 0.1);
        let p = HabitPreferences::new(&tree, UtilityFamily::Log { rho: 0.0 }, HabitWeights::one_lag(2, 0.5), Some(h)).unwrap();
        let c = AdaptedProcess::from_levels(&tree, vec![vec![1.0], vec![2.0, 3.0], vec![1.0, 1.0, 1.0, 1.0]]).unwrap();
        let chat = perturbed_consumption(&p, &tree, &c);
        assert!((chat.at(0).value(0) - 0.9).abs() < 1e-15);
        assert!((chat.at(1).value(1) - (3.0 - 0.5 - 0.1)).abs() < 1e-15);
        assert!((chat.at(2).value(2) - (1.0 - 1.5 - 0.1)).abs() < 1e-15);
        assert!(matches!(utility_value(&p, &tree, &c), Err(Error::DomainViolation { period: 2, .. })));
    }

    #[test]
    fn one_period_sqrt_example_marginal() {
        // u'(c^) = 1/sqrt(c^) for gamma = 1/2.
        let tree = EventTree::regular(1, 1).unwrap();
        let p = HabitPreferences::new(&tree, UtilityFamily::power(0.5, 0.0, 1), HabitWeights::none(1), None).unwrap();
        let c = AdaptedProcess::from_levels(&tree, vec![vec![4.0], vec![9.0]]).unwrap();
        let r = habit_adjusted_marginal(&p, &tree, &c).unwrap();
        assert!((r.at(0).value(0) - 0.5).abs() < 1e-15);
        assert!((r.at(1).value(0) - 1.0 / 3.0).abs() < 1e-15);
    }
}
