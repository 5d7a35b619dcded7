//! Small markets with explicit optima: a one-period bond where only power
//! utility yields concave (indeed linear) consumption, and a one-period
//! complete market where mixing log and power utility under a full habit
//! makes consumption convex in wealth.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::preferences::{HabitPreferences, HabitWeights, UtilityFamily};
use crate::solvers::solve_general;
use crate::tree::{AdaptedProcess, EventTree, RandomVariable};

/// One period, one state, a bond with gross return `gross`.
pub fn one_period_bond(gross: f64) -> Result<MarketModel> {
    let tree = EventTree::regular(1, 1)?;
    MarketModel::new(tree, 0, vec![vec![]], vec![vec![]], vec![RandomVariable::new(0, vec![gross - 1.0])], gross < 1.0)
}

/// One period with state probabilities `probs` and a complete set of Arrow
/// securities priced by the state-price density `m1`. The bond earns
/// `1 / E[M_1] - 1`.
pub fn one_period_complete(probs: &[f64], m1: &[f64]) -> Result<MarketModel> {
    if probs.len() != m1.len() || probs.is_empty() {
        return Err(Error::InvalidMarket("state probabilities and densities differ in length".into()));
    }
    if m1.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidMarket("state-price density must be positive".into()));
    }
    let tree = EventTree::from_conditional(&[vec![probs.to_vec()]])?;
    let q = tree.atom_probs(1).to_vec();
    let mean: f64 = q.iter().zip(m1).map(|(a, b)| a * b).sum();
    let n = m1.len() - 1;
    let prices = (0..n).map(|i| RandomVariable::new(0, vec![q[i] * m1[i]])).collect();
    let dividends = (0..n)
        .map(|i| RandomVariable::new(1, (0..=n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()))
        .collect();
    let rate = 1.0 / mean - 1.0;
    MarketModel::new(tree, n, vec![prices], vec![dividends], vec![RandomVariable::new(0, vec![rate])], rate < 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearityReport {
    pub gamma: f64,
    /// Gross interest factor.
    pub r: f64,
    /// `r^(1 - 1/gamma) / (1 + r^(1 - 1/gamma))`.
    pub slope_formula: f64,
    pub eps0: Vec<f64>,
    pub c0: Vec<f64>,
    /// `max |c_0 - slope eps_0|` over the grid.
    pub max_error: f64,
    pub fit_slope: f64,
    pub fit_intercept: f64,
    /// Largest residual of the least-squares line through the solver output.
    pub fit_residual: f64,
}

impl LinearityReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_error <= tol && self.fit_residual <= tol
    }
}

/// Power utility without habits, one period, bond with gross factor `r`:
/// optimal consumption is linear in initial wealth.
pub fn linearity_law_check(gamma: f64, r: f64, grid: &[f64]) -> Result<LinearityReport> {
    if !(gamma > 0.0 && r > 0.0) {
        return Err(Error::PreconditionViolated("gamma and r must be positive".into()));
    }
    let m = one_period_bond(r)?;
    let tree = m.tree();
    let p = HabitPreferences::new(tree, UtilityFamily::power(gamma, 0.0, 1), HabitWeights::none(1), None)?;
    let x = r.powf(1.0 - 1.0 / gamma);
    let slope = x / (1.0 + x);
    let c0 = grid
        .iter()
        .map(|&e| {
            let eps = AdaptedProcess::from_levels(tree, vec![vec![e], vec![0.0]])?;
            Ok(solve_general(&m, &p, &eps)?.consumption.at(0).value(0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_error = grid.iter().zip(&c0).map(|(e, c)| (c - slope * e).abs()).fold(0.0, f64::max);
    let (fit_slope, fit_intercept) = least_squares(grid, &c0);
    let fit_residual = grid.iter().zip(&c0).map(|(e, c)| (c - fit_slope * e - fit_intercept).abs()).fold(0.0, f64::max);
    Ok(LinearityReport { gamma, r, slope_formula: slope, eps0: grid.to_vec(), c0, max_error, fit_slope, fit_intercept, fit_residual })
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return (if mx != 0.0 { my / mx } else { 0.0 }, 0.0);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityRow {
    pub eps0: f64,
    pub c0: f64,
    /// State-by-state second-period consumption.
    pub c1: Vec<f64>,
    /// `((sqrt(4 a eps_0 + 4 a c + b^2) - b) / (2a))^2` with `b = E[M_1 sqrt(M_1)]`.
    pub c0_stated: f64,
    /// The same expression with `b = sqrt(a) E[sqrt(M_1)]`.
    pub c0_corrected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    /// `1 + E[M_1]`.
    pub a: f64,
    pub b_stated: f64,
    pub b_corrected: f64,
    /// `E[M_1 eps_1]`.
    pub c: f64,
    pub rows: Vec<ConvexityRow>,
    pub max_error_stated: f64,
    pub max_error_corrected: f64,
    /// `max |c_1 - c_0 - sqrt(c_0 M_1)|`.
    pub c1_error_stated: f64,
    /// `max |c_1 - c_0 - sqrt(c_0 a / M_1)|`.
    pub c1_error_corrected: f64,
    /// Smallest second divided difference of `c_0` over the grid.
    pub min_second_difference: f64,
    /// Range of first divided differences of `c_0`.
    pub min_slope: f64,
    pub max_slope: f64,
}

impl ConvexityReport {
    pub fn convex(&self) -> bool {
        self.min_second_difference > 0.0
    }

    pub fn slopes_in_unit_interval(&self) -> bool {
        self.min_slope > 0.0 && self.max_slope < 1.0
    }
}

/// One period, complete market with density `m1`, `u_0 = ln`, `u_1 = -1/x`,
/// full one-lag habit and no baseline habit. The optimum solves
/// `c_1 = c_0 + sqrt(c_0 a / M_1)` with `a = 1 + E[M_1]`, which makes `c_0`
/// convex in `eps_0`. The stated closed form drops the habit drag on the
/// time-0 marginal utility; both are reported against the solver.
pub fn convexity_counterexample(grid: &[f64], probs: &[f64], m1: &[f64], eps1: &[f64]) -> Result<ConvexityReport> {
    if grid.len() < 3 {
        return Err(Error::PreconditionViolated("at least three grid points are needed".into()));
    }
    if eps1.len() != m1.len() {
        return Err(Error::PreconditionViolated("eps_1 must have one value per state".into()));
    }
    let m = one_period_complete(probs, m1)?;
    let tree = m.tree();
    let q = tree.atom_probs(1).to_vec();
    let ex = |f: &dyn Fn(usize) -> f64| -> f64 { (0..q.len()).map(|i| q[i] * f(i)).sum() };
    let a = 1.0 + ex(&|i| m1[i]);
    let b_stated = ex(&|i| m1[i] * m1[i].sqrt());
    let b_corrected = a.sqrt() * ex(&|i| m1[i].sqrt());
    let c = ex(&|i| m1[i] * eps1[i]);
    let closed = |e: f64, b: f64| ((4.0 * a * e + 4.0 * a * c + b * b).sqrt() - b).powi(2) / (4.0 * a * a);
    let family = UtilityFamily::Power { gammas: vec![1.0, 2.0], rho: 0.0 };
    let p = HabitPreferences::new(tree, family, HabitWeights::one_lag(1, 1.0), None)?;
    let rows = grid
        .iter()
        .map(|&e| {
            let eps = AdaptedProcess::from_levels(tree, vec![vec![e], eps1.to_vec()])?;
            let s = solve_general(&m, &p, &eps)?;
            Ok(ConvexityRow {
                eps0: e,
                c0: s.consumption.at(0).value(0),
                c1: s.consumption.at(1).values().to_vec(),
                c0_stated: closed(e, b_stated),
                c0_corrected: closed(e, b_corrected),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_error_stated = rows.iter().map(|r| (r.c0 - r.c0_stated).abs()).fold(0.0, f64::max);
    let max_error_corrected = rows.iter().map(|r| (r.c0 - r.c0_corrected).abs()).fold(0.0, f64::max);
    let c1_err = |f: &dyn Fn(f64, f64) -> f64| {
        rows.iter()
            .flat_map(|r| r.c1.iter().zip(m1).map(move |(c1, &mv)| (c1 - r.c0 - f(r.c0, mv)).abs()))
            .fold(0.0, f64::max)
    };
    let c1_error_stated = c1_err(&|c0, mv| (c0 * mv).sqrt());
    let c1_error_corrected = c1_err(&|c0, mv| (c0 * a / mv).sqrt());
    let slopes: Vec<f64> = rows.windows(2).map(|w| (w[1].c0 - w[0].c0) / (w[1].eps0 - w[0].eps0)).collect();
    let min_second_difference = rows
        .windows(3)
        .zip(slopes.windows(2))
        .map(|(w, s)| 2.0 * (s[1] - s[0]) / (w[2].eps0 - w[0].eps0))
        .fold(f64::INFINITY, f64::min);
    Ok(ConvexityReport {
        a,
        b_stated,
        b_corrected,
        c,
        rows,
        max_error_stated,
        max_error_corrected,
        c1_error_stated,
        c1_error_corrected,
        min_second_difference,
        min_slope: slopes.iter().copied().fold(f64::INFINITY, f64::min),
        max_slope: slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linearity_slopes() {
        let grid = [0.5, 1.0, 3.0, 7.5];
        for (gamma, r, slope) in [(1.0, 2.0, 0.5), (2.0, 4.0, 2.0 / 3.0), (0.5, 4.0, 0.2)] {
            let rep = linearity_law_check(gamma, r, &grid).unwrap();
            assert!((rep.slope_formula - slope).abs() < 1e-15);
            assert!(rep.passed(1e-8), "{rep:?}");
        }
    }

    #[test]
    fn complete_market_prices_with_the_given_density() {
        let m = one_period_complete(&[0.2, 0.3, 0.5], &[1.5, 0.4, 1.1]).unwrap();
        let mm = &m.kernel().unwrap().aggregate;
        assert!((mm.at(1).value(0) - 1.5).abs() < 1e-12);
        assert!((mm.at(1).value(1) - 0.4).abs() < 1e-12);
        assert!((mm.at(1).value(2) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn counterexample_matches_corrected_form() {
        let grid: Vec<f64> = (0..10).map(|i| 0.5 + i as f64).collect();
        let rep = convexity_counterexample(&grid, &[0.5, 0.5], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(rep.max_error_corrected < 1e-8, "{rep:?}");
        assert!(rep.c1_error_corrected < 1e-8);
        assert!(rep.convex() && rep.slopes_in_unit_interval());
        // eps_0 = 3 lies on the grid at index 2 shifted by 0.5; evaluate it directly.
        let at3 = convexity_counterexample(&[2.9, 3.0, 3.1], &[0.5, 0.5], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((at3.rows[1].c0 - 0.848612181).abs() < 1e-8);
        assert!((at3.rows[1].c0_stated - 1.0).abs() < 1e-12);
    }
}
