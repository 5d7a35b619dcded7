//! Optimal consumption solvers.
//!
//! [`solve_general`] handles every market through a Newton method on the
//! payoff-space parametrization of wealth. The closed-form solvers cover the
//! special cases where the optimum has explicit structure, and
//! [`solve_primal_oracle`] is an independent derivative-free reference.

mod closed_form;
mod newton;
mod oracle;
mod program;
mod subproblem;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub use closed_form::{
    solve_complete_general, solve_complete_power, solve_exponential_bonds, solve_power_no_endowment, CompletePowerSolution,
    ExponentialCoefficients, ExponentialSolution, PowerNoEndowmentSolution,
};
pub use newton::{solve_general, solve_general_with, NewtonOptions, NewtonReport, Start};
pub use oracle::{solve_primal_oracle, OracleOptions, ORACLE_MAX_DIM};
pub use subproblem::{continuation_problem, solve_subproblem, Continuation};

use crate::error::{Error, Result};
use crate::market::{consumption_to_wealth, MarketModel};
use crate::preferences::{foc_residual, habit_adjusted_marginal, utility_value, HabitPreferences, UtilityFamily};
use crate::tree::AdaptedProcess;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub method: String,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// `max |P^k[R_k / R_{k-1}] - M_k / M_{k-1}|` for `k = 1..=T`.
    pub foc_residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

/// An optimal (or candidate) consumption plan with its financing.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub consumption: AdaptedProcess,
    /// `W_k`, the value of remaining net consumption; `W_0 = 0`.
    pub wealth: AdaptedProcess,
    /// `I_k = W_k + eps_k - c_k`, the amount invested at `k`; `I_T = 0`.
    pub investment: AdaptedProcess,
    /// `portfolio[k][atom]`: holdings bought at level `k`, bond first.
    pub portfolio: Vec<Vec<Vec<f64>>>,
    /// The habit-adjusted marginal utility `R(c)`.
    pub marginal: AdaptedProcess,
    pub utility: f64,
    pub diagnostics: Diagnostics,
}

impl Solution {
    /// Completes a consumption plan with wealth, investment, holdings, marginal
    /// utilities and first-order residuals.
    pub(crate) fn assemble(
        m: &MarketModel,
        p: &HabitPreferences,
        eps: &AdaptedProcess,
        consumption: AdaptedProcess,
        wealth: Option<AdaptedProcess>,
        mut diagnostics: Diagnostics,
    ) -> Result<Self> {
        let tree = m.tree();
        let wealth = match wealth {
            Some(w) => w,
            None => consumption_to_wealth(m, &consumption, eps)?,
        };
        let investment = AdaptedProcess::new(
            tree,
            (0..=tree.horizon())
                .map(|k| {
                    let x = tree.zip(wealth.at(k), eps.at(k), |a, b| a + b);
                    tree.zip(&x, consumption.at(k), |a, b| a - b)
                })
                .collect(),
        )?;
        let portfolio = holdings(m, &wealth);
        let marginal = habit_adjusted_marginal(p, tree, &consumption)?;
        let utility = utility_value(p, tree, &consumption)?;
        diagnostics.foc_residuals = foc_residual(m, p, &consumption)?;
        Ok(Solution { consumption, wealth, investment, portfolio, marginal, utility, diagnostics })
    }

    /// Completes a given consumption plan; fails unless the plan is
    /// budget-feasible and inside the utility domain.
    pub fn from_plan(m: &MarketModel, p: &HabitPreferences, eps: &AdaptedProcess, c: AdaptedProcess, method: &str) -> Result<Self> {
        Self::assemble(m, p, eps, c, None, Diagnostics { method: method.into(), ..Diagnostics::default() })
    }

    pub fn max_foc_residual(&self) -> f64 {
        self.diagnostics.foc_residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// A closed form when one is known to apply, Newton otherwise.
    Auto,
    Newton,
    Oracle,
    /// A closed form, or `WrongMarketClass` when none applies.
    Closed,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Method::Auto),
            "newton" => Ok(Method::Newton),
            "oracle" => Ok(Method::Oracle),
            "closed" => Ok(Method::Closed),
            other => Err(Error::Parse(format!("unknown method '{other}'"))),
        }
    }
}

/// Dispatches on the market and utility: complete markets with power or log
/// utility, complete markets with any utility, then bond-only markets with
/// exponential utility. `Closed` additionally tries the power solver for
/// plans without later endowment.
pub fn solve(m: &MarketModel, p: &HabitPreferences, eps: &AdaptedProcess, method: Method) -> Result<Solution> {
    match method {
        Method::Newton => return solve_general(m, p, eps),
        Method::Oracle => return solve_primal_oracle(m, p, eps),
        Method::Auto | Method::Closed => {}
    }
    let closed = if closed_form::is_complete(m) {
        match p.family() {
            UtilityFamily::Power { .. } | UtilityFamily::Log { .. } => solve_complete_power(m, p, eps).map(|s| s.solution),
            _ => solve_complete_general(m, p, eps),
        }
    } else if m.n_assets() == 0 && p.family().is_exponential() {
        solve_exponential_bonds(m, p, eps).map(|s| s.solution)
    } else if method == Method::Closed {
        solve_power_no_endowment(m, p, eps).map(|s| s.solution).map_err(|e| match e {
            Error::WrongUtilityFamily(_) | Error::PreconditionViolated(_) => {
                Error::WrongMarketClass(format!("no closed form applies: {e}"))
            }
            e => e,
        })
    } else {
        return solve_general(m, p, eps);
    };
    match (method, closed) {
        (Method::Auto, Err(Error::PreconditionViolated(_) | Error::BracketFailure(_))) => solve_general(m, p, eps),
        (_, r) => r,
    }
}

/// Least-norm holdings replicating `W_{k+1}` over the children of each node.
pub fn holdings(m: &MarketModel, wealth: &AdaptedProcess) -> Vec<Vec<Vec<f64>>> {
    let tree = m.tree();
    (0..tree.horizon())
        .map(|k| {
            (0..tree.n_atoms(k))
                .map(|a| {
                    let x: DMatrix<f64> = m.node_payoffs(k + 1, a);
                    let target = DVector::from_iterator(
                        x.nrows(),
                        tree.children(k, a).iter().map(|&c| wealth.at(k + 1).value(c)),
                    );
                    x.svd(true, true).solve(&target, 1e-12).map(|v| v.iter().copied().collect()).unwrap_or_default()
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::*;
    use crate::preferences::{HabitWeights, UtilityFamily};

    #[test]
    fn holdings_replicate_wealth_and_cost_the_investment() {
        let m = trinomial_incomplete();
        let tree = m.tree();
        let p = HabitPreferences::new(tree, UtilityFamily::power(3.0, 0.0, 2), HabitWeights::one_lag(2, 0.3), None).unwrap();
        let eps = AdaptedProcess::constant(tree, 1.0);
        let s = solve_general(&m, &p, &eps).unwrap();
        for k in 0..2 {
            for a in 0..tree.n_atoms(k) {
                let pi = &s.portfolio[k][a];
                let cost: f64 = m.node_prices(k, a).iter().zip(pi).map(|(s, h)| s * h).sum();
                assert!((cost - s.investment.at(k).value(a)).abs() < 1e-10);
                for &c in tree.children(k, a) {
                    let pay: f64 = (0..m.n_slots()).map(|i| m.payoff(k + 1, i).value(c) * pi[i]).sum();
                    assert!((pay - s.wealth.at(k + 1).value(c)).abs() < 1e-10);
                }
            }
        }
    }
}
