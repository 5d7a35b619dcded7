//! Damped Newton ascent on the payoff-coordinate program.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::program::Program;
use super::{Diagnostics, Solution};
use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::preferences::HabitPreferences;
use crate::tree::AdaptedProcess;

/// Where Newton starts.
#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    /// The max-min point for domains bounded below, `theta = 0` otherwise.
    Interior,
    /// A random point between the max-min point and the domain boundary.
    RandomInterior { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOptions {
    /// Stop when `|grad| <= tol * scale`, scale being the size of the marginal utilities.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra full steps taken after the tolerance is met.
    pub polish_steps: usize,
    pub start: Start,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 200, polish_steps: 2, start: Start::Interior }
    }
}

/// Outcome of a Newton run, returned even when it stalls.
#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub solution: Solution,
    pub converged: bool,
}

/// Maximizes expected habit-adjusted utility over budget-feasible plans.
pub fn solve_general(m: &MarketModel, p: &HabitPreferences, eps: &AdaptedProcess) -> Result<Solution> {
    let report = solve_general_with(m, p, eps, &NewtonOptions::default())?;
    if report.converged {
        Ok(report.solution)
    } else {
        let d = &report.solution.diagnostics;
        Err(Error::NonConvergence { iterations: d.iterations, gradient_norm: d.gradient_norm })
    }
}

pub fn solve_general_with(
    m: &MarketModel,
    p: &HabitPreferences,
    eps: &AdaptedProcess,
    opts: &NewtonOptions,
) -> Result<NewtonReport> {
    check_inputs(m, p, eps)?;
    let prog = Program::build(m, p, eps)?;
    let n = prog.n_cols();
    let bounded_below = prog.utils.iter().any(|u| u.lower_bound().is_finite());

    let mut theta = if bounded_below {
        let (x, t) = prog.max_min_point()?;
        if !(t > 0.0) {
            return Err(Error::Infeasible(format!("largest attainable minimum of perturbed consumption is {t:.3e}")));
        }
        x
    } else {
        DVector::zeros(n)
    };
    if let Start::RandomInterior { seed } = opts.start {
        theta = random_interior(&prog, &theta, seed);
    }
    let mut f = prog.value(&theta).ok_or_else(|| Error::Infeasible("starting point outside the domain".into()))?;

    let mut iterations = 0;
    let mut converged = n == 0;
    let mut polished = 0;
    let mut gnorm = if n == 0 { 0.0 } else { f64::INFINITY };
    while n > 0 && iterations < opts.max_iter {
        let (g, h) = prog.derivatives(&theta);
        gnorm = g.norm();
        let scale = prog.gradient_scale(&theta);
        if gnorm <= opts.tol * scale {
            converged = true;
            if polished >= opts.polish_steps {
                break;
            }
        }
        iterations += 1;
        let d = newton_direction(&h, &g);
        if converged {
            // Near the optimum the objective is flat to rounding: accept
            // full steps that reduce the gradient.
            polished += 1;
            let cand = &theta + &d;
            if let Some(fc) = prog.value(&cand) {
                if prog.derivatives(&cand).0.norm() < gnorm {
                    theta = cand;
                    f = fc;
                    continue;
                }
            }
            break;
        }
        let slope = g.dot(&d);
        // Below this predicted gain, objective values are rounding noise and
        // the gradient norm decides instead.
        let flat = slope <= 1e-12 * (1.0 + f.abs());
        let mut s = 1.0;
        let mut accepted = false;
        while s > 1e-16 {
            let cand = &theta + &d * s;
            if let Some(fc) = prog.value(&cand) {
                let better = if flat { prog.derivatives(&cand).0.norm() < gnorm } else { fc >= f + 1e-4 * s * slope };
                if better {
                    theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            // No ascent possible at machine precision: accept if the gradient is already tiny.
            converged = gnorm <= 1e3 * opts.tol * scale;
            break;
        }
    }
    if !converged && n > 0 {
        let (g, _) = prog.derivatives(&theta);
        gnorm = g.norm();
        converged = gnorm <= opts.tol * prog.gradient_scale(&theta);
    }

    let c = prog.unstack(m, &(&prog.eps + &prog.a * &theta));
    let w = prog.wealth(m, &theta);
    let diag = Diagnostics { method: "newton".into(), iterations, gradient_norm: gnorm, ..Diagnostics::default() };
    let solution = Solution::assemble(m, p, eps, c, Some(w), diag)?;
    Ok(NewtonReport { solution, converged })
}

pub(crate) fn check_inputs(m: &MarketModel, p: &HabitPreferences, eps: &AdaptedProcess) -> Result<()> {
    if p.horizon() != m.horizon() || eps.horizon() != m.horizon() {
        return Err(Error::PreconditionViolated("market, preferences and endowment horizons differ".into()));
    }
    AdaptedProcess::new(m.tree(), eps.components().to_vec())?;
    AdaptedProcess::new(m.tree(), p.habit().components().to_vec())?;
    Ok(())
}

/// Solves `(-H) d = g` by Cholesky, shifting the diagonal if needed.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let neg = -h;
    let n = g.len();
    let mut shift = 0.0;
    let base = neg.diagonal().amax().max(1e-300);
    loop {
        let mut mtx = neg.clone();
        for i in 0..n {
            mtx[(i, i)] += shift;
        }
        if let Some(ch) = mtx.cholesky() {
            return ch.solve(g);
        }
        shift = if shift == 0.0 { 1e-12 * base } else { shift * 10.0 };
        if shift > 1e6 * base {
            return g.clone();
        }
    }
}

/// A random point on the segment from `center` towards the domain boundary
/// in a random direction, at a random fraction of the way.
fn random_interior(prog: &Program, center: &DVector<f64>, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = center.len();
    if n == 0 {
        return center.clone();
    }
    let dir = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let mut reach = 1.0;
    for _ in 0..200 {
        if prog.value(&(center + &dir * (2.0 * reach))).is_some() && reach < 1e3 {
            reach *= 2.0;
        } else {
            break;
        }
    }
    while reach > 1e-12 && prog.value(&(center + &dir * reach)).is_none() {
        reach *= 0.5;
    }
    center + dir * (reach * rng.gen_range(0.1..0.9))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::*;
    use crate::preferences::{foc_residual, HabitWeights, UtilityFamily};
    use crate::tree::EventTree;

    #[test]
    fn one_period_log_splits_wealth_evenly() {
        // Log utility, no habit, r = 0, endowment (2, 0): c_0 = 1 and c_1 = 1 / M_1.
        let m = binomial(0.0, 1.0, 1.4, 0.7);
        let tree = m.tree();
        let p = HabitPreferences::new(tree, UtilityFamily::Log { rho: 0.0 }, HabitWeights::none(1), None).unwrap();
        let eps = AdaptedProcess::from_levels(tree, vec![vec![2.0], vec![0.0, 0.0]]).unwrap();
        let s = solve_general(&m, &p, &eps).unwrap();
        assert!((s.consumption.at(0).value(0) - 1.0).abs() < 1e-10);
        let mm = &m.kernel().unwrap().aggregate;
        for a in 0..2 {
            let expect = 1.0 / mm.at(1).value(a);
            assert!((s.consumption.at(1).value(a) - expect).abs() < 1e-9);
        }
        assert!(foc_residual(&m, &p, &s.consumption).unwrap().iter().all(|&r| r < 1e-10));
    }

    #[test]
    fn random_starts_reach_the_same_optimum() {
        let m = trinomial_incomplete();
        let tree = m.tree();
        let h = AdaptedProcess::constant(tree, 0.05);
        let p = HabitPreferences::new(tree, UtilityFamily::power(2.0, 0.01, 2), HabitWeights::one_lag(2, 0.5), Some(h))
            .unwrap();
        let eps = AdaptedProcess::constant(tree, 1.0);
        let base = solve_general(&m, &p, &eps).unwrap();
        for seed in 0..5 {
            let opts = NewtonOptions { start: Start::RandomInterior { seed }, ..NewtonOptions::default() };
            let r = solve_general_with(&m, &p, &eps, &opts).unwrap();
            assert!(r.converged, "seed {seed}: {:?}", r.solution.diagnostics);
            assert!(r.solution.consumption.max_abs_diff(&base.consumption) < 1e-9);
        }
    }

    #[test]
    fn infeasible_habit_is_reported() {
        let tree = EventTree::regular(1, 2).unwrap();
        let m = binomial(0.0, 1.0, 1.4, 0.7);
        let h = AdaptedProcess::constant(&tree, 5.0);
        let p = HabitPreferences::new(&tree, UtilityFamily::Log { rho: 0.0 }, HabitWeights::none(1), Some(h)).unwrap();
        let eps = AdaptedProcess::constant(&tree, 1.0);
        assert!(matches!(solve_general(&m, &p, &eps), Err(Error::Infeasible(_))));
    }
}
