//! Built-in scenarios reproducing the closed-form and structural results.

use serde::Serialize;

use crate::analysis::{concavity_check, convexity_counterexample, linearity_law_check, BoundReport, ConvexityReport, LinearityReport};
use crate::error::Result;
use crate::generate::{generate, Family, ScenarioSeed, UtilityKind};
use crate::solvers::{solve_general, solve_power_no_endowment};
use crate::tree::AdaptedProcess;

/// Homogeneity of the optimal plan without later endowment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogeneityReport {
    pub seed: u64,
    pub lambdas: Vec<f64>,
    /// `max |c(lambda eps_0) - lambda c(eps_0)|` per lambda.
    pub scaling_error: Vec<f64>,
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub passed: bool,
}

pub fn homogeneity(seed: u64) -> Result<HomogeneityReport> {
    let mut s = ScenarioSeed::new(seed, Family::General);
    s.baseline_habit = false;
    s.habit_weight = Some(0.5);
    let sc = generate(&s)?;
    let (m, p) = (&sc.market, &sc.preferences);
    let mut eps = AdaptedProcess::zeros(m.tree());
    eps.at_mut(0).values_mut()[0] = 1.0;
    let base = solve_power_no_endowment(m, p, &eps)?;
    let lambdas = vec![0.5, 2.0, 10.0];
    let scaling_error = lambdas
        .iter()
        .map(|&l| {
            let s = solve_general(m, p, &eps.map(|v| v * l))?;
            Ok(s.consumption.max_abs_diff(&base.solution.consumption.map(|v| v * l)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let fr = base.consumption_fraction.components().iter().flat_map(|c| c.values().to_vec()).collect::<Vec<_>>();
    let min_fraction = fr.iter().copied().fold(f64::INFINITY, f64::min);
    let max_fraction = fr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let passed = scaling_error.iter().all(|&e| e <= 1e-8) && min_fraction > 0.0 && max_fraction <= 1.0 + 1e-12;
    Ok(HomogeneityReport { seed, lambdas, scaling_error, min_fraction, max_fraction, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityRepro {
    pub report: ConvexityReport,
    /// The solver matches the habit-corrected closed form within 1e-8.
    pub matches_corrected_form: bool,
    /// The solver matches the closed form that omits the habit drag within 1e-8.
    pub matches_stated_form: bool,
    pub convex: bool,
    pub passed: bool,
}

/// `M_1 = 1` on two equally likely states, `eps_1 = 0`, 50 endowments in `[0.5, 10]`.
pub fn convexity() -> Result<ConvexityRepro> {
    let grid: Vec<f64> = (0..50).map(|i| 0.5 + 9.5 * i as f64 / 49.0).collect();
    let report = convexity_counterexample(&grid, &[0.5, 0.5], &[1.0, 1.0], &[0.0, 0.0])?;
    let matches_corrected_form = report.max_error_corrected <= 1e-8 && report.c1_error_corrected <= 1e-8;
    let matches_stated_form = report.max_error_stated <= 1e-8 && report.c1_error_stated <= 1e-8;
    let convex = report.convex();
    let passed = matches_corrected_form && convex && report.slopes_in_unit_interval();
    Ok(ConvexityRepro { report, matches_corrected_form, matches_stated_form, convex, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcavityRepro {
    pub seed: u64,
    pub report: BoundReport,
    pub passed: bool,
}

/// Power utility with `gamma = 3` on a seeded idiosyncratic market.
pub fn concavity(seed: u64) -> Result<ConcavityRepro> {
    let mut s = ScenarioSeed::new(seed, Family::Idiosyncratic);
    s.utility = UtilityKind::Power { gamma: 3.0 };
    s.habit_weight = Some(0.3);
    let sc = generate(&s)?;
    let base = solve_general(&sc.market, &sc.preferences, &sc.endowment)?;
    let report = concavity_check(&sc.market, &sc.preferences, &sc.endowment, &base, 1e-6)?;
    let passed = report.in_scope && report.passed();
    Ok(ConcavityRepro { seed, report, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearityRepro {
    pub report: LinearityReport,
    pub passed: bool,
}

pub fn linearity(gamma: f64, r: f64) -> Result<LinearityRepro> {
    let grid: Vec<f64> = (1..=20).map(|i| 0.5 * i as f64).collect();
    let report = linearity_law_check(gamma, r, &grid)?;
    let passed = report.passed(1e-8);
    Ok(LinearityRepro { report, passed })
}
