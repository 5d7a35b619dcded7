//! Optimal time-0 consumption across a range of initial endowments.

use rayon::prelude::*;
use serde::Serialize;

use super::default_step;
use crate::market::MarketModel;
use crate::preferences::{perturbed_consumption, HabitPreferences};
use crate::solvers::solve_general;
use crate::tree::AdaptedProcess;

/// One row per endowment. Failed solves keep their row with `status` set
/// to the error and the numeric fields empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps0: f64,
    pub c0: Option<f64>,
    /// Central difference of `c_0` in `eps_0`.
    pub dc0: Option<f64>,
    /// Second central difference divided by the squared step.
    pub d2c0: Option<f64>,
    /// `E[u_k(c^_k)]` for each period.
    pub period_utility: Vec<f64>,
    pub status: String,
}

/// `n` evenly spaced endowments from `lo` to `hi` inclusive.
pub fn wealth_sweep(m: &MarketModel, p: &HabitPreferences, eps: &AdaptedProcess, lo: f64, hi: f64, n: usize) -> Vec<SweepRow> {
    let grid: Vec<f64> = match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    };
    let tree = m.tree();
    let c0_at = |e: f64| {
        let mut x = eps.clone();
        x.at_mut(0).values_mut()[0] = e;
        solve_general(m, p, &x)
    };
    grid.into_par_iter()
        .map(|e| {
            let d = default_step(e);
            let run = || -> crate::Result<SweepRow> {
                let s = c0_at(e)?;
                let up = c0_at(e + d)?.consumption.at(0).value(0);
                let down = c0_at(e - d)?.consumption.at(0).value(0);
                let c0 = s.consumption.at(0).value(0);
                let chat = perturbed_consumption(p, tree, &s.consumption);
                let period_utility = (0..=tree.horizon())
                    .map(|k| {
                        let u = p.period(k);
                        tree.expectation(&chat.at(k).map(|x| u.value(x)))
                    })
                    .collect();
                Ok(SweepRow {
                    eps0: e,
                    c0: Some(c0),
                    dc0: Some((up - down) / (2.0 * d)),
                    d2c0: Some((up - 2.0 * c0 + down) / (d * d)),
                    period_utility,
                    status: "ok".into(),
                })
            };
            run().unwrap_or_else(|err| SweepRow {
                eps0: e,
                c0: None,
                dc0: None,
                d2c0: None,
                period_utility: vec![],
                status: err.to_string(),
            })
        })
        .collect()
}

/// Columns: `eps0,c0,dc0,d2c0,status,U_0,...,U_T`.
pub fn sweep_csv(rows: &[SweepRow], horizon: usize) -> String {
    let mut out = String::from("eps0,c0,dc0,d2c0,status");
    for k in 0..=horizon {
        out.push_str(&format!(",U_{k}"));
    }
    out.push('\n');
    let num = |x: Option<f64>| x.map(|v| format!("{v:.16e}")).unwrap_or_default();
    for r in rows {
        let status = r.status.replace([',', '\n'], ";");
        out.push_str(&format!("{:.16e},{},{},{},{}", r.eps0, num(r.c0), num(r.dc0), num(r.d2c0), status));
        for k in 0..=horizon {
            out.push(',');
            out.push_str(&num(r.period_utility.get(k).copied()));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::*;
    use crate::preferences::{HabitWeights, UtilityFamily};

    #[test]
    fn proportional_without_later_endowment() {
        let m = trinomial_incomplete();
        let tree = m.tree();
        let p = HabitPreferences::new(tree, UtilityFamily::power(2.0, 0.0, 2), HabitWeights::one_lag(2, 0.5), None).unwrap();
        let eps = AdaptedProcess::zeros(tree);
        let rows = wealth_sweep(&m, &p, &eps, 1.0, 4.0, 4);
        let ratio = rows[0].c0.unwrap() / rows[0].eps0;
        for r in &rows {
            assert!((r.c0.unwrap() / r.eps0 - ratio).abs() < 1e-10);
            assert!(r.d2c0.unwrap().abs() < 1e-4);
        }
        let csv = sweep_csv(&rows, 2);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("eps0,c0,dc0,d2c0,status,U_0,U_1,U_2\n"));
    }

    #[test]
    fn failed_rows_are_kept() {
        let m = binomial(0.0, 1.0, 1.2, 0.9);
        let tree = m.tree();
        let h = AdaptedProcess::constant(tree, 1.0);
        let p = HabitPreferences::new(tree, UtilityFamily::Log { rho: 0.0 }, HabitWeights::none(1), Some(h)).unwrap();
        let rows = wealth_sweep(&m, &p, &AdaptedProcess::zeros(tree), 0.5, 4.0, 2);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].c0.is_none() && rows[0].status != "ok");
        assert!(rows[1].c0.is_some());
    }
}
