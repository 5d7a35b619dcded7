//! Dense two-phase simplex for the small linear programs used to find
//! positive deflators and interior starting points.
//!
//! Bland's rule keeps degenerate problems from cycling. Problems here have
//! at most a few hundred columns, so a dense tableau is adequate. The
//! tableau is rebuilt from the original rows every [`REFACTOR_EVERY`]
//! pivots and before any verdict, so rounding cannot accumulate into a
//! false "unbounded" or "optimal".

use nalgebra::DMatrix;

/// Pivot entries must exceed this fraction of the largest entry in their column.
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 25;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Maximize `objective · x` subject to linear rows. Variables are
/// non-negative unless marked free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    n_vars: usize,
    objective: Vec<f64>,
    free: Vec<bool>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        LinearProgram { n_vars, objective: vec![0.0; n_vars], free: vec![false; n_vars], rows: Vec::new() }
    }

    pub fn set_objective(&mut self, c: Vec<f64>) {
        assert_eq!(c.len(), self.n_vars);
        self.objective = c;
    }

    pub fn set_free(&mut self, var: usize) {
        self.free[var] = true;
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.n_vars);
        self.rows.push((coeffs, rel, rhs));
    }

    pub fn maximize(&self) -> LpOutcome {
        // Column layout: split variables, then slack/surplus, then artificials.
        let mut col_of = Vec::with_capacity(self.n_vars);
        let mut n = 0;
        for &f in &self.free {
            col_of.push(n);
            n += if f { 2 } else { 1 };
        }
        let n_struct = n;
        let n_slack = self.rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let m = self.rows.len();
        let n_total = n_struct + n_slack + m;
        let width = n_total + 1;

        let mut tab = vec![vec![0.0; width]; m];
        let mut slack = n_struct;
        for (i, (coeffs, rel, rhs)) in self.rows.iter().enumerate() {
            let scale = coeffs.iter().fold(rhs.abs(), |s, c| s.max(c.abs())).max(1e-300);
            let row = &mut tab[i];
            for (v, &a) in coeffs.iter().enumerate() {
                row[col_of[v]] = a / scale;
                if self.free[v] {
                    row[col_of[v] + 1] = -a / scale;
                }
            }
            match rel {
                Relation::Le => {
                    row[slack] = 1.0;
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                }
                Relation::Eq => {}
            }
            row[n_total] = rhs / scale;
            if row[n_total] < 0.0 {
                for x in row.iter_mut() {
                    *x = -*x;
                }
            }
            row[n_struct + n_slack + i] = 1.0;
        }
        let mut basis: Vec<usize> = (0..m).map(|i| n_struct + n_slack + i).collect();
        let mut orig = tab.clone();

        // Phase 1: drive the artificials to zero.
        let mut cost1 = vec![0.0; n_total];
        for c in cost1.iter_mut().skip(n_struct + n_slack) {
            *c = -1.0;
        }
        let allowed_all = vec![true; n_total];
        match run(&mut tab, &mut orig, &mut basis, &cost1, &allowed_all) {
            Step::Done => {}
            Step::Unbounded => return LpOutcome::Infeasible,
            Step::Limit => return LpOutcome::IterationLimit,
        }
        let infeas: f64 = basis
            .iter()
            .zip(&tab)
            .filter(|(&b, _)| b >= n_struct + n_slack)
            .map(|(_, row)| row[n_total])
            .sum();
        if infeas > FEAS_TOL {
            return LpOutcome::Infeasible;
        }
        // Pivot artificials out of the basis; rows that cannot be pivoted are redundant.
        let mut i = 0;
        while i < tab.len() {
            if basis[i] >= n_struct + n_slack {
                if let Some(j) = (0..n_struct + n_slack).find(|&j| tab[i][j].abs() > 1e-9) {
                    pivot(&mut tab, &mut basis, i, j);
                } else {
                    tab.remove(i);
                    orig.remove(i);
                    basis.remove(i);
                    continue;
                }
            }
            i += 1;
        }

        // Phase 2.
        let mut cost2 = vec![0.0; n_total];
        for (v, &c) in self.objective.iter().enumerate() {
            cost2[col_of[v]] = c;
            if self.free[v] {
                cost2[col_of[v] + 1] = -c;
            }
        }
        let mut allowed = vec![true; n_total];
        for a in allowed.iter_mut().skip(n_struct + n_slack) {
            *a = false;
        }
        match run(&mut tab, &mut orig, &mut basis, &cost2, &allowed) {
            Step::Done => {}
            Step::Unbounded => return LpOutcome::Unbounded,
            Step::Limit => return LpOutcome::IterationLimit,
        }
        let mut raw = vec![0.0; n_total];
        for (i, &b) in basis.iter().enumerate() {
            raw[b] = tab[i][n_total];
        }
        let x: Vec<f64> = (0..self.n_vars)
            .map(|v| if self.free[v] { raw[col_of[v]] - raw[col_of[v] + 1] } else { raw[col_of[v]] })
            .collect();
        let value = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        LpOutcome::Optimal { x, value }
    }
}

enum Step {
    Done,
    Unbounded,
    Limit,
}

fn run(tab: &mut [Vec<f64>], orig: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: &[bool]) -> Step {
    let n_total = cost.len();
    let mut since_refactor = 0;
    for _ in 0..MAX_PIVOTS {
        if since_refactor >= REFACTOR_EVERY {
            refactor(tab, orig, basis);
            since_refactor = 0;
        }
        // Bland's rule: smallest-index column with positive reduced cost.
        let mut entering = None;
        for j in 0..n_total {
            if !allowed[j] || basis.contains(&j) {
                continue;
            }
            // Relative threshold: the twin of a basic split variable has a
            // reduced cost of exactly zero, which roundoff must not flip.
            let (mut d, mut mag) = (cost[j], cost[j].abs());
            for (i, row) in tab.iter().enumerate() {
                let t = cost[basis[i]] * row[j];
                d -= t;
                mag += t.abs();
            }
            if d > 1e-10 * (1.0 + mag) {
                entering = Some(j);
                break;
            }
        }
        let Some(j) = entering else {
            if since_refactor > 0 && refactor(tab, orig, basis) {
                since_refactor = 0;
                continue;
            }
            return Step::Done;
        };
        let col_max = tab.iter().fold(0.0f64, |a, row| a.max(row[j].abs()));
        let tol = PIVOT_TOL * col_max.max(1.0);
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in tab.iter().enumerate() {
            if row[j] > tol {
                let ratio = row[n_total].max(0.0) / row[j];
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && basis[i] < basis[li]) {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((i, _)) = leave else {
            if since_refactor > 0 && refactor(tab, orig, basis) {
                since_refactor = 0;
                continue;
            }
            return Step::Unbounded;
        };
        pivot(tab, basis, i, j);
        since_refactor += 1;
    }
    Step::Limit
}

/// Recomputes the tableau as `B^-1 [A | b]` for the current basis. Returns
/// false, leaving the tableau alone, when the basis matrix is singular.
fn refactor(tab: &mut [Vec<f64>], orig: &[Vec<f64>], basis: &[usize]) -> bool {
    let m = basis.len();
    if m == 0 {
        return false;
    }
    let width = orig[0].len();
    let b = DMatrix::from_fn(m, m, |i, j| orig[i][basis[j]]);
    let rhs = DMatrix::from_fn(m, width, |i, j| orig[i][j]);
    let Some(x) = b.lu().solve(&rhs) else { return false };
    if x.iter().any(|v| !v.is_finite()) {
        return false;
    }
    for (i, row) in tab.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[(i, j)];
        }
        for (r, &bj) in basis.iter().enumerate() {
            row[bj] = if r == i { 1.0 } else { 0.0 };
        }
    }
    true
}

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], r: usize, c: usize) {
    let p = tab[r][c];
    for x in tab[r].iter_mut() {
        *x /= p;
    }
    let pivot_row = tab[r].clone();
    for (i, row) in tab.iter_mut().enumerate() {
        if i != r {
            let f = row[c];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
            }
        }
    }
    basis[r] = c;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), value 36.
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![3.0, 5.0]);
        lp.add_row(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add_row(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add_row(vec![3.0, 2.0], Relation::Le, 18.0);
        let LpOutcome::Optimal { x, value } = lp.maximize() else { panic!() };
        assert!((value - 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn free_variable_and_equalities() {
        // max -x subject to x + y = 1, y <= 3, x free -> x = -2.
        let mut lp = LinearProgram::new(2);
        lp.set_free(0);
        lp.set_objective(vec![-1.0, 0.0]);
        lp.add_row(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add_row(vec![0.0, 1.0], Relation::Le, 3.0);
        let LpOutcome::Optimal { x, .. } = lp.maximize() else { panic!() };
        assert!((x[0] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.add_row(vec![1.0], Relation::Ge, 2.0);
        lp.add_row(vec![1.0], Relation::Le, 1.0);
        assert_eq!(lp.maximize(), LpOutcome::Infeasible);
        let mut lp = LinearProgram::new(1);
        lp.set_objective(vec![1.0]);
        lp.add_row(vec![1.0], Relation::Ge, 2.0);
        assert_eq!(lp.maximize(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![1.0, 1.0]);
        lp.add_row(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add_row(vec![2.0, 2.0], Relation::Eq, 2.0);
        let LpOutcome::Optimal { value, .. } = lp.maximize() else { panic!() };
        assert!((value - 1.0).abs() < 1e-12);
    }
}
