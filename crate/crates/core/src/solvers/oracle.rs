//! Derivative-free reference solver over raw portfolio holdings.
//!
//! Consumption is computed directly from holdings,
//! `c_k = eps_k + pi_{k-1} . (S_k + d_k) - pi_k . S_k`, without payoff
//! bases or state-price densities, and utility is maximized by a
//! Hooke-Jeeves pattern search whose step shrinks tenfold per stage. The
//! search stalls along narrow ridges, so it is finished by Newton steps on
//! a quadratic model fitted from objective values alone.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Diagnostics, Solution};
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::market::MarketModel;
use crate::preferences::{HabitPreferences, PeriodUtility};
use crate::tree::{AdaptedProcess, RandomVariable};

/// Largest number of holdings the search accepts.
pub const ORACLE_MAX_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub initial_step: f64,
    /// Final step, relative to the size of the holdings.
    pub min_step: f64,
    pub starts: usize,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { initial_step: 0.25, min_step: 1e-8, starts: 3, seed: 0 }
    }
}

struct Holdings<'a> {
    m: &'a MarketModel,
    p: &'a HabitPreferences,
    eps: &'a AdaptedProcess,
    /// `(level, atom)` of each holding block, `n_slots` entries per block.
    nodes: Vec<(usize, usize)>,
    utils: Vec<PeriodUtility>,
    /// `payoffs[k][slot][atom]` for `k >= 1`, `prices[k][slot][atom]` for `k < T`.
    payoffs: Vec<Vec<Vec<f64>>>,
    prices: Vec<Vec<Vec<f64>>>,
}

impl<'a> Holdings<'a> {
    fn new(m: &'a MarketModel, p: &'a HabitPreferences, eps: &'a AdaptedProcess) -> Self {
        let tree = m.tree();
        let nodes = (0..tree.horizon()).flat_map(|k| (0..tree.n_atoms(k)).map(move |a| (k, a))).collect();
        let utils = (0..=tree.horizon()).map(|k| p.period(k)).collect();
        let t = tree.horizon();
        let payoffs = (0..=t)
            .map(|k| if k == 0 { Vec::new() } else { (0..m.n_slots()).map(|s| m.payoff(k, s).into_values()).collect() })
            .collect();
        let prices = (0..t).map(|k| (0..m.n_slots()).map(|s| m.price(k, s).into_values()).collect()).collect();
        Holdings { m, p, eps, nodes, utils, payoffs, prices }
    }

    fn dim(&self) -> usize {
        self.nodes.len() * self.m.n_slots()
    }

    fn index(&self, k: usize, a: usize) -> usize {
        self.nodes.iter().position(|&n| n == (k, a)).expect("node has holdings") * self.m.n_slots()
    }

    fn consumption(&self, pi: &[f64]) -> Vec<Vec<f64>> {
        let tree = self.m.tree();
        let ns = self.m.n_slots();
        (0..=tree.horizon())
            .map(|k| {
                (0..tree.n_atoms(k))
                    .map(|a| {
                        let mut c = self.eps.at(k).value(a);
                        if k > 0 {
                            let i = self.index(k - 1, tree.parent(k, a));
                            for s in 0..ns {
                                c += pi[i + s] * self.payoffs[k][s][a];
                            }
                        }
                        if k < tree.horizon() {
                            let i = self.index(k, a);
                            for s in 0..ns {
                                c -= pi[i + s] * self.prices[k][s][a];
                            }
                        }
                        c
                    })
                    .collect()
            })
            .collect()
    }

    fn perturbed(&self, c: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let tree = self.m.tree();
        (0..=tree.horizon())
            .map(|k| {
                (0..tree.n_atoms(k))
                    .map(|a| {
                        let mut x = c[k][a] - self.p.habit().at(k).value(a);
                        for l in 0..k {
                            x -= self.p.beta().get(k, l) * c[l][tree.ancestor(k, a, l)];
                        }
                        x
                    })
                    .collect()
            })
            .collect()
    }

    fn objective(&self, pi: &[f64]) -> f64 {
        let tree = self.m.tree();
        let chat = self.perturbed(&self.consumption(pi));
        let mut total = 0.0;
        for (k, level) in chat.iter().enumerate() {
            for (a, &x) in level.iter().enumerate() {
                if !self.utils[k].in_domain(x) {
                    return f64::NEG_INFINITY;
                }
                total += tree.atom_prob(k, a) * self.utils[k].value(x);
            }
        }
        if total.is_finite() {
            total
        } else {
            f64::NEG_INFINITY
        }
    }

    fn min_perturbed(&self, pi: &[f64]) -> f64 {
        self.perturbed(&self.consumption(pi)).iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Holdings maximizing the smallest perturbed consumption.
    fn center(&self) -> Result<Vec<f64>> {
        let n = self.dim();
        let zero = vec![0.0; n];
        let base: Vec<f64> = self.perturbed(&self.consumption(&zero)).concat();
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut e = zero.clone();
                e[i] = 1.0;
                self.perturbed(&self.consumption(&e)).concat().iter().zip(&base).map(|(a, b)| a - b).collect()
            })
            .collect();
        let mut lp = LinearProgram::new(n + 1);
        for v in 0..=n {
            lp.set_free(v);
        }
        let mut obj = vec![0.0; n + 1];
        obj[n] = 1.0;
        lp.set_objective(obj);
        for (r, &b) in base.iter().enumerate() {
            let mut row: Vec<f64> = cols.iter().map(|c| c[r]).collect();
            row.push(-1.0);
            lp.add_row(row, Relation::Ge, -b);
        }
        let mut cap = vec![0.0; n + 1];
        cap[n] = 1.0;
        lp.add_row(cap, Relation::Le, 1e6 * (1.0 + base.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
        match lp.maximize() {
            LpOutcome::Optimal { x, value } if value > 0.0 => Ok(x[..n].to_vec()),
            LpOutcome::Optimal { value, .. } => {
                Err(Error::Infeasible(format!("largest attainable minimum of perturbed consumption is {value:.3e}")))
            }
            other => Err(Error::Infeasible(format!("holdings max-min program failed: {other:?}"))),
        }
    }
}

/// Reference optimum by pattern search; limited to [`ORACLE_MAX_DIM`] holdings.
pub fn solve_primal_oracle(m: &MarketModel, p: &HabitPreferences, eps: &AdaptedProcess) -> Result<Solution> {
    solve_primal_oracle_with(m, p, eps, &OracleOptions::default())
}

pub fn solve_primal_oracle_with(
    m: &MarketModel,
    p: &HabitPreferences,
    eps: &AdaptedProcess,
    opts: &OracleOptions,
) -> Result<Solution> {
    super::newton::check_inputs(m, p, eps)?;
    let h = Holdings::new(m, p, eps);
    let n = h.dim();
    if n > ORACLE_MAX_DIM {
        return Err(Error::InstanceTooLarge { dim: n, max: ORACLE_MAX_DIM });
    }
    let bounded_below = h.utils.iter().any(|u| u.lower_bound().is_finite());
    let center = if bounded_below { h.center()? } else { vec![0.0; n] };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    for s in 0..opts.starts.max(1) {
        let start = if s == 0 { center.clone() } else { perturbed_start(&h, &center, &mut rng) };
        let f = |x: &[f64]| h.objective(x);
        let (x, fx, evals) = pattern_search(&f, start, opts);
        let (x, fx, polish_evals) = polish(&f, x, fx);
        evaluations += evals + polish_evals;
        if best.as_ref().is_none_or(|(_, fb)| fx > *fb) {
            best = Some((x, fx));
        }
    }
    let (pi, _) = best.expect("at least one start");
    let tree = m.tree();
    let c = AdaptedProcess::new(
        tree,
        h.consumption(&pi).into_iter().enumerate().map(|(k, v)| RandomVariable::new(k, v)).collect(),
    )?;
    let diag = Diagnostics { method: "oracle".into(), iterations: evaluations, ..Diagnostics::default() };
    Solution::assemble(m, p, eps, c, None, diag)
}

fn perturbed_start(h: &Holdings, center: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let floor = 0.5 * h.min_perturbed(center);
    let dir: Vec<f64> = center.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut s = 0.5;
    loop {
        let x: Vec<f64> = center.iter().zip(&dir).map(|(c, d)| c + s * d).collect();
        if h.objective(&x).is_finite() && (!floor.is_finite() || h.min_perturbed(&x) >= floor) {
            return x;
        }
        s *= 0.5;
        if s < 1e-12 {
            return center.to_vec();
        }
    }
}

/// Hooke-Jeeves maximization: coordinate exploration plus pattern moves,
/// step divided by ten whenever exploration fails.
fn pattern_search(f: &dyn Fn(&[f64]) -> f64, x0: Vec<f64>, opts: &OracleOptions) -> (Vec<f64>, f64, usize) {
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| {
        evals += 1;
        f(x)
    };
    let scale = x0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut base = x0;
    let mut fb = eval(&base);
    let mut step = opts.initial_step * scale;
    while step >= opts.min_step * scale {
        let (mut x_new, mut f_new) = explore(&mut eval, &base, fb, step);
        if f_new > fb {
            loop {
                let pattern: Vec<f64> = x_new.iter().zip(&base).map(|(a, b)| 2.0 * a - b).collect();
                base = x_new.clone();
                fb = f_new;
                let fp = eval(&pattern);
                let (x_try, f_try) = explore(&mut eval, &pattern, fp, step);
                if f_try > fb {
                    x_new = x_try;
                    f_new = f_try;
                } else {
                    break;
                }
            }
        } else {
            step /= 10.0;
        }
    }
    (base, fb, evals)
}

/// Newton steps with the gradient and Hessian taken from central
/// differences of `f`. The gradient is extrapolated, since its bias fixes
/// the end point; the Hessian only sets the rate. A step is kept when it does not lower `f` beyond rounding and shrinks the
/// difference gradient.
fn polish(f: &dyn Fn(&[f64]) -> f64, x0: Vec<f64>, f0: f64) -> (Vec<f64>, f64, usize) {
    let n = x0.len();
    let scale = x0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let (hg, hh) = (1e-4 * scale, 1e-4 * scale);
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        f(x)
    };
    let shifted = |x: &[f64], moves: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, d) in moves {
            y[i] += d;
        }
        eval(&y)
    };
    let gradient = |x: &[f64]| -> Option<DVector<f64>> {
        let d = |i: usize, h: f64| (shifted(x, &[(i, h)]) - shifted(x, &[(i, -h)])) / (2.0 * h);
        // Richardson extrapolation cancels the second-order bias.
        let g: Vec<f64> = (0..n).map(|i| (4.0 * d(i, 0.5 * hg) - d(i, hg)) / 3.0).collect();
        g.iter().all(|v| v.is_finite()).then(|| DVector::from_vec(g))
    };
    let (mut x, mut fx) = (x0, f0);
    let Some(mut g) = gradient(&x) else { return (x, fx, evals.get()) };
    for _ in 0..20 {
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = if i == j {
                    (shifted(&x, &[(i, hh)]) - 2.0 * fx + shifted(&x, &[(i, -hh)])) / (hh * hh)
                } else {
                    (shifted(&x, &[(i, hh), (j, hh)]) - shifted(&x, &[(i, hh), (j, -hh)]) - shifted(&x, &[(i, -hh), (j, hh)])
                        + shifted(&x, &[(i, -hh), (j, -hh)]))
                        / (4.0 * hh * hh)
                };
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        if hess.iter().any(|v| !v.is_finite()) {
            break;
        }
        // The objective is concave, so -H is positive definite near the optimum.
        let Some(chol) = (-hess).cholesky() else { break };
        let step = chol.solve(&g);
        let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + d).collect();
        let fc = eval(&cand);
        if !(fc >= fx - 1e-14 * fx.abs().max(1.0)) {
            break;
        }
        let Some(gc) = gradient(&cand) else { break };
        if gc.norm() >= g.norm() {
            break;
        }
        let done = step.amax() <= 1e-13 * scale;
        (x, fx, g) = (cand, fc, gc);
        if done {
            break;
        }
    }
    (x, fx, evals.get())
}

fn explore(eval: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], fx: f64, step: f64) -> (Vec<f64>, f64) {
    let mut x = x.to_vec();
    let mut fx = fx;
    for i in 0..x.len() {
        let orig = x[i];
        for dir in [1.0, -1.0] {
            x[i] = orig + dir * step;
            let fc = eval(&x);
            if fc > fx {
                fx = fc;
                break;
            }
            x[i] = orig;
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preferences::{HabitWeights, UtilityFamily};
    use crate::tree::EventTree;

    #[test]
    fn pattern_search_finds_quadratic_maximum() {
        let f = |x: &[f64]| -(x[0] - 1.0).powi(2) - 10.0 * (x[1] + x[0] - 0.5).powi(2);
        let x = pattern_search(&f, vec![0.0, 0.0], &OracleOptions::default()).0;
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn one_period_habit_example() {
        // T = 1, r = 0, bond only, beta = 1, log utility, eps = (1, 0): c = (0.25, 0.75).
        let tree = EventTree::regular(1, 1).unwrap();
        let m = MarketModel::new(tree.clone(), 0, vec![vec![]], vec![vec![]], vec![RandomVariable::new(0, vec![0.0])], false)
            .unwrap();
        let p = HabitPreferences::new(&tree, UtilityFamily::Log { rho: 0.0 }, HabitWeights::one_lag(1, 1.0), None).unwrap();
        let eps = AdaptedProcess::from_levels(&tree, vec![vec![1.0], vec![0.0]]).unwrap();
        let s = solve_primal_oracle(&m, &p, &eps).unwrap();
        assert!((s.consumption.at(0).value(0) - 0.25).abs() < 1e-7);
        assert!((s.consumption.at(1).value(0) - 0.75).abs() < 1e-7);
    }

    #[test]
    fn rejects_large_instances() {
        let tree = EventTree::regular(2, 3).unwrap();
        let m = MarketModel::new(
            tree.clone(),
            0,
            vec![vec![], vec![]],
            vec![vec![], vec![]],
            vec![RandomVariable::new(0, vec![0.0]), RandomVariable::new(1, vec![0.0; 3])],
            false,
        )
        .unwrap();
        let p = HabitPreferences::new(&tree, UtilityFamily::Log { rho: 0.0 }, HabitWeights::none(2), None).unwrap();
        let eps = AdaptedProcess::constant(&tree, 1.0);
        assert!(solve_primal_oracle(&m, &p, &eps).is_ok());
        let tree3 = EventTree::regular(3, 3).unwrap();
        let m3 = MarketModel::new(
            tree3.clone(),
            0,
            vec![vec![], vec![], vec![]],
            vec![vec![], vec![], vec![]],
            vec![
                RandomVariable::new(0, vec![0.0]),
                RandomVariable::new(1, vec![0.0; 3]),
                RandomVariable::new(2, vec![0.0; 9]),
            ],
            false,
        )
        .unwrap();
        let p3 = HabitPreferences::new(&tree3, UtilityFamily::Log { rho: 0.0 }, HabitWeights::none(3), None).unwrap();
        let eps3 = AdaptedProcess::constant(&tree3, 1.0);
        assert!(matches!(solve_primal_oracle(&m3, &p3, &eps3), Err(Error::InstanceTooLarge { dim: 13, .. })));
    }

}
