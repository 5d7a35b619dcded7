//! The primal problem as a smooth concave program in payoff coordinates.
//!
//! Wealth at level `k` is written in the orthonormal payoff basis of each
//! level-`k-1` node, `W_k = sum_j theta_j e_j`. Consumption is then affine in
//! `theta`: `c = eps + A theta`, and so is perturbed consumption,
//! `c^ = a + J theta`. The objective `sum p u(c^)` has gradient
//! `J^T (p u')` and Hessian `J^T diag(p u'') J`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::market::MarketModel;
use crate::preferences::{HabitPreferences, PeriodUtility};
use crate::tree::{AdaptedProcess, RandomVariable};

pub(crate) struct Program {
    /// Start of level `k` in the stacked (period, atom) ordering.
    pub offsets: Vec<usize>,
    pub probs: DVector<f64>,
    pub eps: DVector<f64>,
    pub a: DMatrix<f64>,
    pub chat0: DVector<f64>,
    pub j: DMatrix<f64>,
    pub utils: Vec<PeriodUtility>,
    /// Level of each stacked row.
    pub row_level: Vec<usize>,
    /// `(level, first column)` of each wealth block, in level order.
    pub blocks: Vec<(usize, usize, usize)>,
}

impl Program {
    pub fn build(m: &MarketModel, p: &HabitPreferences, eps: &AdaptedProcess) -> Result<Self> {
        let tree = m.tree();
        let t = tree.horizon();
        let kernel = m.kernel()?;
        let mut offsets = Vec::with_capacity(t + 2);
        let mut n_rows = 0;
        for k in 0..=t {
            offsets.push(n_rows);
            n_rows += tree.n_atoms(k);
        }
        offsets.push(n_rows);
        let mut blocks = Vec::new();
        let mut n_cols = 0;
        for k in 1..=t {
            for b in m.basis().blocks(k) {
                blocks.push((k, b.parent, n_cols));
                n_cols += b.rank();
            }
        }
        let mut probs = DVector::zeros(n_rows);
        let mut eps_v = DVector::zeros(n_rows);
        let mut row_level = vec![0; n_rows];
        for k in 0..=t {
            for a in 0..tree.n_atoms(k) {
                probs[offsets[k] + a] = tree.atom_prob(k, a);
                eps_v[offsets[k] + a] = eps.at(k).value(a);
                row_level[offsets[k] + a] = k;
            }
        }
        // Column (k, B, j): W_k = e_j on the children of B, financed at the parent.
        let mut a_mat = DMatrix::zeros(n_rows, n_cols);
        for &(k, parent, first) in &blocks {
            let b = m.basis().block_at(k, parent);
            let r_parent = kernel.deflator.at(k - 1).value(parent);
            for j in 0..b.rank() {
                let col = first + j;
                let mut cost = 0.0;
                for (r, &c) in b.children.iter().enumerate() {
                    let e = b.vectors[(r, j)];
                    a_mat[(offsets[k] + c, col)] += e;
                    cost += b.cond_probs[r] * kernel.deflator.at(k).value(c) / r_parent * e;
                }
                a_mat[(offsets[k - 1] + parent, col)] -= cost;
            }
        }
        let habit = |x: &DVector<f64>| -> DVector<f64> {
            let mut out = x.clone();
            for k in 1..=t {
                for l in 0..k {
                    let beta = p.beta().get(k, l);
                    if beta != 0.0 {
                        for a in 0..tree.n_atoms(k) {
                            out[offsets[k] + a] -= beta * x[offsets[l] + tree.ancestor(k, a, l)];
                        }
                    }
                }
            }
            out
        };
        let mut chat0 = habit(&eps_v);
        for k in 0..=t {
            for a in 0..tree.n_atoms(k) {
                chat0[offsets[k] + a] -= p.habit().at(k).value(a);
            }
        }
        let mut j_mat = DMatrix::zeros(n_rows, n_cols);
        for col in 0..n_cols {
            let c = habit(&a_mat.column(col).into_owned());
            j_mat.set_column(col, &c);
        }
        let utils = (0..=t).map(|k| p.period(k)).collect();
        Ok(Program { offsets, probs, eps: eps_v, a: a_mat, chat0, j: j_mat, utils, row_level, blocks })
    }

    pub fn n_cols(&self) -> usize {
        self.a.ncols()
    }

    pub fn chat(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.chat0 + &self.j * theta
    }

    pub fn in_domain(&self, chat: &DVector<f64>) -> bool {
        chat.iter().zip(&self.row_level).all(|(&x, &k)| self.utils[k].in_domain(x))
    }

    /// Objective, or `None` outside the domain.
    pub fn value(&self, theta: &DVector<f64>) -> Option<f64> {
        let chat = self.chat(theta);
        if !self.in_domain(&chat) {
            return None;
        }
        let v: f64 = chat.iter().zip(&self.row_level).zip(self.probs.iter()).map(|((&x, &k), p)| p * self.utils[k].value(x)).sum();
        v.is_finite().then_some(v)
    }

    /// Gradient and Hessian at a point inside the domain.
    pub fn derivatives(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let chat = self.chat(theta);
        let n = chat.len();
        let mut w1 = DVector::zeros(n);
        let mut w2 = DVector::zeros(n);
        for i in 0..n {
            let u = &self.utils[self.row_level[i]];
            w1[i] = self.probs[i] * u.d1(chat[i]);
            w2[i] = self.probs[i] * u.d2(chat[i]);
        }
        let g = self.j.transpose() * &w1;
        let mut jw = self.j.clone();
        for (i, mut row) in jw.row_iter_mut().enumerate() {
            row *= w2[i];
        }
        let h = self.j.transpose() * jw;
        (g, h)
    }

    /// Scale of the marginal utilities, used to make gradient tolerances relative.
    pub fn gradient_scale(&self, theta: &DVector<f64>) -> f64 {
        let chat = self.chat(theta);
        let s: f64 = chat.iter().zip(&self.row_level).zip(self.probs.iter()).map(|((&x, &k), p)| p * self.utils[k].d1(x).abs()).sum();
        s.max(1.0)
    }

    /// Maximizes the smallest perturbed consumption over `theta`.
    /// Returns the maximizer and the attained minimum.
    pub fn max_min_point(&self) -> Result<(DVector<f64>, f64)> {
        let n = self.n_cols();
        let rows = self.chat0.len();
        let mut lp = LinearProgram::new(n + 1);
        for v in 0..=n {
            lp.set_free(v);
        }
        let mut obj = vec![0.0; n + 1];
        obj[n] = 1.0;
        lp.set_objective(obj);
        // The program is homogeneous in (theta, t, chat0), so it is solved
        // at unit scale; this keeps the tableau conditioning independent of
        // the size of the endowment.
        let scale = self.chat0.amax().max(self.eps.amax()).max(1e-12);
        for i in 0..rows {
            let mut row: Vec<f64> = (0..n).map(|c| self.j[(i, c)]).collect();
            row.push(-1.0);
            lp.add_row(row, Relation::Ge, -self.chat0[i] / scale);
        }
        // Bounds the search when the habit structure leaves t unbounded.
        let mut row = vec![0.0; n + 1];
        row[n] = 1.0;
        lp.add_row(row, Relation::Le, 1e6);
        match lp.maximize() {
            LpOutcome::Optimal { x, value } => Ok((DVector::from_column_slice(&x[..n]) * scale, value * scale)),
            LpOutcome::Infeasible => Err(Error::Infeasible("max-min program infeasible".into())),
            other => Err(Error::Infeasible(format!("max-min program failed: {other:?}"))),
        }
    }

    /// Splits a stacked vector into an adapted process.
    pub fn unstack(&self, m: &MarketModel, x: &DVector<f64>) -> AdaptedProcess {
        let tree = m.tree();
        let comps = (0..=tree.horizon())
            .map(|k| RandomVariable::new(k, x.rows(self.offsets[k], self.offsets[k + 1] - self.offsets[k]).iter().copied().collect()))
            .collect();
        AdaptedProcess::new(tree, comps).expect("stacked vector matches the tree")
    }

    /// Wealth `W_k = sum_j theta_j e_j`, with `W_0 = 0`.
    pub fn wealth(&self, m: &MarketModel, theta: &DVector<f64>) -> AdaptedProcess {
        let mut w = DVector::zeros(self.chat0.len());
        for &(k, parent, first) in &self.blocks {
            let b = m.basis().block_at(k, parent);
            for (r, &c) in b.children.iter().enumerate() {
                w[self.offsets[k] + c] = (0..b.rank()).map(|j| theta[first + j] * b.vectors[(r, j)]).sum();
            }
        }
        self.unstack(m, &w)
    }
}
