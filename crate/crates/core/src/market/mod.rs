//! Securities markets on an event tree.
//!
//! Slot 0 is the bond: price 1 at every node, payoff `1 + r_k` with the rate
//! known one period ahead. Slots `1..=N` are risky assets paying
//! `S^i_k + d^i_k`, with `S^i_T = 0`.

mod basis;
mod budget;
mod classify;
mod spd;

use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use basis::{BasisBlock, PayoffSpaceBasis, RANK_TOL};
pub use budget::{consumption_to_wealth, wealth_to_consumption};
pub use classify::{classify_market, Classification, Filtration, MarketClass};
pub use spd::{aggregate_spd, check_no_arbitrage, find_positive_spd, perturbed_aggregate_spd, PricingKernel, SpdObjective};

use crate::error::{Error, Result};
use crate::tree::{EventTree, RandomVariable, TreeSpec};

/// Serialized market. `prices[k][i]` is asset `i` at level `k < T`,
/// `dividends[k-1][i]` and `rates[k-1]` belong to period `k >= 1`; rates are
/// indexed by the atoms of level `k-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub tree: TreeSpec,
    pub n_assets: usize,
    pub prices: Vec<Vec<Vec<f64>>>,
    pub dividends: Vec<Vec<Vec<f64>>>,
    pub rates: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filtration_f: Option<Vec<Vec<Vec<usize>>>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_negative_rates: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct MarketModel {
    tree: EventTree,
    n_assets: usize,
    prices: Vec<Vec<RandomVariable>>,
    dividends: Vec<Vec<RandomVariable>>,
    rates: Vec<RandomVariable>,
    allow_negative_rates: bool,
    filtration: Option<Filtration>,
    basis: PayoffSpaceBasis,
    kernel: OnceLock<Result<PricingKernel>>,
}

impl MarketModel {
    /// Validates shapes and signs and builds the payoff-space basis.
    /// Net rates must be non-negative unless `allow_negative_rates`, in
    /// which case only gross rates `1 + r` must stay positive.
    pub fn new(
        tree: EventTree,
        n_assets: usize,
        prices: Vec<Vec<RandomVariable>>,
        dividends: Vec<Vec<RandomVariable>>,
        rates: Vec<RandomVariable>,
        allow_negative_rates: bool,
    ) -> Result<Self> {
        let t = tree.horizon();
        let bad = |m: String| Err(Error::InvalidMarket(m));
        if prices.len() != t || dividends.len() != t || rates.len() != t {
            return bad(format!("prices, dividends and rates need {t} periods each"));
        }
        for k in 0..t {
            if prices[k].len() != n_assets || dividends[k].len() != n_assets {
                return bad(format!("period {k} does not list {n_assets} assets"));
            }
            for (i, s) in prices[k].iter().enumerate() {
                check_level(&tree, s, k, &format!("price of asset {} at level {k}", i + 1))?;
                if s.values().iter().any(|&v| v < 0.0) {
                    return bad(format!("negative price for asset {} at level {k}", i + 1));
                }
            }
            for (i, d) in dividends[k].iter().enumerate() {
                check_level(&tree, d, k + 1, &format!("dividend of asset {} at level {}", i + 1, k + 1))?;
                if d.values().iter().any(|&v| v < 0.0) {
                    return bad(format!("negative dividend for asset {} at level {}", i + 1, k + 1));
                }
            }
            check_level(&tree, &rates[k], k, &format!("rate for period {}", k + 1))?;
            let floor = if allow_negative_rates { -1.0 } else { 0.0 };
            if rates[k].values().iter().any(|&r| r < floor || (allow_negative_rates && r <= -1.0)) {
                return bad(format!("rate for period {} out of range", k + 1));
            }
        }
        let mut m = MarketModel {
            tree,
            n_assets,
            prices,
            dividends,
            rates,
            allow_negative_rates,
            filtration: None,
            basis: PayoffSpaceBasis::default(),
            kernel: OnceLock::new(),
        };
        m.basis = PayoffSpaceBasis::build(&m);
        Ok(m)
    }

    pub fn from_spec(spec: &MarketSpec) -> Result<Self> {
        let tree = EventTree::from_spec(&spec.tree)?;
        let t = tree.horizon();
        if spec.prices.len() != t || spec.dividends.len() != t || spec.rates.len() != t {
            return Err(Error::InvalidMarket(format!("prices, dividends and rates need {t} periods each")));
        }
        let rv = |lvl: usize, v: &Vec<f64>| RandomVariable::new(lvl, v.clone());
        let prices = spec.prices.iter().enumerate().map(|(k, p)| p.iter().map(|v| rv(k, v)).collect()).collect();
        let dividends =
            spec.dividends.iter().enumerate().map(|(k, d)| d.iter().map(|v| rv(k + 1, v)).collect()).collect();
        let rates = spec.rates.iter().enumerate().map(|(k, r)| rv(k, r)).collect();
        let mut m = Self::new(tree, spec.n_assets, prices, dividends, rates, spec.allow_negative_rates)?;
        if let Some(levels) = &spec.filtration_f {
            m.filtration = Some(Filtration::new(&m.tree, levels.clone())?);
        }
        Ok(m)
    }

    pub fn to_spec(&self) -> MarketSpec {
        MarketSpec {
            tree: self.tree.to_spec(),
            n_assets: self.n_assets,
            prices: self.prices.iter().map(|p| p.iter().map(|v| v.values().to_vec()).collect()).collect(),
            dividends: self.dividends.iter().map(|d| d.iter().map(|v| v.values().to_vec()).collect()).collect(),
            rates: self.rates.iter().map(|r| r.values().to_vec()).collect(),
            filtration_f: self.filtration.as_ref().map(|f| f.levels().to_vec()),
            allow_negative_rates: self.allow_negative_rates,
            seed: None,
        }
    }

    /// Attaches a candidate witness filtration for the idiosyncratic class.
    pub fn with_filtration(mut self, f: Filtration) -> Self {
        self.filtration = Some(f);
        self
    }

    pub fn tree(&self) -> &EventTree {
        &self.tree
    }

    pub fn horizon(&self) -> usize {
        self.tree.horizon()
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    /// Bond plus risky assets.
    pub fn n_slots(&self) -> usize {
        self.n_assets + 1
    }

    pub fn filtration(&self) -> Option<&Filtration> {
        self.filtration.as_ref()
    }

    pub fn allows_negative_rates(&self) -> bool {
        self.allow_negative_rates
    }

    /// Net rate of period `k >= 1`, measurable at level `k - 1`.
    pub fn rate(&self, k: usize) -> &RandomVariable {
        &self.rates[k - 1]
    }

    /// Price of `slot` at level `k`; the bond costs 1 and everything is worthless at `T`.
    pub fn price(&self, k: usize, slot: usize) -> RandomVariable {
        if slot == 0 {
            self.tree.constant(k, 1.0)
        } else if k == self.horizon() {
            self.tree.constant(k, 0.0)
        } else {
            self.prices[k][slot - 1].clone()
        }
    }

    pub fn dividend(&self, k: usize, asset: usize) -> &RandomVariable {
        &self.dividends[k - 1][asset]
    }

    /// Payoff of `slot` at level `k >= 1`.
    pub fn payoff(&self, k: usize, slot: usize) -> RandomVariable {
        if slot == 0 {
            self.tree.lift(&self.rates[k - 1], k).map(|r| 1.0 + r)
        } else {
            let s = self.price(k, slot);
            self.tree.zip(&s, &self.dividends[k - 1][slot - 1], |a, b| a + b)
        }
    }

    /// Payoffs over the children of level-`k-1` atom `parent`, one row per child.
    pub fn node_payoffs(&self, k: usize, parent: usize) -> DMatrix<f64> {
        let children = self.tree.children(k - 1, parent);
        let payoffs: Vec<RandomVariable> = (0..self.n_slots()).map(|s| self.payoff(k, s)).collect();
        DMatrix::from_fn(children.len(), self.n_slots(), |r, s| payoffs[s].value(children[r]))
    }

    /// Prices at level-`k` atom `atom`, bond first.
    pub fn node_prices(&self, k: usize, atom: usize) -> Vec<f64> {
        (0..self.n_slots()).map(|s| if s == 0 { 1.0 } else { self.prices[k][s - 1].value(atom) }).collect()
    }

    pub fn basis(&self) -> &PayoffSpaceBasis {
        &self.basis
    }

    /// `P^k x`: conditional expectation onto level `k`, then the orthogonal
    /// projection onto the payoff space.
    pub fn project(&self, x: &RandomVariable, k: usize) -> RandomVariable {
        self.basis.project(&self.tree, x, k)
    }

    /// Deflator and aggregate SPD, computed once per market.
    pub fn kernel(&self) -> Result<&PricingKernel> {
        self.kernel.get_or_init(|| PricingKernel::compute(self)).as_ref().map_err(Clone::clone)
    }

    /// True when every rate is constant across the atoms of its level.
    pub fn has_deterministic_rates(&self) -> bool {
        self.rates.iter().all(|r| {
            let v = r.values();
            v.iter().all(|&x| (x - v[0]).abs() <= 1e-12)
        })
    }

    /// The market seen from level-`level` atom `atom` onward, with its
    /// kernel restricted and renormalized from the parent market.
    pub fn restrict(&self, level: usize, atom: usize) -> Result<(MarketModel, Vec<Vec<usize>>)> {
        let (sub, map) = self.tree.subtree(level, atom);
        let h = sub.horizon();
        let take = |x: &RandomVariable, j: usize| RandomVariable::new(j, map[j].iter().map(|&a| x.value(a)).collect());
        let prices = (0..h).map(|j| self.prices[level + j].iter().map(|s| take(s, j)).collect()).collect();
        let dividends = (1..=h).map(|j| self.dividends[level + j - 1].iter().map(|d| take(d, j)).collect()).collect();
        let rates = (0..h).map(|j| take(&self.rates[level + j], j)).collect();
        let m = MarketModel::new(sub, self.n_assets, prices, dividends, rates, self.allow_negative_rates)?;
        if let Ok(kernel) = self.kernel() {
            let _ = m.kernel.set(Ok(kernel.restrict(&m.tree, &map, level, atom)));
        }
        Ok((m, map))
    }
}

fn check_level(tree: &EventTree, x: &RandomVariable, level: usize, what: &str) -> Result<()> {
    if x.level() != level || x.len() != tree.n_atoms(level) {
        return Err(Error::InvalidMarket(format!(
            "{what} needs {} values at level {level}, found {} at level {}",
            tree.n_atoms(level),
            x.len(),
            x.level()
        )));
    }
    if x.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMarket(format!("{what} is not finite")));
    }
    Ok(())
}

/// Convenience for tests and generators: payoff-space membership residual
/// `||x - P^k x||` for `x` measurable at level `k`.
pub fn payoff_space_residual(m: &MarketModel, x: &RandomVariable) -> f64 {
    let k = x.level();
    let p = m.project(x, k);
    m.tree().norm(&m.tree().zip(x, &p, |a, b| a - b))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// One period, two equally likely states, a bond at rate `r` and one
    /// stock with price `s0` paying `up`/`down`.
    pub fn binomial(r: f64, s0: f64, up: f64, down: f64) -> MarketModel {
        let tree = EventTree::regular(1, 2).unwrap();
        MarketModel::new(
            tree,
            1,
            vec![vec![RandomVariable::new(0, vec![s0])]],
            vec![vec![RandomVariable::new(1, vec![up, down])]],
            vec![RandomVariable::new(0, vec![r])],
            false,
        )
        .unwrap()
    }

    /// Two periods, three states per node, bond plus one stock: incomplete.
    pub fn trinomial_incomplete() -> MarketModel {
        let tree = EventTree::from_conditional(&[
            vec![vec![0.3, 0.3, 0.4]],
            vec![vec![0.2, 0.5, 0.3], vec![1.0 / 3.0; 3], vec![0.25, 0.25, 0.5]],
        ])
        .unwrap();
        let s1 = RandomVariable::new(1, vec![1.2, 1.0, 0.85]);
        let d1 = RandomVariable::new(1, vec![0.0, 0.05, 0.0]);
        let d2 = RandomVariable::new(2, vec![1.5, 1.2, 0.9, 1.25, 1.0, 0.8, 1.1, 0.9, 0.7]);
        MarketModel::new(
            tree,
            1,
            vec![vec![RandomVariable::new(0, vec![1.0])], vec![s1]],
            vec![vec![d1], vec![d2]],
            vec![RandomVariable::new(0, vec![0.02]), RandomVariable::new(1, vec![0.01, 0.03, 0.02])],
            false,
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn payoffs_include_terminal_zero_price() {
        let m = binomial(0.05, 1.0, 1.3, 0.9);
        assert_eq!(m.payoff(1, 0).values(), &[1.05, 1.05]);
        assert_eq!(m.payoff(1, 1).values(), &[1.3, 0.9]);
        assert_eq!(m.price(1, 1).values(), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_negative_prices_and_rates() {
        let tree = EventTree::regular(1, 2).unwrap();
        let r = MarketModel::new(
            tree.clone(),
            0,
            vec![vec![]],
            vec![vec![]],
            vec![RandomVariable::new(0, vec![-0.1])],
            false,
        );
        assert!(matches!(r, Err(Error::InvalidMarket(_))));
        let ok = MarketModel::new(tree, 0, vec![vec![]], vec![vec![]], vec![RandomVariable::new(0, vec![-0.1])], true);
        assert!(ok.is_ok());
    }

    #[test]
    fn spec_round_trip_preserves_market() {
        let m = trinomial_incomplete();
        let back = MarketModel::from_spec(&m.to_spec()).unwrap();
        assert_eq!(back.to_spec(), m.to_spec());
    }

    #[test]
    fn restriction_keeps_local_payoffs() {
        let m = trinomial_incomplete();
        let (sub, map) = m.restrict(1, 2).unwrap();
        assert_eq!(sub.horizon(), 1);
        assert_eq!(map[1], vec![6, 7, 8]);
        assert_eq!(sub.payoff(1, 1).values(), &[1.1, 0.9, 0.7]);
        assert!((sub.rate(1).value(0) - 0.02).abs() < 1e-15);
    }
}
