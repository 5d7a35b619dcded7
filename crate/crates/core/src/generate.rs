//! Seeded random scenarios: a market, preferences and an endowment.
//!
//! Markets are priced by a positive deflator drawn per node, so they are
//! free of arbitrage by construction; the draw is still verified and
//! rejected when it misses the requested market class. Identical seeds
//! give identical scenarios.

use std::collections::HashMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{check_no_arbitrage, classify_market, Filtration, MarketClass, MarketModel};
use crate::preferences::{HabitPreferences, HabitWeights, UtilityFamily};
use crate::solvers::solve_general;
use crate::tree::{AdaptedProcess, EventTree, RandomVariable};

pub const MAX_ATTEMPTS: usize = 1000;

/// Habit weights drawn when none is requested.
pub const HABIT_WEIGHTS: [f64; 4] = [0.0, 0.3, 0.5, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// A single bond with deterministic rates.
    BondOnly,
    /// One risky asset fewer than the branching; stochastic rates.
    Complete,
    /// A complete binomial market under a coarser filtration, with an
    /// independent binary shock refining every node.
    Idiosyncratic,
    /// Three children per node, the last two indistinguishable by the
    /// assets; deterministic rates.
    TypeC,
    /// Three children per node and one risky asset; deterministic rates.
    DeterministicIncomplete,
    /// As above with stochastic rates.
    General,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::BondOnly,
        Family::Complete,
        Family::Idiosyncratic,
        Family::TypeC,
        Family::DeterministicIncomplete,
        Family::General,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::BondOnly => "bond-only",
            Family::Complete => "complete",
            Family::Idiosyncratic => "idiosyncratic",
            Family::TypeC => "type-c",
            Family::DeterministicIncomplete => "deterministic-incomplete",
            Family::General => "general",
        }
    }

    fn deterministic_rates(self) -> bool {
        matches!(self, Family::BondOnly | Family::TypeC | Family::DeterministicIncomplete)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown market family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UtilityKind {
    Power { gamma: f64 },
    Log,
    Exponential { gamma: f64 },
}

/// Everything that determines a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSeed {
    pub seed: u64,
    pub family: Family,
    pub horizon: usize,
    /// Children per node; fixed at 4 for idiosyncratic and 3 for the
    /// incomplete families.
    pub branching: usize,
    pub utility: UtilityKind,
    /// One-lag habit weight; drawn from [`HABIT_WEIGHTS`] when absent.
    pub habit_weight: Option<f64>,
    /// Draw a positive baseline habit.
    pub baseline_habit: bool,
    /// Reject scenarios whose total portfolio dimension exceeds this.
    pub max_portfolio_dim: Option<usize>,
    /// Reject scenarios the Newton solver cannot solve.
    pub require_solvable: bool,
}

impl ScenarioSeed {
    pub fn new(seed: u64, family: Family) -> Self {
        ScenarioSeed {
            seed,
            family,
            horizon: 2,
            branching: 2,
            utility: UtilityKind::Power { gamma: 2.0 },
            habit_weight: None,
            baseline_habit: true,
            max_portfolio_dim: None,
            require_solvable: true,
        }
    }

    fn children(&self) -> usize {
        match self.family {
            Family::BondOnly | Family::Complete => self.branching.max(2),
            Family::Idiosyncratic => 4,
            Family::TypeC | Family::DeterministicIncomplete | Family::General => 3,
        }
    }

    fn n_assets(&self) -> usize {
        match self.family {
            Family::BondOnly => 0,
            Family::Complete => self.children() - 1,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: ScenarioSeed,
    pub market: MarketModel,
    pub preferences: HabitPreferences,
    pub endowment: AdaptedProcess,
    /// Rejected draws before this one.
    pub rejections: usize,
}

/// Serialized endowment: one array per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndowmentSpec {
    pub eps: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EndowmentSpec {
    pub fn build(&self, tree: &EventTree) -> Result<AdaptedProcess> {
        AdaptedProcess::from_levels(tree, self.eps.clone())
    }
}

/// Draws until the market has the requested class and, if asked, the
/// problem is solvable; gives up after [`MAX_ATTEMPTS`] rejections.
pub fn generate(s: &ScenarioSeed) -> Result<Scenario> {
    if s.horizon == 0 {
        return Err(Error::PreconditionViolated("horizon must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    for attempt in 0..MAX_ATTEMPTS {
        let Some(market) = draw_market(s, &mut rng)? else { continue };
        if !accept_market(s, &market)? {
            continue;
        }
        let tree = market.tree().clone();
        let preferences = draw_preferences(s, &tree, &mut rng)?;
        let endowment = draw_endowment(&tree, &mut rng)?;
        if s.require_solvable && solve_general(&market, &preferences, &endowment).is_err() {
            continue;
        }
        return Ok(Scenario { seed: s.clone(), market, preferences, endowment, rejections: attempt });
    }
    Err(Error::GenerationExhausted { attempts: MAX_ATTEMPTS })
}

fn accept_market(s: &ScenarioSeed, m: &MarketModel) -> Result<bool> {
    if let Some(max) = s.max_portfolio_dim {
        let tree = m.tree();
        let dim: usize = (0..tree.horizon()).map(|k| tree.n_atoms(k)).sum::<usize>() * m.n_slots();
        if dim > max {
            return Err(Error::InstanceTooLarge { dim, max });
        }
    }
    match check_no_arbitrage(m) {
        Ok(_) => {}
        Err(Error::ArbitrageDetected { .. }) => return Ok(false),
        Err(e) => return Err(e),
    }
    let cls = classify_market(m)?;
    Ok(match s.family {
        Family::BondOnly => true,
        Family::Complete => cls.class == MarketClass::Complete,
        Family::Idiosyncratic => cls.class == MarketClass::Idiosyncratic,
        Family::TypeC => cls.class == MarketClass::TypeC && cls.deterministic_interest,
        Family::DeterministicIncomplete => cls.class == MarketClass::General && cls.deterministic_interest,
        Family::General => cls.class == MarketClass::General && !cls.deterministic_interest,
    })
}

/// Tree layout: conditional probabilities, the payoff group of each child,
/// and a key per node; nodes sharing a key share market parameters.
struct Layout {
    cond: Vec<Vec<Vec<f64>>>,
    groups: Vec<Vec<Vec<usize>>>,
    keys: Vec<Vec<usize>>,
    /// For idiosyncratic markets: the coarse path of each level-`k` atom.
    coarse: Option<Vec<Vec<usize>>>,
}

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn layout(s: &ScenarioSeed, rng: &mut ChaCha8Rng) -> Layout {
    let t = s.horizon;
    let b = s.children();
    let mut cond = Vec::with_capacity(t);
    let mut groups = Vec::with_capacity(t);
    let mut keys = vec![vec![0usize]];
    if s.family == Family::Idiosyncratic {
        // Children are (f, e) pairs, f the coarse move. Coarse transition
        // probabilities depend only on the coarse node.
        let mut coarse = vec![vec![0usize]];
        let mut coarse_probs: HashMap<(usize, usize), f64> = HashMap::new();
        for k in 0..t {
            let (mut c, mut g, mut next_keys, mut next_coarse) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for &key in &keys[k] {
                let pf = *coarse_probs.entry((k, key)).or_insert_with(|| rng.gen_range(0.3..0.7));
                let pe = rng.gen_range(0.3..0.7);
                let mut q = Vec::with_capacity(4);
                let mut gr = Vec::with_capacity(4);
                for f in 0..2 {
                    for e in 0..2 {
                        let a = if f == 0 { pf } else { 1.0 - pf };
                        let z = if e == 0 { pe } else { 1.0 - pe };
                        q.push(a * z);
                        gr.push(f);
                        next_keys.push(2 * key + f);
                        next_coarse.push(2 * key + f);
                    }
                }
                c.push(q);
                g.push(gr);
            }
            cond.push(c);
            groups.push(g);
            keys.push(next_keys);
            coarse.push(next_coarse);
        }
        return Layout { cond, groups, keys, coarse: Some(coarse) };
    }
    let mut n = 1;
    for _ in 0..t {
        cond.push((0..n).map(|_| simplex(rng, b)).collect());
        let g: Vec<usize> = match s.family {
            Family::TypeC => vec![0, 1, 1],
            _ => (0..b).collect(),
        };
        groups.push(vec![g; n]);
        n *= b;
        keys.push((0..n).collect());
    }
    Layout { cond, groups, keys, coarse: None }
}

/// Rate, deflator weight per payoff group, and payoff offsets per asset and group.
type NodeParams = (f64, Vec<f64>, Vec<Vec<f64>>);

fn draw_market(s: &ScenarioSeed, rng: &mut ChaCha8Rng) -> Result<Option<MarketModel>> {
    let lay = layout(s, rng);
    let tree = EventTree::from_conditional(&lay.cond)?;
    let t = s.horizon;
    let n = s.n_assets();
    let level_rates: Vec<f64> = (0..t).map(|_| if rng.gen_bool(0.5) { 0.0 } else { 0.05 }).collect();
    // Backward: payoffs per group, then prices S_k = E[Z (S_{k+1} + d_{k+1})].
    let mut prices: Vec<Vec<Vec<f64>>> = (0..=t).map(|k| vec![vec![0.0; tree.n_atoms(k)]; n]).collect();
    let mut dividends: Vec<Vec<Vec<f64>>> = (0..t).map(|k| vec![vec![0.0; tree.n_atoms(k + 1)]; n]).collect();
    let mut rates: Vec<Vec<f64>> = (0..t).map(|k| vec![0.0; tree.n_atoms(k)]).collect();
    for k in (0..t).rev() {
        let mut params: HashMap<usize, NodeParams> = HashMap::new();
        for a in 0..tree.n_atoms(k) {
            let kids = tree.children(k, a);
            let grp = &lay.groups[k][a];
            let n_groups = grp.iter().max().map_or(0, |g| g + 1);
            let (r, z, offsets) = params
                .entry(lay.keys[k][a])
                .or_insert_with(|| {
                    let r = if s.family.deterministic_rates() { level_rates[k] } else { rng.gen_range(0.0..0.06) };
                    let z: Vec<f64> = (0..n_groups).map(|_| rng.gen_range(0.5..1.5)).collect();
                    let off: Vec<Vec<f64>> = (0..n).map(|_| (0..n_groups).map(|_| rng.gen_range(0.1..1.0)).collect()).collect();
                    (r, z, off)
                })
                .clone();
            rates[k][a] = r;
            let q: Vec<f64> = kids.iter().map(|&c| tree.cond_prob(k + 1, c)).collect();
            let norm: f64 = (1.0 + r) * q.iter().zip(grp).map(|(qc, &g)| qc * z[g]).sum::<f64>();
            for i in 0..n {
                let top: Vec<f64> = (0..n_groups)
                    .map(|g| {
                        let m = kids.iter().zip(grp).filter(|(_, &gc)| gc == g).map(|(&c, _)| prices[k + 1][i][c]);
                        m.fold(0.0, f64::max) + offsets[i][g]
                    })
                    .collect();
                let mut value = 0.0;
                for (j, &c) in kids.iter().enumerate() {
                    let pay = top[grp[j]];
                    dividends[k][i][c] = pay - prices[k + 1][i][c];
                    value += q[j] * z[grp[j]] / norm * pay;
                }
                prices[k][i][a] = value;
            }
        }
    }
    let price_rv = (0..t).map(|k| (0..n).map(|i| RandomVariable::new(k, prices[k][i].clone())).collect()).collect();
    let div_rv = (0..t).map(|k| (0..n).map(|i| RandomVariable::new(k + 1, dividends[k][i].clone())).collect()).collect();
    let rate_rv = (0..t).map(|k| RandomVariable::new(k, rates[k].clone())).collect();
    let mut market = match MarketModel::new(tree.clone(), n, price_rv, div_rv, rate_rv, false) {
        Ok(m) => m,
        Err(Error::InvalidMarket(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if let Some(coarse) = &lay.coarse {
        let levels = (0..=t)
            .map(|k| {
                let mut by_key: Vec<(usize, Vec<usize>)> = Vec::new();
                for a in 0..tree.n_atoms(k) {
                    let key = coarse[k][a];
                    match by_key.iter_mut().find(|(kk, _)| *kk == key) {
                        Some((_, leaves)) => leaves.extend_from_slice(tree.leaves(k, a)),
                        None => by_key.push((key, tree.leaves(k, a).to_vec())),
                    }
                }
                by_key.into_iter().map(|(_, mut l)| {
                    l.sort_unstable();
                    l
                }).collect()
            })
            .collect();
        market = market.with_filtration(Filtration::new(&tree, levels)?);
    }
    Ok(Some(market))
}

fn draw_preferences(s: &ScenarioSeed, tree: &EventTree, rng: &mut ChaCha8Rng) -> Result<HabitPreferences> {
    let t = tree.horizon();
    let rho = if rng.gen_bool(0.5) { 0.0 } else { 0.02 };
    let family = match s.utility {
        UtilityKind::Power { gamma: 1.0 } => UtilityFamily::Log { rho },
        UtilityKind::Power { gamma } => UtilityFamily::power(gamma, rho, t),
        UtilityKind::Log => UtilityFamily::Log { rho },
        UtilityKind::Exponential { gamma } => UtilityFamily::Exponential { gamma, rho },
    };
    let b = s.habit_weight.unwrap_or_else(|| HABIT_WEIGHTS[rng.gen_range(0..HABIT_WEIGHTS.len())]);
    let habit = if s.baseline_habit {
        let comps = (0..=t)
            .map(|k| RandomVariable::new(k, (0..tree.n_atoms(k)).map(|_| rng.gen_range(0.0..0.05)).collect()))
            .collect();
        Some(AdaptedProcess::new(tree, comps)?)
    } else {
        None
    };
    HabitPreferences::new(tree, family, HabitWeights::one_lag(t, b), habit)
}

fn draw_endowment(tree: &EventTree, rng: &mut ChaCha8Rng) -> Result<AdaptedProcess> {
    let comps = (0..=tree.horizon())
        .map(|k| {
            let range = if k == 0 { 1.0..2.0 } else { 0.2..1.2 };
            RandomVariable::new(k, (0..tree.n_atoms(k)).map(|_| rng.gen_range(range.clone())).collect())
        })
        .collect();
    AdaptedProcess::new(tree, comps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_have_their_class() {
        for fam in Family::ALL {
            for seed in 0..3 {
                let mut s = ScenarioSeed::new(seed, fam);
                s.horizon = 2;
                let sc = generate(&s).unwrap();
                let cls = classify_market(&sc.market).unwrap();
                match fam {
                    Family::Complete => assert_eq!(cls.class, MarketClass::Complete),
                    Family::Idiosyncratic => assert_eq!(cls.class, MarketClass::Idiosyncratic),
                    Family::TypeC => assert_eq!(cls.class, MarketClass::TypeC),
                    Family::DeterministicIncomplete | Family::General => assert_eq!(cls.class, MarketClass::General),
                    Family::BondOnly => assert!(sc.market.has_deterministic_rates()),
                }
                if fam == Family::Complete {
                    let tree = sc.market.tree();
                    assert!((1..=2).all(|k| sc.market.basis().rank(k) == tree.n_atoms(k)));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_scenario() {
        let s = ScenarioSeed::new(1, Family::Idiosyncratic);
        let (a, b) = (generate(&s).unwrap(), generate(&s).unwrap());
        assert_eq!(a.market.to_spec(), b.market.to_spec());
        assert_eq!(a.endowment, b.endowment);
        assert_eq!(a.preferences.beta(), b.preferences.beta());
    }

    #[test]
    fn oversized_request_is_rejected() {
        let mut s = ScenarioSeed::new(0, Family::Complete);
        s.max_portfolio_dim = Some(6);
        s.horizon = 3;
        assert!(matches!(generate(&s), Err(Error::InstanceTooLarge { .. })));
    }
}
