//! Property tests over random trees and generated scenarios.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use habitopt::generate::{generate, Family, Scenario, ScenarioSeed, UtilityKind};
use habitopt::market::{consumption_to_wealth, payoff_space_residual, wealth_to_consumption, MarketModel, MarketSpec};
use habitopt::solvers::solve_general;
use habitopt::tree::{AdaptedProcess, EventTree, RandomVariable};

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(Family::ALL.to_vec())
}

/// Stochastic rates need at least two periods.
fn horizon_for(fam: Family, horizon: usize) -> usize {
    if fam == Family::General {
        horizon.max(2)
    } else {
        horizon
    }
}

fn scenario(seed: u64, fam: Family, horizon: usize) -> Scenario {
    let mut s = ScenarioSeed::new(seed, fam);
    s.horizon = horizon_for(fam, horizon);
    generate(&s).expect("generated scenario")
}

fn market(seed: u64, fam: Family, horizon: usize) -> MarketModel {
    let mut s = ScenarioSeed::new(seed, fam);
    s.horizon = horizon_for(fam, horizon);
    s.require_solvable = false;
    generate(&s).expect("generated market").market
}

fn random_rv(rng: &mut ChaCha8Rng, tree: &EventTree, level: usize) -> RandomVariable {
    RandomVariable::new(level, (0..tree.n_atoms(level)).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Conditional probabilities for a tree with 1 to 3 children per node.
fn random_tree(seed: u64, horizon: usize) -> EventTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cond = Vec::new();
    let mut n = 1;
    for _ in 0..horizon {
        let level: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let b = rng.gen_range(1..=3);
                let w: Vec<f64> = (0..b).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            })
            .collect();
        n = level.iter().map(Vec::len).sum();
        cond.push(level);
    }
    EventTree::from_conditional(&cond).expect("valid tree")
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(48) })]

    #[test]
    fn conditional_expectation_is_a_tower(seed in 0u64..10_000, horizon in 1usize..=4) {
        let tree = random_tree(seed, horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x = random_rv(&mut rng, &tree, horizon);
        let total: f64 = tree.leaf_probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for k in 0..=horizon {
            let ek = tree.condexp(&x, k);
            prop_assert!((tree.expectation(&ek) - tree.expectation(&x)).abs() < 1e-12);
            for j in k..=horizon {
                let nested = tree.condexp(&tree.condexp(&x, j), k);
                prop_assert!(nested.max_abs_diff(&ek) < 1e-12);
            }
        }
    }

    #[test]
    fn projection_is_orthogonal_onto_payoff_space(seed in 0u64..500, fam in family(), horizon in 2usize..=3) {
        let m = market(seed, fam, horizon);
        let tree = m.tree();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 1..=horizon {
            let x = random_rv(&mut rng, tree, horizon);
            let y = random_rv(&mut rng, tree, horizon);
            let px = m.project(&x, k);
            prop_assert!(m.project(&px, k).max_abs_diff(&px) < 1e-12);
            prop_assert!(payoff_space_residual(&m, &px) < 1e-12);
            let resid = tree.zip(&x, &px, |a, b| a - b);
            for e in m.basis().orthonormal_basis(tree, k) {
                prop_assert!(tree.inner(&resid, &e).abs() < 1e-12);
            }
            let lhs = tree.inner(&px, &y);
            let rhs = tree.inner(&x, &m.project(&y, k));
            prop_assert!((lhs - rhs).abs() < 1e-12);
            // Every payoff is already in the space.
            for s in 0..m.n_slots() {
                prop_assert!(payoff_space_residual(&m, &m.payoff(k, s)) < 1e-10);
            }
        }
    }

    #[test]
    fn aggregate_spd_prices_every_asset(seed in 0u64..500, fam in family(), horizon in 1usize..=3) {
        let m = market(seed, fam, horizon);
        let tree = m.tree();
        let horizon = tree.horizon();
        let mm = &m.kernel().unwrap().aggregate;
        prop_assert!((mm.at(0).value(0) - 1.0).abs() < 1e-12);
        for k in 0..horizon {
            for s in 0..m.n_slots() {
                let value = tree.zip(mm.at(k + 1), &m.payoff(k + 1, s), |a, b| a * b);
                let lhs = tree.condexp(&value, k);
                let rhs = tree.zip(mm.at(k), &m.price(k, s), |a, b| a * b);
                prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10, "slot {} level {}", s, k);
            }
            prop_assert!(payoff_space_residual(&m, mm.at(k + 1)) < 1e-10);
        }
    }

    #[test]
    fn wealth_and_consumption_are_inverse(seed in 0u64..500, fam in family(), horizon in 1usize..=3) {
        let m = market(seed, fam, horizon);
        let tree = m.tree();
        let horizon = tree.horizon();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut comps = vec![tree.constant(0, 0.0)];
        for k in 1..=horizon {
            comps.push(m.project(&random_rv(&mut rng, tree, k), k));
        }
        let w = AdaptedProcess::new(tree, comps).unwrap();
        let eps = AdaptedProcess::new(tree, (0..=horizon).map(|k| random_rv(&mut rng, tree, k)).collect()).unwrap();
        let c = wealth_to_consumption(&m, &w, &eps).unwrap();
        let back = consumption_to_wealth(&m, &c, &eps).unwrap();
        prop_assert!(back.max_abs_diff(&w) < 1e-10);
    }

    #[test]
    fn market_spec_round_trips_through_json(seed in 0u64..500, fam in family(), horizon in 1usize..=3) {
        let m = market(seed, fam, horizon);
        let spec = m.to_spec();
        let text = serde_json::to_string(&spec).unwrap();
        let back: MarketSpec = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &spec);
        let rebuilt = MarketModel::from_spec(&back).unwrap();
        prop_assert_eq!(rebuilt.to_spec(), spec);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(24) })]

    #[test]
    fn optimum_satisfies_first_order_conditions(seed in 0u64..300, fam in family(), horizon in 1usize..=2) {
        let sc = scenario(seed, fam, horizon);
        let (m, p, eps) = (&sc.market, &sc.preferences, &sc.endowment);
        let horizon = m.horizon();
        let s = solve_general(m, p, eps).unwrap();
        prop_assert!(s.max_foc_residual() < 1e-8, "residual {:e}", s.max_foc_residual());
        // The habit-adjusted marginal utility is a positive SPD.
        for k in 0..=horizon {
            prop_assert!(s.marginal.at(k).min() > 0.0);
        }
        prop_assert!(s.wealth.at(0).value(0).abs() < 1e-10);
        let w = consumption_to_wealth(m, &s.consumption, eps).unwrap();
        prop_assert!(w.max_abs_diff(&s.wealth) < 1e-8);
    }

    #[test]
    fn power_plans_scale_with_wealth(seed in 0u64..300, fam in family(), lambda in 0.1f64..20.0, gamma in 0.5f64..5.0) {
        let mut s = ScenarioSeed::new(seed, fam);
        s.utility = UtilityKind::Power { gamma };
        s.baseline_habit = false;
        let sc = generate(&s).unwrap();
        let (m, p) = (&sc.market, &sc.preferences);
        let mut eps = AdaptedProcess::zeros(m.tree());
        eps.at_mut(0).values_mut()[0] = sc.endowment.at(0).value(0);
        let base = solve_general(m, p, &eps).unwrap();
        let scaled = solve_general(m, p, &eps.map(|v| v * lambda)).unwrap();
        let err = scaled.consumption.max_abs_diff(&base.consumption.map(|v| v * lambda));
        prop_assert!(err <= 1e-8 * lambda.max(1.0), "error {:e}", err);
    }
}
