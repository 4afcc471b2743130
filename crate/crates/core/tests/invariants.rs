//! Structural properties of equilibria on randomly generated markets.

mod common;

use proptest::prelude::*;
use sfgame::dispatch::{efficient_dispatch, local_allocation, reported_dispatch};
use sfgame::equilibrium::{competitive_equilibrium, nash_equilibrium};
use sfgame::two_node::{two_node_nash, unconstrained_supply, TwoNodeScenario};

fn node_bids(m: &sfgame::Market, theta: &[f64], i: usize) -> (Vec<f64>, Vec<f64>) {
    m.at_node(i).iter().map(|&j| (m.producers()[j].capacity, theta[j])).unzip()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nash_production_follows_submitted_supply_functions(seed in 1000u64..100_000) {
        let m = common::random_market(seed);
        let ne = nash_equilibrium(&m).unwrap();
        let theta = ne.bids.as_slice();
        for i in 0..m.node_count() {
            let (caps, bids) = node_bids(&m, theta, i);
            let alloc = local_allocation(&caps, &bids, ne.dispatch.q[i]).unwrap();
            for (&j, a) in m.at_node(i).iter().zip(alloc) {
                prop_assert!((ne.dispatch.x[j] - a).abs() <= 1e-7, "producer {j}: {} vs {a}", ne.dispatch.x[j]);
            }
        }
        for (x, p) in ne.dispatch.x.iter().zip(m.producers()) {
            prop_assert!(*x >= 0.0 && *x <= p.capacity);
        }
    }

    #[test]
    fn operator_reproduces_nash_supply(seed in 1000u64..100_000) {
        let m = common::random_market(seed);
        let ne = nash_equilibrium(&m).unwrap();
        let iso = reported_dispatch(&m, &ne.bids).unwrap();
        // Supply is unique only up to ties among free nodes, so compare costs.
        let gap = (iso.objective_value - ne.dispatch.objective_value).abs();
        prop_assert!(gap <= 1e-7 * (1.0 + iso.objective_value.abs()), "objective gap {gap}");
    }

    #[test]
    fn competitive_outcome_is_efficient_and_verified(seed in 1000u64..100_000) {
        let m = common::random_market(seed);
        let ce = competitive_equilibrium(&m).unwrap();
        let eff = efficient_dispatch(&m).unwrap();
        prop_assert!(ce.verified, "notes {:?}", ce.notes);
        let gap = (common::production_cost(&m, &ce.dispatch.x) - eff.production_cost(&m)).abs();
        prop_assert!(gap <= 1e-7);
    }

    #[test]
    fn unconstrained_split_ignores_line_capacity(c in 0.0..2.0f64, beta2 in 1.01..2.0f64) {
        let base = TwoNodeScenario::new([1.0, 1.0], [3, 10], [1.02, 1.02], [1.0, beta2], 0.0).unwrap();
        let s = base.with_capacity(c).unwrap();
        prop_assert_eq!(unconstrained_supply(&base), unconstrained_supply(&s));
        let e = two_node_nash(&s);
        prop_assert!(e.q[0] >= 0.0 && e.q[1] >= 0.0);
        prop_assert!(e.cost_ne >= e.cost_eff - 1e-12);
    }
}
