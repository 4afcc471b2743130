//! Seeded random markets shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfgame::{CostSpec, LineSpec, Market, NetworkModel, Producer};

/// A connected network of 2 to 5 nodes with 2 to 6 producers per node and
/// mixed linear and quadratic costs. Every producer's rivals at its node
/// hold more than total demand, so no producer is pivotal.
pub fn random_market(seed: u64) -> Market {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=5);
    let demand: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..1.5)).collect();
    let total: f64 = demand.iter().sum();

    let mut lines = Vec::new();
    for i in 1..n {
        let to = rng.gen_range(0..i);
        lines.push(LineSpec::new(i, to, rng.gen_range(0.1..0.6) * total).with_reactance(rng.gen_range(0.5..2.0)));
    }
    if n >= 3 && rng.gen_bool(0.5) {
        lines.push(LineSpec::new(0, n - 1, rng.gen_range(0.1..0.6) * total).with_reactance(rng.gen_range(0.5..2.0)));
    }
    let net = NetworkModel::from_lines(&lines, demand, 0).unwrap();

    let mut producers = Vec::new();
    for i in 0..n {
        let count = rng.gen_range(2..=6);
        let base = total / (count as f64 - 1.0);
        for _ in 0..count {
            let capacity = base * rng.gen_range(1.1..1.6);
            let beta = rng.gen_range(1.0..3.0);
            let cost = if rng.gen_bool(0.5) {
                CostSpec::linear(beta).unwrap()
            } else {
                CostSpec::quadratic(rng.gen_range(0.1..1.0), beta).unwrap()
            };
            producers.push(Producer::new(i, capacity, cost));
        }
    }
    Market::new(net, producers).unwrap()
}

/// The two-node market with three and ten producers of capacity 1.02 and
/// unit demand at each node.
pub fn braess_market(beta2: f64, c: f64) -> Market {
    sfgame::two_node::TwoNodeScenario::new([1.0, 1.0], [3, 10], [1.02, 1.02], [1.0, beta2], c)
        .unwrap()
        .to_market()
        .unwrap()
}

/// Total true production cost of an allocation.
pub fn production_cost(market: &Market, x: &[f64]) -> f64 {
    market.producers().iter().zip(x).map(|(p, &v)| p.cost.value(v)).sum()
}
