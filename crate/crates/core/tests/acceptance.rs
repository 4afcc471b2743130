//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfgame::cost::ModifiedCost;
use sfgame::dispatch::efficient_dispatch;
use sfgame::engine::{dual_bisection, NodeTerm};
use sfgame::equilibrium::{
    competitive_equilibrium, g_oracle, nash_equilibrium, no_pivotal_limit, unbounded_poa_instance, verify_nash,
    EquilibriumOutcome,
};
use sfgame::indices::{
    envelope_check, lerner_at, lerner_bound, market_share, poa_bound, price_of_anarchy, rsi, EnvelopeRecord,
};
use sfgame::two_node::{capacity_sweep, two_node_nash, TwoNodeScenario};
use sfgame::{CostSpec, LineSpec, Market, NetworkModel, Producer, QuadraticPiece};

const INSTANCES: u64 = 50;

type Outcome = Result<String, String>;

fn check(cond: bool, fail: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(fail())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn two_node_market(beta2: f64) -> TwoNodeScenario {
    TwoNodeScenario::new([1.0, 1.0], [3, 10], [1.02, 1.02], [1.0, beta2], 0.0).unwrap()
}

fn grid() -> Vec<f64> {
    (0..=80).map(|k| k as f64 * 0.01).collect()
}

fn sweep_low_gap() -> Outcome {
    let start = Instant::now();
    let sweep = capacity_sweep(&two_node_market(1.15), &grid()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let rows = &sweep.rows;
    for w in rows.windows(2) {
        if w[1].c <= 0.30 + 1e-9 {
            check(w[1].cost_ne > w[0].cost_ne, || format!("cost not increasing at c = {}", w[1].c))?;
        }
    }
    let flat: Vec<f64> = rows.iter().filter(|r| r.c >= 0.32 - 1e-9).map(|r| r.cost_ne).collect();
    let spread = flat.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - flat.iter().cloned().fold(f64::INFINITY, f64::min);
    check(spread <= 1e-6, || format!("cost varies by {spread} for c >= 0.32"))?;
    for w in rows.windows(2) {
        let rising = w[1].cost_ne > w[0].cost_ne;
        check(rising == (w[0].p1 > w[0].p2), || format!("price order and cost slope disagree at c = {}", w[0].c))?;
    }
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("switch point {:.6}, {:?}", sweep.switch_point.unwrap_or(f64::NAN), elapsed))
}

fn sweep_high_gap() -> Outcome {
    let start = Instant::now();
    let sweep = capacity_sweep(&two_node_market(1.45), &grid()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = sweep.rows.windows(2).map(|w| w[1].cost_ne - w[0].cost_ne).fold(f64::NEG_INFINITY, f64::max);
    check(worst <= 1e-8, || format!("cost rises by {worst}"))?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("largest step {worst:.3e}, {elapsed:?}"))
}

fn closed_form_prices() -> Outcome {
    let e = two_node_nash(&two_node_market(1.15));
    let general = nash_equilibrium(&common::braess_market(1.15, 0.0)).map_err(|e| e.to_string())?;
    for p in [e.p, [general.dispatch.p[0], general.dispatch.p[1]]] {
        check((p[0] - 1.320513).abs() <= 1e-5 && (p[1] - 1.164056).abs() <= 1e-5, || format!("prices {p:?}"))?;
    }
    Ok(format!("closed form ({:.7}, {:.7}), general ({:.7}, {:.7})", e.p[0], e.p[1], general.dispatch.p[0], general.dispatch.p[1]))
}

fn general_matches_closed_form() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let c = rng.gen_range(0.0..1.0);
        let beta2 = rng.gen_range(1.05..1.6);
        let s = two_node_market(beta2).with_capacity(c).unwrap();
        let exact = two_node_nash(&s);
        let market = s.to_market().unwrap();
        let ne = nash_equilibrium(&market).map_err(|e| format!("c = {c}, beta2 = {beta2}: {e}"))?;
        let cost = common::production_cost(&market, &ne.dispatch.x);
        let gaps = [
            (ne.dispatch.q[0] - exact.q[0]).abs(),
            (ne.dispatch.q[1] - exact.q[1]).abs(),
            (ne.dispatch.p[0] - exact.p[0]).abs(),
            (ne.dispatch.p[1] - exact.p[1]).abs(),
            (cost - exact.cost_ne).abs(),
        ];
        let gap = gaps.iter().cloned().fold(0.0, f64::max);
        check(gap <= 1e-5, || format!("c = {c}, beta2 = {beta2}: gaps {gaps:?}"))?;
        worst = worst.max(gap);
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("largest gap {worst:.3e}, {elapsed:?}"))
}

fn random_equilibria() -> Result<Vec<(Market, EquilibriumOutcome)>, String> {
    (0..INSTANCES)
        .map(|seed| {
            let m = common::random_market(seed);
            let ne = nash_equilibrium(&m).map_err(|e| format!("instance {seed}: {e}"))?;
            Ok((m, ne))
        })
        .collect()
}

fn epsilon_nash(cases: &[(Market, EquilibriumOutcome)], elapsed: Duration) -> Outcome {
    let mut worst: f64 = 0.0;
    for (seed, (m, ne)) in cases.iter().enumerate() {
        let check_ne = verify_nash(m, &ne.dispatch.q, &ne.bids, 1e-6).map_err(|e| e.to_string())?;
        check(check_ne.verified, || format!("instance {seed} not verified: {check_ne:?}"))?;
        worst = worst.max(check_ne.max_deviation_gain);
        let (j, &t) = ne.bids.as_slice().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let perturbed = ne.bids.with(j, 1.1 * t);
        let check_p = verify_nash(m, &ne.dispatch.q, &perturbed, 1e-6).map_err(|e| e.to_string())?;
        check(!check_p.verified, || format!("instance {seed}: perturbed profile still verifies"))?;
    }
    within(elapsed, Duration::from_secs(60))?;
    Ok(format!("{INSTANCES} instances, largest gain {worst:.3e}, {elapsed:?}"))
}

fn poa_within_bound(cases: &[(Market, EquilibriumOutcome)]) -> Outcome {
    let mut tightest: f64 = f64::INFINITY;
    for (seed, (m, ne)) in cases.iter().enumerate() {
        let eff = efficient_dispatch(m).map_err(|e| e.to_string())?;
        let poa = price_of_anarchy(common::production_cost(m, &ne.dispatch.x), eff.production_cost(m))
            .map_err(|e| e.to_string())?;
        let bound = poa_bound(m).map_err(|e| e.to_string())?;
        check(poa <= bound, || format!("instance {seed}: PoA {poa} above bound {bound}"))?;
        tightest = tightest.min(bound - poa);
    }
    for n in [3usize, 5, 10] {
        let d = 2.0;
        let net = NetworkModel::single_node(d).unwrap();
        let producers = (0..n).map(|_| Producer::linear(0, d, 1.0).unwrap()).collect();
        let bound = poa_bound(&Market::new(net, producers).unwrap()).map_err(|e| e.to_string())?;
        let expected = 1.0 + 1.0 / (n as f64 - 2.0);
        check((bound - expected).abs() <= 1e-12, || format!("N = {n}: bound {bound}, expected {expected}"))?;
    }
    Ok(format!("no violations, smallest slack {tightest:.3e}; symmetric forms exact"))
}

/// Node 1 holds one large cheap producer and two small expensive ones; the
/// line lets node 1 export at most 0.5, so the large producer's output is
/// capped by nodal supply rather than its capacity.
fn tightness_market() -> Market {
    let net = NetworkModel::from_lines(&[LineSpec::new(0, 1, 0.5)], vec![1.0, 1.0], 0).unwrap();
    let producers = vec![
        Producer::linear(0, 3.0, 1.0).unwrap(),
        Producer::linear(0, 1.0, 10.0).unwrap(),
        Producer::linear(0, 1.0, 10.0).unwrap(),
        Producer::linear(1, 2.0, 20.0).unwrap(),
        Producer::linear(1, 2.0, 20.0).unwrap(),
        Producer::linear(1, 2.0, 20.0).unwrap(),
    ];
    Market::new(net, producers).unwrap()
}

fn lerner_within_bound(cases: &[(Market, EquilibriumOutcome)]) -> Outcome {
    let mut checked = 0;
    for (seed, (m, ne)) in cases.iter().enumerate() {
        for (j, p) in m.producers().iter().enumerate() {
            if ne.dispatch.x[j] >= p.capacity - 1e-9 {
                continue;
            }
            let li = lerner_at(m, &ne.dispatch, j).map_err(|e| e.to_string())?;
            let ms = market_share(m, j).map_err(|e| e.to_string())?;
            let r = rsi(m, j).map_err(|e| e.to_string())?;
            let bound = lerner_bound(ms, r).map_err(|e| e.to_string())?;
            check(li <= bound + 1e-8, || format!("instance {seed}, producer {j}: LI {li} above {bound}"))?;
            checked += 1;
        }
    }
    let m = tightness_market();
    let ne = nash_equilibrium(&m).map_err(|e| e.to_string())?;
    let q_max = m.network().max_nodal_supply(0).map_err(|e| e.to_string())?;
    check((ne.dispatch.x[0] - q_max).abs() <= 1e-6 && ne.dispatch.x[0] < 3.0, || {
        format!("tight producer at {} with q_max {q_max}", ne.dispatch.x[0])
    })?;
    let li = lerner_at(&m, &ne.dispatch, 0).map_err(|e| e.to_string())?;
    let r = rsi(&m, 0).map_err(|e| e.to_string())?;
    check((li - 1.0 / r).abs() <= 1e-4, || format!("tight LI {li}, 1/RSI {}", 1.0 / r))?;
    Ok(format!("{checked} producers within bound; tight instance LI {li:.6} = 1/RSI {:.6}", 1.0 / r))
}

fn competitive_is_efficient() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let m = common::random_market(seed);
        let ce = competitive_equilibrium(&m).map_err(|e| format!("instance {seed}: {e}"))?;
        let eff = efficient_dispatch(&m).map_err(|e| e.to_string())?;
        let gap = ce.dispatch.x.iter().zip(&eff.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        check(gap <= 1e-6, || format!("instance {seed}: production differs by {gap}"))?;
        worst = worst.max(gap);
    }
    Ok(format!("largest difference {worst:.3e}"))
}

fn unbounded_poa() -> Outcome {
    for t in [0.9, 1.2, 1.4] {
        let ex = unbounded_poa_instance([2, 2], [1.5, 4.0], 2.0, t).map_err(|e| e.to_string())?;
        let c = verify_nash(&ex.market, &ex.q, &ex.bids, 1e-6).map_err(|e| e.to_string())?;
        check(c.verified, || format!("t = {t}: {c:?}"))?;
    }
    let ex = unbounded_poa_instance([2, 2], [1.5, 4.0], 2.0, 1.4999).map_err(|e| e.to_string())?;
    check(ex.poa_lower_bound > 10.0, || format!("bound {} at t = 1.4999", ex.poa_lower_bound))?;
    Ok(format!("profiles verified; PoA lower bound {:.1} at t = 1.4999", ex.poa_lower_bound))
}

fn random_node(rng: &mut ChaCha8Rng, kinked: bool) -> Vec<Producer> {
    let count = rng.gen_range(2..=6);
    (0..count)
        .map(|_| {
            let capacity = rng.gen_range(0.5..2.0);
            let beta = rng.gen_range(1.0..3.0);
            let cost = if kinked {
                let kink = rng.gen_range(0.2..0.8) * capacity;
                let alpha = rng.gen_range(0.0..0.5);
                // Marginal cost jumps up at the kink.
                let beta2 = beta + 2.0 * alpha * kink + rng.gen_range(0.5..2.0);
                CostSpec::piecewise(vec![
                    QuadraticPiece { start: 0.0, alpha, beta },
                    QuadraticPiece { start: kink, alpha: rng.gen_range(0.0..0.5), beta: beta2 },
                ])
                .unwrap()
            } else if rng.gen_bool(0.5) {
                CostSpec::linear(beta).unwrap()
            } else {
                CostSpec::quadratic(rng.gen_range(0.1..1.0), beta).unwrap()
            };
            Producer::new(0, capacity, cost)
        })
        .collect()
}

fn nodal_oracle_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for node in 0..10 {
        let producers = random_node(&mut rng, node % 2 == 1);
        let members: Vec<&Producer> = producers.iter().collect();
        let limit = no_pivotal_limit(&members);
        let mut prev = f64::NEG_INFINITY;
        for k in 1..100 {
            let z = limit * k as f64 / 100.0;
            let g = g_oracle(&members, z).map_err(|e| e.to_string())?.g;
            check(g > prev, || format!("node {node}: g not increasing at z = {z}"))?;
            prev = g;
        }
    }
    let mut worst: f64 = 0.0;
    for node in 0..10 {
        let producers = random_node(&mut rng, true);
        let total: f64 = producers.iter().map(|p| p.capacity).sum();
        let limit = total - producers.iter().map(|p| p.capacity).fold(0.0, f64::max);
        for k in 1..20 {
            let z = limit * k as f64 / 20.0;
            let costs: Vec<ModifiedCost> = producers
                .iter()
                .map(|p| ModifiedCost::new(&p.cost, total - p.capacity - z).unwrap())
                .collect();
            let terms: Vec<NodeTerm> =
                costs.iter().zip(&producers).map(|(c, p)| NodeTerm { func: c, cap: p.capacity }).collect();
            let r = dual_bisection(&terms, z).map_err(|e| e.to_string())?;
            let mut lo: f64 = 0.0;
            let mut hi = f64::INFINITY;
            for ((p, &x), c) in producers.iter().zip(&r.allocation).zip(&costs) {
                let m = p.cost.modified(x, c.residual).map_err(|e| e.to_string())?;
                if x > 0.0 {
                    lo = lo.max(m.left_derivative);
                }
                if x < p.capacity {
                    hi = hi.min(m.right_derivative);
                }
            }
            let gap_lo = (r.lambda_lo - lo).abs();
            let gap_hi = if hi.is_finite() { (r.lambda_hi - hi).abs() } else { 0.0 };
            check(gap_lo <= 1e-9 && gap_hi <= 1e-9 && lo <= hi + 1e-9, || {
                format!("node {node}, z = {z}: interval [{}, {}] vs [{lo}, {hi}]", r.lambda_lo, r.lambda_hi)
            })?;
            worst = worst.max(gap_lo).max(gap_hi);
        }
    }
    Ok(format!("g increasing on 10 nodes; interval gap {worst:.3e} on kinked nodes"))
}

fn envelope() -> Outcome {
    let records: Vec<EnvelopeRecord> = [(1.2, 50.0), (1.5, 20.0), (2.0, 16.0)]
        .iter()
        .map(|&(rsi, price)| EnvelopeRecord { rsi, price, mc: None, ms: None })
        .collect();
    let rows = envelope_check(&records);
    let bounds: Vec<f64> = rows.iter().map(|r| r.bound.unwrap_or(f64::NAN)).collect();
    for (b, e) in bounds.iter().zip([48.0, 24.0, 16.0]) {
        check((b - e).abs() <= 1e-9, || format!("bounds {bounds:?}"))?;
    }
    let flags: Vec<bool> = rows.iter().map(|r| r.flagged).collect();
    check(flags == [true, false, false], || format!("flags {flags:?}"))?;
    Ok(format!("bounds {bounds:?}, flags {flags:?}"))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "two-node sweep, beta2 = 1.15", sweep_low_gap()));
    results.push((2, "two-node sweep, beta2 = 1.45", sweep_high_gap()));
    results.push((3, "closed-form prices at c = 0", closed_form_prices()));
    results.push((4, "general solver vs closed form", general_matches_closed_form()));

    let start = Instant::now();
    let cases = random_equilibria();
    let elapsed = start.elapsed();
    match &cases {
        Ok(cases) => {
            let verify_start = Instant::now();
            let r5 = epsilon_nash(cases, elapsed);
            let total = elapsed + verify_start.elapsed();
            results.push((5, "epsilon-Nash verification", r5.and_then(|m| {
                within(total, Duration::from_secs(60))?;
                Ok(m)
            })));
            results.push((6, "price of anarchy bound", poa_within_bound(cases)));
            results.push((7, "Lerner index bound", lerner_within_bound(cases)));
        }
        Err(e) => {
            for (k, name) in [(5, "epsilon-Nash verification"), (6, "price of anarchy bound"), (7, "Lerner index bound")] {
                results.push((k, name, Err(e.clone())));
            }
        }
    }
    results.push((8, "competitive equilibrium is efficient", competitive_is_efficient()));
    results.push((9, "unbounded price of anarchy", unbounded_poa()));
    results.push((10, "nodal oracle properties", nodal_oracle_properties()));
    results.push((11, "envelope bounds and flags", envelope()));

    let mut failed = 0;
    for (k, name, r) in &results {
        match r {
            Ok(msg) => println!("criterion {k:>2} PASS  {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {k:>2} FAIL  {name}: {msg}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
