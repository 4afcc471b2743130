//! Competitive and Nash equilibria of the supply-function game, payoffs,
//! best responses and equilibrium verification.
//!
//! The Nash equilibrium is built from two convex programs: nodal supply
//! minimizes the sum of modified nodal costs, whose derivative at `z` is the
//! smallest multiplier `g_i(z)` supporting the node-local allocation of `z`
//! under modified costs; production then minimizes the modified costs over
//! the network with the nodal supply fixed implicitly. Prices come from the
//! duals of the second program and bids follow as `θ_j = p_i (X_j − x_j)`.

use std::cell::RefCell;

use serde::Serialize;

use crate::cost::{BidProfile, CostSpec, ModifiedCost, Producer};
use crate::dispatch::{efficient_dispatch, local_allocation, nodal_price, reported_dispatch, DispatchOutcome, ReportedNodeCost};
use crate::engine::{
    dual_bisection_tol, solve_polytope, Coordinate, Linear, NodeTerm, ScalarConvex, SeparableObjective,
    SolveResult, SolveStatus,
};
use crate::error::{Error, Result};
use crate::indices::max_supplies;
use crate::market::Market;
use crate::network::NetworkModel;

/// Default tolerance on payoff gains and on the ISO objective.
pub const NASH_EPS: f64 = 1e-6;

/// Default tolerance on membership of the ISO strategy set.
const SNAP_TOL: f64 = 1e-9;

pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Tolerances used when verifying equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Largest admissible payoff gain and ISO objective gap.
    pub eps_nash: f64,
    /// Slack allowed on network and capacity constraints.
    pub tol_feas: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { eps_nash: NASH_EPS, tol_feas: FEASIBILITY_TOL }
    }
}

/// Multiplier bracket used inside the nodal oracle.
const ORACLE_REL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    Competitive,
    Nash,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumOutcome {
    pub kind: EquilibriumKind,
    pub dispatch: DispatchOutcome,
    pub bids: BidProfile,
    pub payoffs: Vec<f64>,
    pub iso_payoff: f64,
    pub verified: bool,
    pub max_deviation_gain: f64,
    pub iso_optimal: bool,
    /// Per node, the interval of prices consistent with the allocation.
    pub price_intervals: Vec<(f64, f64)>,
    pub notes: Vec<String>,
}

/// `π_j = p x_j − C_j(x_j)`.
pub fn producer_payoff(price: f64, x: f64, cost: &CostSpec) -> f64 {
    price * x - cost.value(x)
}

/// Payoffs of every producer at a dispatch outcome.
pub fn payoffs(market: &Market, outcome: &DispatchOutcome) -> Vec<f64> {
    market
        .producers()
        .iter()
        .zip(&outcome.x)
        .map(|(p, &x)| producer_payoff(outcome.p[p.node], x, &p.cost))
        .collect()
}

fn node_data(market: &Market, bids: &[f64], i: usize) -> (Vec<f64>, Vec<f64>) {
    market.at_node(i).iter().map(|&j| (market.producers()[j].capacity, bids[j])).unzip()
}

/// `Σ_i G_i(q_i; θ)`; infinite outside the reported capacity.
pub fn reported_objective(market: &Market, q: &[f64], bids: &BidProfile) -> f64 {
    (0..market.node_count())
        .filter(|&i| !market.at_node(i).is_empty())
        .map(|i| {
            let (caps, thetas) = node_data(market, bids.as_slice(), i);
            if thetas.iter().sum::<f64>() > 0.0 {
                ReportedNodeCost::new(&caps, &thetas).value(q[i])
            } else {
                0.0
            }
        })
        .sum()
}

/// Result of [`g_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub struct GOracle {
    pub allocation: Vec<f64>,
    /// `g_i(z)`, the largest left derivative of the modified costs.
    pub g: f64,
    /// Smallest right derivative; with `g` it brackets the supporting multipliers.
    pub lambda_hi: f64,
}

fn modified_costs<'a>(producers: &[&'a Producer], z: f64) -> Result<Vec<ModifiedCost<'a>>> {
    let total: f64 = producers.iter().map(|p| p.capacity).sum();
    producers.iter().map(|p| ModifiedCost::new(&p.cost, total - p.capacity - z)).collect()
}

/// `Σ X − max X`: nodal supply beyond which some producer becomes pivotal.
pub fn no_pivotal_limit(producers: &[&Producer]) -> f64 {
    let total: f64 = producers.iter().map(|p| p.capacity).sum();
    let largest = producers.iter().map(|p| p.capacity).fold(0.0, f64::max);
    total - largest
}

/// Allocates `z` among one node's producers under their modified costs at
/// nodal supply `z` and returns `g_i(z)`.
pub fn g_oracle(producers: &[&Producer], z: f64) -> Result<GOracle> {
    if z >= no_pivotal_limit(producers) {
        return Err(Error::BeyondNoPivotalRange);
    }
    if !(z >= 0.0) {
        return Err(Error::Shape(format!("negative nodal supply {z}")));
    }
    let costs = modified_costs(producers, z)?;
    let terms: Vec<NodeTerm> =
        costs.iter().zip(producers).map(|(c, p)| NodeTerm { func: c, cap: p.capacity }).collect();
    let r = dual_bisection_tol(&terms, z, ORACLE_REL_TOL)?;
    Ok(GOracle { allocation: r.allocation, g: r.lambda_lo, lambda_hi: r.lambda_hi })
}

/// `dg/dz` where the producers with interior allocations move smoothly.
fn g_slope(producers: &[&Producer], z: f64, alloc: &[f64]) -> f64 {
    let total: f64 = producers.iter().map(|p| p.capacity).sum();
    let mut inv_a = 0.0;
    let mut b_over_a = 0.0;
    for (p, &x) in producers.iter().zip(alloc) {
        let tol = 1e-12 * p.capacity;
        if x <= tol || x >= p.capacity - tol {
            continue;
        }
        let (l, r) = p.cost.derivatives(x);
        if l != r {
            continue;
        }
        let residual = total - p.capacity - z;
        let a = p.cost.modified_second(x, residual);
        if !(a > 0.0) {
            continue;
        }
        let b = r * x / (residual * residual);
        inv_a += 1.0 / a;
        b_over_a += b / a;
    }
    if inv_a > 0.0 {
        (1.0 + b_over_a) / inv_a
    } else {
        0.0
    }
}

// Five-point Gauss–Legendre rule on [-1, 1].
const GL_NODES: [f64; 5] = [0.0, -0.538_469_310_105_683, 0.538_469_310_105_683, -0.906_179_845_938_664, 0.906_179_845_938_664];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
    0.236_926_885_056_189,
];

/// Modified nodal cost `G̃_i` on `[start, end]`, shifted so that the solver
/// variable `w` stands for supply `start + w` and the cost is zero at `w = 0`.
/// A node is split into consecutive segments at kinks of `G̃_i`; since `g_i`
/// is increasing, the segments fill in order and their sum is the supply.
struct ModifiedNodeCost<'a> {
    producers: &'a [&'a Producer],
    limit: f64,
    start: f64,
    cache: RefCell<Option<(f64, GOracle)>>,
}

impl<'a> ModifiedNodeCost<'a> {
    fn new(producers: &'a [&'a Producer], start: f64) -> Self {
        let limit = no_pivotal_limit(producers);
        ModifiedNodeCost { producers, limit, start, cache: RefCell::new(None) }
    }

    fn oracle(&self, z: f64) -> Option<GOracle> {
        if let Some((at, o)) = self.cache.borrow().as_ref() {
            if *at == z {
                return Some(o.clone());
            }
        }
        let o = g_oracle(self.producers, z).ok()?;
        *self.cache.borrow_mut() = Some((z, o.clone()));
        Some(o)
    }
}

impl ScalarConvex for ModifiedNodeCost<'_> {
    /// `∫ g` over `[start, start + w]`, by composite quadrature.
    fn value(&self, w: f64) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        if self.start + w >= self.limit {
            return f64::INFINITY;
        }
        let panels = 16;
        let h = w / panels as f64;
        let mut total = 0.0;
        for k in 0..panels {
            let mid = self.start + (k as f64 + 0.5) * h;
            for (t, wt) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let g = self.oracle(mid + 0.5 * h * t).map_or(f64::INFINITY, |o| o.g);
                total += 0.5 * h * wt * g;
            }
        }
        total
    }

    fn derivatives(&self, w: f64) -> (f64, f64) {
        let z = self.start + w.max(0.0);
        if z >= self.limit {
            return (f64::INFINITY, f64::INFINITY);
        }
        if z <= 0.0 {
            let right = self.producers.iter().map(|p| p.cost.derivatives(0.0).1).fold(f64::INFINITY, f64::min);
            return (0.0, right);
        }
        match self.oracle(z) {
            Some(o) if w <= 0.0 => (0.0, o.lambda_hi.max(o.g)),
            Some(o) => (o.g, o.lambda_hi.max(o.g)),
            None => (f64::INFINITY, f64::INFINITY),
        }
    }

    fn second_derivative(&self, w: f64) -> f64 {
        let z = self.start + w;
        if w <= 0.0 || z >= self.limit {
            return 0.0;
        }
        match self.oracle(z) {
            Some(o) => g_slope(self.producers, z, &o.allocation),
            None => 0.0,
        }
    }
}

const KINK_SNAP: f64 = 1e-6;
const KINK_ROUNDS: usize = 8;

/// Supply near `z` at which every producer sits at zero, capacity or a cost
/// breakpoint and `g_i` jumps, if the allocation at `z` is close to such a
/// corner.
fn nearby_kink(producers: &[&Producer], z: f64) -> Option<f64> {
    let o = g_oracle(producers, z).ok()?;
    let mut corner = 0.0;
    for (p, &x) in producers.iter().zip(&o.allocation) {
        let tol = KINK_SNAP * p.capacity.max(1.0);
        let mut marks = p.cost.breakpoints(p.capacity);
        marks.push(0.0);
        marks.push(p.capacity);
        let c = marks.into_iter().min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))?;
        if (c - x).abs() > tol {
            return None;
        }
        corner += c;
    }
    let at = g_oracle(producers, corner).ok()?;
    let jump = at.lambda_hi - at.g;
    (corner > 0.0 && jump > 1e-9 * (1.0 + at.g.abs())).then_some(corner)
}

/// Minimizes `Σ_i G̃_i(q_i)` over the network, splitting nodes at kinks of
/// `G̃_i` whenever the interior-point solve stalls on one.
fn solve_modified_supply(market: &Market) -> Result<(SolveResult, Vec<Vec<f64>>)> {
    let net = market.network();
    let members: Vec<Vec<&Producer>> = (0..market.node_count())
        .map(|i| market.at_node(i).iter().map(|&j| &market.producers()[j]).collect())
        .collect();
    let mut cuts: Vec<Vec<f64>> = vec![Vec::new(); market.node_count()];
    let mut round = 0;
    loop {
        let mut obj = SeparableObjective::new();
        for (i, m) in members.iter().enumerate() {
            if m.is_empty() {
                continue;
            }
            let limit = no_pivotal_limit(m);
            let mut edges = vec![0.0];
            edges.extend(&cuts[i]);
            edges.push(limit);
            for w in edges.windows(2) {
                obj.push(Coordinate::new(i, 0.0, w[1] - w[0], ModifiedNodeCost::new(m, w[0])));
            }
        }
        let sol = solve_polytope(&obj, net).map_err(not_infeasible)?;
        round += 1;
        if sol.status == SolveStatus::Optimal || round > KINK_ROUNDS {
            return Ok((sol, cuts));
        }
        let mut split = false;
        for (i, m) in members.iter().enumerate() {
            if m.is_empty() || sol.supply[i] <= 0.0 {
                continue;
            }
            if let Some(k) = nearby_kink(m, sol.supply[i]) {
                if !cuts[i].iter().any(|&c| (c - k).abs() <= 1e-12 * (1.0 + k)) {
                    cuts[i].push(k);
                    cuts[i].sort_by(f64::total_cmp);
                    split = true;
                }
            }
        }
        if !split {
            return Ok((sol, cuts));
        }
    }
}

fn refuse(producer: usize, reason: String) -> Error {
    Error::PivotalSupplier { producer, reason }
}

/// Refuses markets with a pivotal supplier or a node served by one producer.
pub fn check_no_pivotal_supplier(market: &Market) -> Result<Vec<f64>> {
    let q_max = max_supplies(market)?;
    for i in 0..market.node_count() {
        if let [only] = market.at_node(i) {
            return Err(refuse(*only, format!("sole producer at node {i}")));
        }
    }
    for (j, p) in market.producers().iter().enumerate() {
        let rival = market.rival_capacity(j);
        let q = q_max[p.node];
        if !(rival > q) {
            return Err(refuse(j, format!("RSI = {:.6} <= 1 at node {}", rival / q, p.node)));
        }
    }
    Ok(q_max)
}

fn combine(a: SolveStatus, b: SolveStatus) -> SolveStatus {
    if a == SolveStatus::Optimal {
        b
    } else {
        a
    }
}

fn not_infeasible(e: Error) -> Error {
    match e {
        Error::Infeasible => Error::DemandCannotBeMet,
        other => other,
    }
}

/// Minimizes the modified costs at fixed nodal supply `q` over the network.
pub fn modified_dispatch(market: &Market, q: &[f64]) -> Result<SolveResult> {
    let mut obj = SeparableObjective::new();
    for (j, p) in market.producers().iter().enumerate() {
        let residual = market.rival_capacity(j) - q[p.node];
        obj.push(Coordinate::new(p.node, 0.0, p.capacity, ModifiedCost::new(&p.cost, residual)?));
    }
    solve_polytope(&obj, market.network()).map_err(not_infeasible)
}

fn node_totals(market: &Market, x: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; market.node_count()];
    for (p, &v) in market.producers().iter().zip(x) {
        q[p.node] += v.clamp(0.0, p.capacity);
    }
    q
}

/// Price bracket at node `i` implied by the modified costs at allocation `x`:
/// the left derivatives of producing units from below, the right
/// derivatives of producers with spare capacity from above.
fn price_interval(market: &Market, i: usize, x: &[f64], q_i: f64) -> (f64, f64) {
    let mut lo: f64 = 0.0;
    let mut hi = f64::INFINITY;
    for &j in market.at_node(i) {
        let p = &market.producers()[j];
        let m = p.cost.modified_unchecked(x[j], market.rival_capacity(j) - q_i);
        if x[j] > 0.0 {
            lo = lo.max(m.left_derivative);
        }
        if x[j] < p.capacity {
            hi = hi.min(m.right_derivative);
        }
    }
    (lo, hi)
}

fn trivial_outcome(market: &Market, kind: EquilibriumKind, note: &str) -> EquilibriumOutcome {
    let n = market.node_count();
    let dispatch = DispatchOutcome::trivial(market);
    EquilibriumOutcome {
        kind,
        payoffs: vec![0.0; market.producer_count()],
        dispatch,
        bids: BidProfile::zeros(market.producer_count()),
        iso_payoff: 0.0,
        verified: false,
        max_deviation_gain: 0.0,
        iso_optimal: true,
        price_intervals: vec![(0.0, 0.0); n],
        notes: vec![note.to_string()],
    }
}

/// Computes the Nash equilibrium and verifies it with tolerance [`NASH_EPS`].
pub fn nash_equilibrium(market: &Market) -> Result<EquilibriumOutcome> {
    nash_equilibrium_with(market, &Tolerances::default())
}

pub fn nash_equilibrium_with(market: &Market, tol: &Tolerances) -> Result<EquilibriumOutcome> {
    let net = market.network();
    if net.total_demand() == 0.0 {
        let mut out = trivial_outcome(market, EquilibriumKind::Nash, "zero demand");
        let check = verify_nash_with(market, &out.dispatch.q, &out.bids, tol)?;
        out.verified = check.verified;
        out.max_deviation_gain = check.max_deviation_gain;
        out.iso_optimal = check.iso_optimal;
        return Ok(out);
    }
    check_no_pivotal_supplier(market)?;
    let n = market.node_count();

    // Nodal supply.
    let (supply, cuts) = solve_modified_supply(market)?;
    let q = supply.supply.clone();

    // Production. The smooth case re-solves the dispatch over modified
    // costs for its multipliers; either way each node's split comes from the
    // oracle, which is far more accurate than interior-point output near
    // capacity bounds.
    let smooth = market.producers().iter().all(|p| p.cost.is_smooth());
    let (duals, mut q_final) = if smooth {
        let sol = modified_dispatch(market, &q)?;
        let q_final = node_totals(market, &sol.minimizer);
        (sol, q_final)
    } else {
        (supply.clone(), q.clone())
    };
    // Supply the solver leaves a hair away from zero or from a kink of the
    // nodal cost belongs at that point; a few units of rounding past it
    // would pin the price to one end of the kink's price interval.
    for (i, v) in q_final.iter_mut().enumerate() {
        let scale: f64 = market.at_node(i).iter().map(|&j| market.producers()[j].capacity).sum();
        let tol = SNAP_TOL * scale.max(1.0);
        if let Some(&c) = std::iter::once(&0.0).chain(&cuts[i]).find(|&&c| (*v - c).abs() <= tol) {
            *v = c;
        }
    }
    let mut x = vec![0.0; market.producer_count()];
    for i in 0..n {
        let members: Vec<&Producer> = market.at_node(i).iter().map(|&j| &market.producers()[j]).collect();
        if members.is_empty() {
            continue;
        }
        let o = g_oracle(&members, q_final[i])?;
        for (&j, v) in market.at_node(i).iter().zip(o.allocation) {
            x[j] = v;
        }
    }

    // Prices and bids.
    let dual_prices = duals.prices(net);
    let mut prices = vec![0.0; n];
    let mut intervals = vec![(0.0, 0.0); n];
    for i in 0..n {
        if market.at_node(i).is_empty() {
            continue;
        }
        let (lo, hi) = price_interval(market, i, &x, q_final[i]);
        intervals[i] = (lo, hi);
        prices[i] = if lo <= hi { dual_prices[i].clamp(lo, hi) } else { 0.5 * (lo + hi) };
    }
    let theta: Vec<f64> =
        market.producers().iter().zip(&x).map(|(p, &v)| (prices[p.node] * (p.capacity - v)).max(0.0)).collect();
    let bids = BidProfile::new(theta)?;

    let mut notes = Vec::new();
    let status = combine(supply.status, duals.status);
    if status != SolveStatus::Optimal {
        notes.push("solver stopped before meeting the KKT tolerances".to_string());
    }
    let dispatch = DispatchOutcome {
        objective_value: reported_objective(market, &q_final, &bids),
        negative_production: false,
        x,
        q: q_final,
        p: prices,
        lambda: duals.lambda,
        mu: duals.mu.clone(),
        status,
        residuals: duals.residuals,
    };
    let check = verify_nash_with(market, &dispatch.q, &bids, tol)?;
    Ok(EquilibriumOutcome {
        kind: EquilibriumKind::Nash,
        payoffs: payoffs(market, &dispatch),
        iso_payoff: -dispatch.objective_value,
        dispatch,
        bids,
        verified: check.verified,
        max_deviation_gain: check.max_deviation_gain,
        iso_optimal: check.iso_optimal,
        price_intervals: intervals,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BestResponse {
    pub theta: f64,
    pub payoff: f64,
    pub current_payoff: f64,
    /// `payoff − current_payoff`, never negative.
    pub gain: f64,
}

/// Payoff of producer `j` at nodal supply `q` under bids `theta`.
pub fn payoff_at(market: &Market, q: &[f64], theta: &[f64], j: usize) -> Result<f64> {
    let i = market.producers()[j].node;
    let (caps, thetas) = node_data(market, theta, i);
    let alloc = local_allocation(&caps, &thetas, q[i])?;
    let price = nodal_price(&caps, &thetas, q[i])?;
    let k = market.at_node(i).iter().position(|&m| m == j).expect("producer listed at its node");
    Ok(producer_payoff(price, alloc[k], &market.producers()[j].cost))
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Maximizes a unimodal function on `[a, b]`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Highest bid considered by the best-response search: `10³` times the
/// largest marginal cost in the market, times the producer's capacity.
fn theta_cap(market: &Market, j: usize) -> f64 {
    let p_max = market
        .producers()
        .iter()
        .map(|p| p.cost.derivatives(p.capacity).0)
        .fold(1.0, f64::max)
        * 1e3;
    p_max * market.producers()[j].capacity
}

/// Best bid of producer `j` against `θ_{−j}` with nodal supply held at `q`.
///
/// In terms of its own output the producer maximizes
/// `Θ x/(x + R) − C(x)`, with `Θ` the rivals' total bid and `R` their
/// capacity less `q_i`; this is concave, so a golden-section search is exact.
pub fn best_response(market: &Market, q: &[f64], bids: &BidProfile, j: usize) -> Result<BestResponse> {
    if j >= market.producer_count() {
        return Err(Error::Shape(format!("producer {j} out of range")));
    }
    if bids.len() != market.producer_count() || q.len() != market.node_count() {
        return Err(Error::Shape("bid or supply vector has the wrong length".into()));
    }
    let producer = &market.producers()[j];
    let i = producer.node;
    let cap = theta_cap(market, j);
    let theta = bids.as_slice();
    let eval = |t: f64| -> f64 {
        let mut v = theta.to_vec();
        v[j] = t;
        payoff_at(market, q, &v, j).unwrap_or(f64::NEG_INFINITY)
    };
    let current = eval(theta[j]);

    let rivals: f64 = market.at_node(i).iter().filter(|&&k| k != j).map(|&k| theta[k]).sum();
    let shortfall = market.node_capacity(i) - q[i];
    let mut candidates = vec![0.0, cap, theta[j]];
    if rivals > 0.0 && shortfall > 0.0 {
        let x_cap = producer.capacity;
        let residual = shortfall - x_cap;
        let x_lo = x_cap - cap * shortfall / (cap + rivals);
        let phi = |x: f64| rivals * x / (x + residual) - producer.cost.value(x);
        let x_best = golden_max(phi, x_lo, x_cap, 1e-13 * x_cap.max(1.0));
        let t = rivals * (x_cap - x_best) / (x_best + residual);
        candidates.push(t.clamp(0.0, cap));
    } else {
        // Without rival bids the price is set by this bid alone; the payoff
        // is monotone in θ away from the discontinuity at zero.
        candidates.push(1e-12 * cap);
    }
    let (best_theta, best) = candidates
        .into_iter()
        .map(|t| (t, eval(t)))
        .fold((theta[j], current), |acc, c| if c.1 > acc.1 { c } else { acc });
    Ok(BestResponse { theta: best_theta, payoff: best, current_payoff: current, gain: (best - current).max(0.0) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashCheck {
    pub verified: bool,
    pub max_deviation_gain: f64,
    pub iso_optimal: bool,
    pub gains: Vec<f64>,
    /// Reported cost at `q` minus the optimal reported cost.
    pub iso_gap: f64,
}

fn in_iso_strategy_set(market: &Market, q: &[f64], tol: f64) -> Result<bool> {
    let net = market.network();
    let y: Vec<f64> = q.iter().zip(net.demand()).map(|(a, b)| a - b).collect();
    if !net.injection_feasible(&y, tol)? {
        return Ok(false);
    }
    Ok((0..market.node_count()).all(|i| {
        if market.at_node(i).is_empty() {
            q[i].abs() <= tol
        } else {
            q[i] <= market.node_capacity(i) + tol
        }
    }))
}

/// Checks both equilibrium conditions: no producer gains more than `eps`
/// by changing its bid, and `q` minimizes the reported cost within `eps`.
pub fn verify_nash(market: &Market, q: &[f64], bids: &BidProfile, eps: f64) -> Result<NashCheck> {
    verify_nash_with(market, q, bids, &Tolerances { eps_nash: eps, ..Tolerances::default() })
}

pub fn verify_nash_with(market: &Market, q: &[f64], bids: &BidProfile, tol: &Tolerances) -> Result<NashCheck> {
    let eps = tol.eps_nash;
    if q.len() != market.node_count() || bids.len() != market.producer_count() {
        return Err(Error::Shape("bid or supply vector has the wrong length".into()));
    }
    let mut gains = Vec::with_capacity(market.producer_count());
    for j in 0..market.producer_count() {
        gains.push(best_response(market, q, bids, j)?.gain);
    }
    let max_deviation_gain = gains.iter().copied().fold(0.0, f64::max);
    let feasible = in_iso_strategy_set(market, q, tol.tol_feas)?;
    let at_q = reported_objective(market, q, bids);
    let iso_gap = match reported_dispatch(market, bids) {
        Ok(best) => at_q - best.objective_value,
        Err(_) => f64::INFINITY,
    };
    let iso_optimal = feasible && iso_gap <= eps;
    Ok(NashCheck { verified: iso_optimal && max_deviation_gain <= eps, max_deviation_gain, iso_optimal, gains, iso_gap })
}

/// True when some dispatch keeps every producer strictly inside its
/// capacity and every line strictly below its limit.
fn strictly_feasible(market: &Market) -> bool {
    let net = market.network();
    let delta = 1e-6;
    let shrunk: Vec<f64> = net.line_capacity().iter().map(|c| c - delta).collect();
    if shrunk.iter().any(|&c| c < 0.0) {
        return false;
    }
    let Ok(inner) = net.with_line_capacity(shrunk) else { return false };
    let mut obj = SeparableObjective::new();
    for p in market.producers() {
        obj.push(Coordinate::new(p.node, delta * p.capacity, (1.0 - delta) * p.capacity, Linear(0.0)));
    }
    solve_polytope(&obj, &inner).is_ok()
}

/// Largest payoff gain available to a price taker at its nodal price.
fn price_taking_gain(price: f64, x: f64, producer: &Producer) -> f64 {
    let profit = |v: f64| producer_payoff(price, v, &producer.cost);
    let best = golden_max(profit, 0.0, producer.capacity, 1e-13 * producer.capacity.max(1.0));
    let top = [0.0, producer.capacity, best].into_iter().map(profit).fold(f64::NEG_INFINITY, f64::max);
    (top - profit(x)).max(0.0)
}

/// Competitive equilibrium: efficient dispatch priced at its duals, with
/// bids `θ_j = p_i (X_j − x_j)` reproducing it through the supply functions.
pub fn competitive_equilibrium(market: &Market) -> Result<EquilibriumOutcome> {
    competitive_equilibrium_with(market, &Tolerances::default())
}

pub fn competitive_equilibrium_with(market: &Market, tol: &Tolerances) -> Result<EquilibriumOutcome> {
    let eps = tol.eps_nash;
    let net = market.network();
    if net.total_demand() == 0.0 {
        return Ok(trivial_outcome(market, EquilibriumKind::Competitive, "zero demand"));
    }
    let mut dispatch = efficient_dispatch(market)?;
    let mut notes = Vec::new();
    if !strictly_feasible(market) {
        notes.push("dispatch is not strictly feasible; prices may not be unique".to_string());
    }
    for (v, p) in dispatch.x.iter_mut().zip(market.producers()) {
        *v = v.clamp(0.0, p.capacity);
    }
    for i in 0..market.node_count() {
        if market.at_node(i).is_empty() {
            dispatch.p[i] = dispatch.p[i].max(0.0);
        }
    }
    let theta: Vec<f64> = market
        .producers()
        .iter()
        .zip(&dispatch.x)
        .map(|(p, &v)| (dispatch.p[p.node].max(0.0) * (p.capacity - v)).max(0.0))
        .collect();
    let bids = BidProfile::new(theta)?;

    let positive = (0..market.node_count()).filter(|&i| !market.at_node(i).is_empty()).all(|i| dispatch.p[i] > 0.0);
    if !positive {
        notes.push("nonpositive nodal price".to_string());
    }
    let gains: Vec<f64> = market
        .producers()
        .iter()
        .zip(&dispatch.x)
        .map(|(p, &v)| price_taking_gain(dispatch.p[p.node], v, p))
        .collect();
    let max_deviation_gain = gains.iter().copied().fold(0.0, f64::max);
    let clears = (0..market.node_count()).all(|i| {
        let members = market.at_node(i);
        if members.is_empty() || dispatch.p[i] <= 0.0 {
            return true;
        }
        let supplied: f64 = members
            .iter()
            .map(|&j| market.producers()[j].supply(bids[j], dispatch.p[i]).unwrap_or(f64::NAN))
            .sum();
        (supplied - dispatch.q[i]).abs() <= tol.tol_feas * (1.0 + dispatch.q[i].abs())
    });
    let at_q = reported_objective(market, &dispatch.q, &bids);
    let iso_optimal = match reported_dispatch(market, &bids) {
        Ok(best) => at_q - best.objective_value <= eps,
        Err(_) => false,
    };
    dispatch.objective_value = dispatch.production_cost(market);
    let intervals = dispatch.p.iter().map(|&p| (p, p)).collect();
    Ok(EquilibriumOutcome {
        kind: EquilibriumKind::Competitive,
        payoffs: payoffs(market, &dispatch),
        iso_payoff: -at_q,
        dispatch,
        bids,
        verified: positive && clears && iso_optimal && max_deviation_gain <= eps,
        max_deviation_gain,
        iso_optimal,
        price_intervals: intervals,
        notes,
    })
}

/// A two-node market violating the no-pivotal-supplier condition whose
/// equilibrium cost is arbitrarily worse than efficient, with its
/// equilibrium in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct PoaExample {
    pub market: Market,
    pub q: Vec<f64>,
    pub bids: BidProfile,
    pub x: Vec<f64>,
    /// Common nodal price at the equilibrium.
    pub price: f64,
    /// Marginal cost at node 2 (node 1 has marginal cost 1).
    pub beta: f64,
    pub efficient_cost: f64,
    pub equilibrium_cost: f64,
    pub poa_lower_bound: f64,
}

fn markup_factor(t: f64, n: usize, k: f64) -> f64 {
    1.0 + (t / n as f64) / ((n as f64 - 1.0) * k - t)
}

/// Builds the unbounded price-of-anarchy instance with node sizes `n`,
/// per-producer capacities `k`, total demand `d` and node-1 supply `t`.
pub fn unbounded_poa_instance(n: [usize; 2], k: [f64; 2], d: f64, t: f64) -> Result<PoaExample> {
    let fail = |m: String| Err(Error::OutsideUnboundedRegime(m));
    if n[0] < 2 || n[1] < 2 {
        return fail("each node needs at least two producers".into());
    }
    if !(d > 0.0 && k[0] > 0.0 && k[1] > 0.0) {
        return fail("demand and capacities must be positive".into());
    }
    let (n1, n2) = (n[0] as f64, n[1] as f64);
    if !(n1 * k[0] / d >= 1.0 && (n1 - 1.0) * k[0] / d < 1.0) {
        return fail("need N1 K1 / D >= 1 > (N1 - 1) K1 / D".into());
    }
    if !((n2 - 1.0) * k[1] / d > 1.0) {
        return fail("need (N2 - 1) K2 / D > 1".into());
    }
    let upper = (n1 - 1.0) * k[0];
    let lower = upper / (1.0 + n2 / n1 * ((n2 - 1.0) * k[1] / d - 1.0));
    if !(t > lower && t < upper) {
        return fail(format!("t must lie in ({lower}, {upper})"));
    }
    let price = markup_factor(t, n[0], k[0]);
    let beta = price / markup_factor(d - t, n[1], k[1]);
    let net = NetworkModel::from_lines(&[crate::network::LineSpec::new(0, 1, d)], vec![d / 2.0, d / 2.0], 0)?;
    let mut producers = Vec::new();
    for _ in 0..n[0] {
        producers.push(Producer::linear(0, k[0], 1.0)?);
    }
    for _ in 0..n[1] {
        producers.push(Producer::linear(1, k[1], beta)?);
    }
    let market = Market::new(net, producers)?;
    let q = vec![t, d - t];
    let theta: Vec<f64> = market.producers().iter().map(|p| price * (k[p.node] - q[p.node] / n[p.node] as f64)).collect();
    let x: Vec<f64> = market.producers().iter().map(|p| q[p.node] / n[p.node] as f64).collect();
    let efficient_cost = d;
    let equilibrium_cost = t + beta * (d - t);
    Ok(PoaExample {
        market,
        q,
        bids: BidProfile::new(theta)?,
        x,
        price,
        beta,
        efficient_cost,
        equilibrium_cost,
        poa_lower_bound: equilibrium_cost / efficient_cost,
    })
}
