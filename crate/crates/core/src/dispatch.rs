//! Efficient dispatch under true costs, market clearing under reported
//! supply functions, and the node-local allocation and pricing rules.

use serde::Serialize;

use crate::cost::BidProfile;
use crate::engine::{
    solve_polytope, solve_with_demand, Coordinate, HalfSquare, KktResiduals, Linear, ScalarConvex,
    SeparableObjective, SolveOptions, SolveStatus,
};
use crate::error::{Error, Result};
use crate::market::Market;

/// Production below this is reported as negative.
pub const NEGATIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchOutcome {
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub objective_value: f64,
    pub status: SolveStatus,
    pub residuals: KktResiduals,
    /// Some producer is dispatched below zero (possible only off equilibrium).
    pub negative_production: bool,
}

impl DispatchOutcome {
    pub(crate) fn trivial(market: &Market) -> Self {
        DispatchOutcome {
            x: vec![0.0; market.producer_count()],
            q: vec![0.0; market.node_count()],
            p: vec![0.0; market.node_count()],
            lambda: 0.0,
            mu: vec![0.0; 2 * market.network().line_count()],
            objective_value: 0.0,
            status: SolveStatus::Optimal,
            residuals: KktResiduals { primal: 0.0, stationarity: 0.0, complementarity: 0.0 },
            negative_production: false,
        }
    }

    /// `Σ_j C_j(x_j)` under the market's true costs.
    pub fn production_cost(&self, market: &Market) -> f64 {
        market.producers().iter().zip(&self.x).map(|(p, &x)| p.cost.value(x)).sum()
    }
}

/// One convex quadratic segment `β s + α s²` of a piecewise cost.
struct Segment {
    alpha: f64,
    beta: f64,
}

impl ScalarConvex for Segment {
    fn value(&self, s: f64) -> f64 {
        s * (self.beta + self.alpha * s)
    }
    fn derivatives(&self, s: f64) -> (f64, f64) {
        let d = self.beta + 2.0 * self.alpha * s;
        (d, d)
    }
    fn second_derivative(&self, _s: f64) -> f64 {
        2.0 * self.alpha
    }
}

/// Minimizes total true production cost subject to the network and
/// capacity limits. Costs with kinks are split into smooth segments.
pub fn efficient_dispatch(market: &Market) -> Result<DispatchOutcome> {
    let net = market.network();
    if net.total_demand() == 0.0 {
        return Ok(DispatchOutcome::trivial(market));
    }
    let mut obj = SeparableObjective::new();
    let mut owner = Vec::new();
    for (j, p) in market.producers().iter().enumerate() {
        if p.cost.is_smooth() {
            obj.push(Coordinate::new(p.node, 0.0, p.capacity, &p.cost));
            owner.push(j);
            continue;
        }
        let mut starts = vec![0.0];
        starts.extend(p.cost.breakpoints(p.capacity));
        starts.push(p.capacity);
        for w in starts.windows(2) {
            if w[1] - w[0] <= 1e-12 * p.capacity {
                continue;
            }
            let seg = Segment { alpha: p.cost.second_derivative(w[0]) / 2.0, beta: p.cost.derivatives(w[0]).1 };
            obj.push(Coordinate::new(p.node, 0.0, w[1] - w[0], seg));
            owner.push(j);
        }
    }
    let sol = solve_polytope(&obj, net).map_err(|e| match e {
        Error::Infeasible => Error::DemandCannotBeMet,
        other => other,
    })?;
    let mut x = vec![0.0; market.producer_count()];
    for (k, &j) in owner.iter().enumerate() {
        x[j] += sol.minimizer[k];
    }
    let objective_value = market.producers().iter().zip(&x).map(|(p, &v)| p.cost.value(v)).sum();
    Ok(DispatchOutcome {
        p: sol.prices(net),
        q: sol.supply,
        x,
        lambda: sol.lambda,
        mu: sol.mu,
        objective_value,
        status: sol.status,
        residuals: sol.residuals,
        negative_production: false,
    })
}

/// Splits nodal supply `q` among a node's producers given their bids:
/// `x_j = X_j − (θ_j/Σθ)(ΣX − q)`, or pro rata to capacity when no bid is positive.
pub fn local_allocation(capacities: &[f64], bids: &[f64], q: f64) -> Result<Vec<f64>> {
    if capacities.len() != bids.len() {
        return Err(Error::Shape("capacities and bids differ in length".into()));
    }
    if capacities.is_empty() {
        return if q == 0.0 { Ok(Vec::new()) } else { Err(Error::SupplyAtEmptyNode) };
    }
    let sum_x: f64 = capacities.iter().sum();
    if q > sum_x * (1.0 + 1e-12) {
        return Err(Error::TargetExceedsCapacity);
    }
    let sum_t: f64 = bids.iter().sum();
    if sum_t > 0.0 {
        let shortfall = sum_x - q;
        Ok(capacities.iter().zip(bids).map(|(x, t)| x - t / sum_t * shortfall).collect())
    } else {
        Ok(capacities.iter().map(|x| x / sum_x * q).collect())
    }
}

/// Market-clearing price `Σθ/(ΣX − q)`, or 0 when no bid is positive.
pub fn nodal_price(capacities: &[f64], bids: &[f64], q: f64) -> Result<f64> {
    if capacities.len() != bids.len() {
        return Err(Error::Shape("capacities and bids differ in length".into()));
    }
    let sum_t: f64 = bids.iter().sum();
    if sum_t == 0.0 {
        return Ok(0.0);
    }
    let sum_x: f64 = capacities.iter().sum();
    if q >= sum_x {
        return Err(Error::PriceUndefinedAtCapacity);
    }
    Ok(sum_t / (sum_x - q))
}

/// Aggregate reported cost of a node with `Σθ > 0`:
/// `Σ_{θ_j>0} θ_j log(X_j Σθ / (θ_j (ΣX − q)))`.
pub(crate) struct ReportedNodeCost {
    terms: Vec<(f64, f64)>,
    sum_theta: f64,
    sum_cap: f64,
}

impl ReportedNodeCost {
    pub(crate) fn new(capacities: &[f64], bids: &[f64]) -> Self {
        let terms: Vec<(f64, f64)> =
            bids.iter().zip(capacities).filter(|(t, _)| **t > 0.0).map(|(&t, &x)| (t, x)).collect();
        ReportedNodeCost {
            sum_theta: bids.iter().sum(),
            sum_cap: capacities.iter().sum(),
            terms,
        }
    }
}

impl ScalarConvex for ReportedNodeCost {
    fn value(&self, q: f64) -> f64 {
        if q >= self.sum_cap {
            return f64::INFINITY;
        }
        let room = self.sum_cap - q;
        self.terms.iter().map(|&(t, x)| t * (x * self.sum_theta / (t * room)).ln()).sum()
    }
    fn derivatives(&self, q: f64) -> (f64, f64) {
        let d = if q >= self.sum_cap { f64::INFINITY } else { self.sum_theta / (self.sum_cap - q) };
        (d, d)
    }
    fn second_derivative(&self, q: f64) -> f64 {
        let room = self.sum_cap - q;
        self.sum_theta / (room * room)
    }
}

fn node_data(market: &Market, bids: &BidProfile, i: usize) -> (Vec<f64>, Vec<f64>) {
    market.at_node(i).iter().map(|&j| (market.producers()[j].capacity, bids[j])).unzip()
}

/// Clears the market under the reported supply functions: nodal supply
/// minimizes the aggregate reported cost over the network, then each node
/// allocates and prices locally. Nodes without positive bids receive the
/// minimum-norm supply among the optimal ones.
pub fn reported_dispatch(market: &Market, bids: &BidProfile) -> Result<DispatchOutcome> {
    if bids.len() != market.producer_count() {
        return Err(Error::Shape(format!("{} bids for {} producers", bids.len(), market.producer_count())));
    }
    let net = market.network();
    let n = net.node_count();
    let total_cap: f64 = market.producers().iter().map(|p| p.capacity).sum();
    let far = net.total_demand() + total_cap + 1.0;
    let infeasible = |e| match e {
        Error::Infeasible => Error::DemandCannotBeMet,
        other => other,
    };

    let mut positive = Vec::new();
    let mut flat = Vec::new();
    for i in 0..n {
        if market.at_node(i).is_empty() {
            continue;
        }
        let (caps, thetas) = node_data(market, bids, i);
        if thetas.iter().sum::<f64>() > 0.0 {
            positive.push((i, ReportedNodeCost::new(&caps, &thetas), caps.iter().sum::<f64>()));
        } else {
            flat.push((i, caps.iter().sum::<f64>()));
        }
    }

    let mut q = vec![0.0; n];
    let mut lambda = 0.0;
    let mut mu = vec![0.0; 2 * net.line_count()];
    let mut status = SolveStatus::Optimal;
    let mut residuals = KktResiduals { primal: 0.0, stationarity: 0.0, complementarity: 0.0 };

    if !positive.is_empty() {
        let mut obj = SeparableObjective::new();
        for (i, cost, cap) in &positive {
            obj.push(Coordinate::new(*i, f64::NEG_INFINITY, *cap, cost));
        }
        for &(i, cap) in &flat {
            obj.push(Coordinate::new(i, -far, cap, Linear(0.0)));
        }
        let sol = solve_polytope(&obj, net).map_err(infeasible)?;
        for (k, (i, _, _)) in positive.iter().enumerate() {
            q[*i] = sol.minimizer[k];
        }
        lambda = sol.lambda;
        mu = sol.mu;
        status = sol.status;
        residuals = sol.residuals;
    }
    if !flat.is_empty() {
        let mut demand = net.demand().to_vec();
        for (i, _, _) in &positive {
            demand[*i] -= q[*i];
        }
        let mut obj = SeparableObjective::new();
        for &(i, cap) in &flat {
            obj.push(Coordinate::new(i, f64::NEG_INFINITY, cap, HalfSquare));
        }
        let sol = solve_with_demand(&obj, net, &demand, &SolveOptions::default()).map_err(infeasible)?;
        for (k, &(i, _)) in flat.iter().enumerate() {
            q[i] = sol.minimizer[k];
        }
        if positive.is_empty() {
            status = sol.status;
            residuals = sol.residuals;
        } else if sol.status != SolveStatus::Optimal {
            status = sol.status;
        }
    } else if positive.is_empty() && net.total_demand() != 0.0 {
        return Err(Error::DemandCannotBeMet);
    }

    let mut x = vec![0.0; market.producer_count()];
    let mut p = vec![0.0; n];
    for i in 0..n {
        let members = market.at_node(i);
        if members.is_empty() {
            continue;
        }
        let (caps, thetas) = node_data(market, bids, i);
        let alloc = local_allocation(&caps, &thetas, q[i].min(caps.iter().sum()))?;
        for (&j, v) in members.iter().zip(alloc) {
            x[j] = v;
        }
        p[i] = nodal_price(&caps, &thetas, q[i])?;
    }
    let objective_value = positive.iter().map(|(i, cost, _)| cost.value(q[*i])).sum();
    let negative_production = x.iter().any(|&v| v < -NEGATIVE_TOL);
    Ok(DispatchOutcome { x, q, p, lambda, mu, objective_value, status, residuals, negative_production })
}
