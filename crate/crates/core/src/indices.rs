//! Structural market-power indices and the efficiency and markup bounds
//! derived from them.

use serde::{Deserialize, Serialize};

use crate::dispatch::DispatchOutcome;
use crate::error::{Error, Result};
use crate::market::Market;

/// `q_i^max` for every node.
pub fn max_supplies(market: &Market) -> Result<Vec<f64>> {
    (0..market.node_count()).map(|i| market.network().max_nodal_supply(i)).collect()
}

/// `min(X_j, q^max)/q^max`.
pub fn share(capacity: f64, q_max: f64) -> Result<f64> {
    if !(q_max > 0.0) {
        return Err(Error::Undefined);
    }
    Ok(capacity.min(q_max) / q_max)
}

/// Rival nodal capacity over `q^max`.
pub fn residual_supply(rival_capacity: f64, q_max: f64) -> Result<f64> {
    if !(q_max > 0.0) {
        return Err(Error::Undefined);
    }
    Ok(rival_capacity / q_max)
}

fn node_q_max(market: &Market, j: usize) -> Result<(usize, f64)> {
    let i = market.producers()[j].node;
    let q = market.network().max_nodal_supply(i)?;
    if !(q > 0.0) {
        return Err(Error::DegenerateNode(i));
    }
    Ok((i, q))
}

pub fn market_share(market: &Market, j: usize) -> Result<f64> {
    let (_, q) = node_q_max(market, j)?;
    share(market.producers()[j].capacity, q)
}

pub fn rsi(market: &Market, j: usize) -> Result<f64> {
    let (_, q) = node_q_max(market, j)?;
    residual_supply(market.rival_capacity(j), q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PivotalFlag {
    pub producer: usize,
    pub node: usize,
    pub rsi: f64,
    /// `rsi − 1`; nonpositive for every flagged producer.
    pub margin: f64,
}

/// Producers with `RSI ≤ 1`. Empty exactly when no supplier is pivotal.
pub fn pivotal_screen(market: &Market) -> Result<Vec<PivotalFlag>> {
    let q_max = max_supplies(market)?;
    let mut out = Vec::new();
    for (j, p) in market.producers().iter().enumerate() {
        let q = q_max[p.node];
        // A node that can never supply has no pivotal producer unless it is alone.
        let r = if q > 0.0 {
            market.rival_capacity(j) / q
        } else if market.rival_capacity(j) > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if r <= 1.0 {
            out.push(PivotalFlag { producer: j, node: p.node, rsi: r, margin: r - 1.0 });
        }
    }
    Ok(out)
}

/// `1 + MS/(RSI − 1)`.
pub fn markup_bound(ms: f64, rsi: f64) -> Result<f64> {
    if !(rsi > 1.0) {
        return Err(Error::BoundUndefined);
    }
    Ok(1.0 + ms / (rsi - 1.0))
}

/// `MS/(MS + RSI − 1)`.
pub fn lerner_bound(ms: f64, rsi: f64) -> Result<f64> {
    if !(rsi > 1.0) {
        return Err(Error::BoundUndefined);
    }
    Ok(ms / (ms + rsi - 1.0))
}

/// `(p − ∂⁺C)/p`.
pub fn lerner_index(price: f64, right_marginal_cost: f64) -> Result<f64> {
    if !(price > 0.0) {
        return Err(Error::Undefined);
    }
    Ok((price - right_marginal_cost) / price)
}

/// Lerner index of producer `j` at a dispatch outcome.
pub fn lerner_at(market: &Market, outcome: &DispatchOutcome, j: usize) -> Result<f64> {
    let p = &market.producers()[j];
    lerner_index(outcome.p[p.node], p.cost.derivatives(outcome.x[j]).1)
}

/// `1 + max_j MS_j/(RSI_j − 1)`; 1 when there are no producers.
pub fn poa_bound(market: &Market) -> Result<f64> {
    let q_max = max_supplies(market)?;
    let mut worst: f64 = 0.0;
    for (j, p) in market.producers().iter().enumerate() {
        let q = q_max[p.node];
        if !(q > 0.0) {
            if market.rival_capacity(j) > 0.0 {
                continue;
            }
            return Err(Error::BoundUndefined);
        }
        let ms = share(p.capacity, q)?;
        let r = residual_supply(market.rival_capacity(j), q)?;
        worst = worst.max(markup_bound(ms, r)? - 1.0);
    }
    Ok(1.0 + worst)
}

/// `ne_cost / efficient_cost`, with `0/0 = 1`.
pub fn price_of_anarchy(ne_cost: f64, efficient_cost: f64) -> Result<f64> {
    if efficient_cost > 0.0 {
        Ok(ne_cost / efficient_cost)
    } else if ne_cost == 0.0 && efficient_cost == 0.0 {
        Ok(1.0)
    } else {
        Err(Error::UndefinedRatio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProducerIndices {
    pub producer: usize,
    pub node: usize,
    pub ms: Option<f64>,
    pub rsi: Option<f64>,
    pub pivotal: bool,
    pub lerner: Option<f64>,
    pub lerner_bound: Option<f64>,
    pub markup_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexReport {
    pub producers: Vec<ProducerIndices>,
    pub q_max: Vec<f64>,
    pub poa: Option<f64>,
    pub poa_bound: Option<f64>,
}

/// Indices for every producer; Lerner values and the PoA are filled in when
/// an outcome and the efficient cost are supplied.
pub fn index_report(market: &Market, outcome: Option<(&DispatchOutcome, f64)>) -> Result<IndexReport> {
    let q_max = max_supplies(market)?;
    let mut producers = Vec::with_capacity(market.producer_count());
    for (j, p) in market.producers().iter().enumerate() {
        let q = q_max[p.node];
        let ms = share(p.capacity, q).ok();
        let rsi = residual_supply(market.rival_capacity(j), q).ok();
        let (lb, mb) = match (ms, rsi) {
            (Some(m), Some(r)) => (lerner_bound(m, r).ok(), markup_bound(m, r).ok()),
            _ => (None, None),
        };
        producers.push(ProducerIndices {
            producer: j,
            node: p.node,
            ms,
            rsi,
            pivotal: rsi.map_or(market.rival_capacity(j) == 0.0, |r| r < 1.0),
            lerner: outcome.and_then(|(o, _)| lerner_at(market, o, j).ok()),
            lerner_bound: lb,
            markup_bound: mb,
        });
    }
    let poa = match outcome {
        Some((o, eff)) => price_of_anarchy(o.production_cost(market), eff).ok(),
        None => None,
    };
    Ok(IndexReport { producers, q_max, poa, poa_bound: poa_bound(market).ok() })
}

/// Worst-case spot-price envelope defaults: marginal cost 8, market share 1.
pub const ENVELOPE_MARGINAL_COST: f64 = 8.0;
pub const ENVELOPE_SHARE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRecord {
    pub rsi: f64,
    pub price: f64,
    #[serde(default)]
    pub mc: Option<f64>,
    #[serde(default)]
    pub ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub record: EnvelopeRecord,
    /// `None` when `rsi ≤ 1`.
    pub bound: Option<f64>,
    pub flagged: bool,
    pub exceedance: f64,
}

pub fn envelope_bound(record: &EnvelopeRecord) -> Option<f64> {
    let mc = record.mc.unwrap_or(ENVELOPE_MARGINAL_COST);
    let ms = record.ms.unwrap_or(ENVELOPE_SHARE);
    markup_bound(ms, record.rsi).ok().map(|m| m * mc)
}

/// Flags prices above `(1 + ms/(rsi − 1))·mc`.
pub fn envelope_check(records: &[EnvelopeRecord]) -> Vec<EnvelopeRow> {
    records
        .iter()
        .map(|r| {
            let bound = envelope_bound(r);
            let exceedance = bound.map_or(0.0, |b| (r.price - b).max(0.0));
            EnvelopeRow { record: *r, bound, flagged: exceedance > 0.0, exceedance }
        })
        .collect()
}
