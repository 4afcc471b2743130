//! Closed-form Nash equilibrium of the two-node market with symmetric
//! linear producers at each node, and the dependence of its production
//! cost on the line capacity.
//!
//! Nodal supply is the projection of the unconstrained root `q̃₁` of
//! `m₁(q) = m₂(D − q)` onto the interval the line allows, where
//! `m_i(z) = β_i (1 + 1/(N_i ((N_i − 1) K_i / z − 1)))` is the nodal markup
//! curve. Since `q̃₁` does not depend on the capacity, equilibrium cost is
//! piecewise linear in it.

use serde::Serialize;

use crate::cost::Producer;
use crate::error::{Error, Result};
use crate::market::Market;
use crate::network::{LineSpec, NetworkModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoNodeScenario {
    pub d: [f64; 2],
    pub n: [usize; 2],
    pub k: [f64; 2],
    pub beta: [f64; 2],
    /// Line capacity.
    pub c: f64,
}

impl TwoNodeScenario {
    /// Validates the scenario: positive demands, at least two producers per
    /// node, `K_i (N_i − 1) > D` and `β₂ > β₁ > 0`.
    pub fn new(d: [f64; 2], n: [usize; 2], k: [f64; 2], beta: [f64; 2], c: f64) -> Result<Self> {
        let fail = |m: &str| Err(Error::OutsideTwoNodeRegime(m.to_string()));
        if !(d[0] > 0.0 && d[1] > 0.0 && d[0].is_finite() && d[1].is_finite()) {
            return fail("demands must be positive");
        }
        if !(c >= 0.0) {
            return fail("line capacity must be nonnegative");
        }
        let total = d[0] + d[1];
        for i in 0..2 {
            if n[i] < 2 {
                return fail("each node needs at least two producers");
            }
            if !(k[i] > 0.0 && k[i] * (n[i] as f64 - 1.0) > total) {
                return fail("need K_i (N_i - 1) / D > 1 at both nodes");
            }
        }
        if !(beta[0] > 0.0 && beta[1] > beta[0] && beta[1].is_finite()) {
            return fail("need beta2 > beta1 > 0");
        }
        Ok(TwoNodeScenario { d, n, k, beta, c })
    }

    pub fn with_capacity(&self, c: f64) -> Result<Self> {
        TwoNodeScenario::new(self.d, self.n, self.k, self.beta, c)
    }

    pub fn total_demand(&self) -> f64 {
        self.d[0] + self.d[1]
    }

    /// `m_i(z)`; `z ≤ 0` follows the same expression, which stays monotone.
    pub fn markup_price(&self, i: usize, z: f64) -> f64 {
        if z == 0.0 {
            return self.beta[i];
        }
        let n = self.n[i] as f64;
        self.beta[i] * (1.0 + 1.0 / (n * (self.k[i] * (n - 1.0) / z - 1.0)))
    }

    /// The same market for the general solver, node 1 as slack.
    pub fn to_market(&self) -> Result<Market> {
        let net = NetworkModel::from_lines(&[LineSpec::new(0, 1, self.c)], self.d.to_vec(), 0)?;
        let mut producers = Vec::with_capacity(self.n[0] + self.n[1]);
        for i in 0..2 {
            for _ in 0..self.n[i] {
                producers.push(Producer::linear(i, self.k[i], self.beta[i])?);
            }
        }
        Market::new(net, producers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoNodeEquilibrium {
    /// Root of `m₁(q) = m₂(D − q)`, before the line constraint.
    pub q_tilde: f64,
    pub q: [f64; 2],
    pub p: [f64; 2],
    pub cost_ne: f64,
    pub cost_eff: f64,
}

/// Unconstrained nodal supply at node 1 by bisection on `(0, (N₁ − 1) K₁)`.
pub fn unconstrained_supply(s: &TwoNodeScenario) -> f64 {
    let total = s.total_demand();
    let residual = |q: f64| s.markup_price(0, q) - s.markup_price(1, total - q);
    let eps = 1e-12 * total;
    let mut lo = eps;
    let mut hi = s.k[0] * (s.n[0] as f64 - 1.0) - eps;
    // The residual increases from below zero to +∞ across the bracket.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * total {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn efficient_cost(s: &TwoNodeScenario) -> f64 {
    s.beta[0] * s.total_demand() + (s.beta[1] - s.beta[0]) * (s.d[1] - s.c).max(0.0)
}

fn supply_bounds(s: &TwoNodeScenario) -> (f64, f64) {
    ((s.d[0] - s.c).max(0.0), s.total_demand() - (s.d[1] - s.c).max(0.0))
}

pub fn two_node_nash(s: &TwoNodeScenario) -> TwoNodeEquilibrium {
    let total = s.total_demand();
    let q_tilde = unconstrained_supply(s);
    let (lo, hi) = supply_bounds(s);
    let q1 = q_tilde.clamp(lo, hi);
    let q2 = total - q1;
    // An unclipped q̃₁ leaves the line slack, so the two markups coincide;
    // report one price rather than two copies differing by bisection noise.
    let p = if q1 == q_tilde {
        let p = s.markup_price(0, q1);
        [p, p]
    } else if q2 > 0.0 {
        [s.markup_price(0, q1), s.markup_price(1, q2)]
    } else {
        let p = s.markup_price(0, total);
        [p, p]
    };
    TwoNodeEquilibrium {
        q_tilde,
        q: [q1, q2],
        p,
        cost_ne: s.beta[0] * q1 + s.beta[1] * q2,
        cost_eff: efficient_cost(s),
    }
}

/// True when node 1's price exceeds node 2's at equilibrium, tested at the
/// import limit `q₁ = d₁ − c`. False when `c ≥ d₁`, where no import limit binds.
pub fn braess_condition(s: &TwoNodeScenario) -> bool {
    if s.c >= s.d[0] {
        return false;
    }
    let ratio = (s.markup_price(0, s.d[0] - s.c) / s.beta[0]) / (s.markup_price(1, s.d[1] + s.c) / s.beta[1]);
    ratio > s.beta[1] / s.beta[0]
}

/// Right derivative of equilibrium cost in the line capacity:
/// `(β₂ − β₁) sgn(p₁ − p₂)`, with the sign read off from where `q̃₁` sits
/// relative to the supply interval so that it is exact at interior points.
pub fn cost_derivative(s: &TwoNodeScenario) -> f64 {
    let q_tilde = unconstrained_supply(s);
    let gap = s.beta[1] - s.beta[0];
    if q_tilde < s.d[0] - s.c {
        gap
    } else if s.c < s.d[1] && q_tilde > s.total_demand() - (s.d[1] - s.c) {
        -gap
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub c: f64,
    pub q1: f64,
    pub q2: f64,
    pub p1: f64,
    pub p2: f64,
    pub cost_ne: f64,
    pub cost_eff: f64,
    pub braess: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Constant,
    Decreasing,
}

/// A maximal run of consecutive sweep points over which cost moves one way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub trend: Trend,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub segments: Vec<Segment>,
    /// Capacity at which the condition for `p₁ > p₂` stops holding.
    pub switch_point: Option<f64>,
}

/// Evaluates the equilibrium at each capacity in `c_values`, which must be
/// nonnegative and sorted.
pub fn capacity_sweep(s: &TwoNodeScenario, c_values: &[f64]) -> Result<Sweep> {
    if c_values.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Shape("capacity values must be sorted".into()));
    }
    let mut rows = Vec::with_capacity(c_values.len());
    for &c in c_values {
        let at = s.with_capacity(c)?;
        let e = two_node_nash(&at);
        rows.push(SweepRow {
            c,
            q1: e.q[0],
            q2: e.q[1],
            p1: e.p[0],
            p2: e.p[1],
            cost_ne: e.cost_ne,
            cost_eff: e.cost_eff,
            braess: braess_condition(&at),
        });
    }
    Ok(Sweep { segments: segments(&rows), switch_point: braess_switch_point(s), rows })
}

fn segments(rows: &[SweepRow]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for w in rows.windows(2) {
        let delta = w[1].cost_ne - w[0].cost_ne;
        let tol = 1e-10 * (1.0 + w[0].cost_ne.abs());
        let trend = if delta > tol {
            Trend::Increasing
        } else if delta < -tol {
            Trend::Decreasing
        } else {
            Trend::Constant
        };
        match out.last_mut() {
            Some(last) if last.trend == trend => last.to = w[1].c,
            _ => out.push(Segment { trend, from: w[0].c, to: w[1].c }),
        }
    }
    out
}

/// Largest capacity below which the price-inversion condition holds,
/// refined by bisection to `1e-9 · d₁`; `None` if it fails already at zero.
pub fn braess_switch_point(s: &TwoNodeScenario) -> Option<f64> {
    let holds = |c: f64| braess_condition(&TwoNodeScenario { c, ..*s });
    if !holds(0.0) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, s.d[0]);
    while hi - lo > 1e-9 * s.d[0] {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_node_market(beta2: f64, c: f64) -> TwoNodeScenario {
        TwoNodeScenario::new([1.0, 1.0], [3, 10], [1.02, 1.02], [1.0, beta2], c).unwrap()
    }

    fn grid(step: f64, max: f64) -> Vec<f64> {
        (0..=((max / step).round() as usize)).map(|k| k as f64 * step).collect()
    }

    #[test]
    fn line_cut() {
        let e = two_node_nash(&two_node_market(1.15, 0.0));
        assert_abs_diff_eq!(e.q[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.q[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.p[0], 1.320513, epsilon = 1e-6);
        // Hand evaluation gives 1.1640587.
        assert_abs_diff_eq!(e.p[1], 1.164056, epsilon = 1e-5);
        assert_abs_diff_eq!(e.cost_ne, 2.15, epsilon = 1e-12);
        assert_abs_diff_eq!(e.cost_eff, 2.15, epsilon = 1e-12);
    }

    #[test]
    fn import_limit_binds() {
        let e = two_node_nash(&two_node_market(1.15, 0.3));
        assert_abs_diff_eq!(e.q[0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(e.q[1], 1.3, epsilon = 1e-12);
        assert_abs_diff_eq!(e.p[0], 1.174128, epsilon = 2e-6);
        assert_abs_diff_eq!(e.p[1], 1.168973, epsilon = 2e-6);
        assert!(e.p[0] > e.p[1]);
        assert_abs_diff_eq!(e.cost_eff, 2.105, epsilon = 1e-12);
    }

    #[test]
    fn uncongested_prices_equalize() {
        let e = two_node_nash(&two_node_market(1.45, 5.0));
        assert!(e.q[0] > 0.0 && e.q[1] > 0.0);
        assert_abs_diff_eq!(e.q[0], e.q_tilde, epsilon = 0.0);
        assert_abs_diff_eq!(e.p[0], e.p[1], epsilon = 1e-8);
    }

    #[test]
    fn all_supply_at_node_one() {
        // Node 2 so expensive that the unconstrained root lies beyond D.
        let s = TwoNodeScenario::new([1.0, 1.0], [3, 10], [1.02, 1.02], [1.0, 20.0], 5.0).unwrap();
        let e = two_node_nash(&s);
        assert!(e.q_tilde >= 2.0);
        assert_eq!(e.q, [2.0, 0.0]);
        let expected = 1.0 + 1.0 / (3.0 * (2.04 / 2.0 - 1.0));
        assert_abs_diff_eq!(e.p[0], expected, epsilon = 1e-12);
        assert_eq!(e.p[0], e.p[1]);
    }

    #[test]
    fn unconstrained_root_ignores_capacity() {
        assert_eq!(unconstrained_supply(&two_node_market(1.15, 0.1)), unconstrained_supply(&two_node_market(1.15, 0.7)));
    }

    #[test]
    fn braess_examples() {
        assert!(braess_condition(&two_node_market(1.15, 0.25)));
        for c in grid(0.05, 1.5) {
            assert!(!braess_condition(&two_node_market(1.45, c)), "c = {c}");
        }
        assert!(!braess_condition(&two_node_market(1.15, 1.0)));
        assert!(!braess_condition(&two_node_market(1.15, 2.0)));
    }

    #[test]
    fn braess_matches_price_order() {
        for beta2 in [1.15, 1.3, 1.45] {
            for c in grid(0.01, 1.2) {
                let s = two_node_market(beta2, c);
                let e = two_node_nash(&s);
                // Away from the switch point the price gap is well resolved.
                if (e.p[0] - e.p[1]).abs() > 1e-9 {
                    assert_eq!(braess_condition(&s), e.p[0] > e.p[1], "beta2 {beta2} c {c}");
                }
            }
        }
    }

    #[test]
    fn cost_derivative_examples() {
        assert_abs_diff_eq!(cost_derivative(&two_node_market(1.15, 0.1)), 0.15, epsilon = 1e-12);
        assert_eq!(cost_derivative(&two_node_market(1.15, 0.5)), 0.0);
        assert_eq!(cost_derivative(&two_node_market(1.45, 2.0)), 0.0);
    }

    #[test]
    fn cost_derivative_matches_finite_differences() {
        let h = 1e-4;
        for beta2 in [1.15, 1.45] {
            for c in grid(0.05, 1.2) {
                let s = two_node_market(beta2, c);
                let switch = [1.0 - unconstrained_supply(&s), unconstrained_supply(&s) - 1.0, 1.0];
                if switch.iter().any(|&w| (w - c).abs() < 2.0 * h) {
                    continue;
                }
                let fd = (two_node_nash(&two_node_market(beta2, c + h)).cost_ne - two_node_nash(&s).cost_ne) / h;
                assert_abs_diff_eq!(cost_derivative(&s), fd, epsilon = 1e-2 * (beta2 - 1.0));
            }
        }
    }

    #[test]
    fn expensive_node_two_lowers_cost_while_export_binds() {
        let s = two_node_market(1.45, 0.1);
        let e = two_node_nash(&s);
        if e.q_tilde > 1.1 {
            assert_abs_diff_eq!(cost_derivative(&s), -0.45, epsilon = 1e-12);
        }
        assert!(cost_derivative(&s) <= 0.0);
    }

    #[test]
    fn sweep_shape_low_cost_gap() {
        let s = two_node_market(1.15, 0.0);
        let sweep = capacity_sweep(&s, &grid(0.01, 0.8)).unwrap();
        for w in sweep.rows.windows(2) {
            if w[1].c <= 0.30 + 1e-12 {
                assert!(w[1].cost_ne > w[0].cost_ne, "c = {}", w[1].c);
            }
            if w[0].c >= 0.32 - 1e-12 {
                assert_abs_diff_eq!(w[1].cost_ne, w[0].cost_ne, epsilon = 1e-12);
            }
        }
        assert_eq!(sweep.segments[0].trend, Trend::Increasing);
        assert_eq!(sweep.segments.last().unwrap().trend, Trend::Constant);
        let switch = sweep.switch_point.unwrap();
        assert_abs_diff_eq!(switch, 1.0 - unconstrained_supply(&s), epsilon = 1e-6);
        assert!(switch > 0.30 && switch < 0.32, "switch {switch}");
        for r in &sweep.rows {
            assert_eq!(r.braess, r.c < switch);
            if r.c < switch {
                assert!(r.p1 > r.p2);
            }
        }
    }

    #[test]
    fn sweep_shape_high_cost_gap() {
        let sweep = capacity_sweep(&two_node_market(1.45, 0.0), &grid(0.01, 0.8)).unwrap();
        for w in sweep.rows.windows(2) {
            assert!(w[1].cost_ne <= w[0].cost_ne + 1e-12);
        }
        assert!(sweep.segments.iter().all(|s| s.trend != Trend::Increasing));
        assert_eq!(sweep.switch_point, None);
    }

    #[test]
    fn sweep_rejects_unsorted() {
        assert!(capacity_sweep(&two_node_market(1.15, 0.0), &[0.2, 0.1]).is_err());
    }

    #[test]
    fn regime_checks() {
        let bad = |r: Result<TwoNodeScenario>| matches!(r, Err(Error::OutsideTwoNodeRegime(_)));
        assert!(bad(TwoNodeScenario::new([1.0, 1.0], [3, 10], [1.02, 1.02], [1.15, 1.0], 0.0)));
        assert!(bad(TwoNodeScenario::new([1.0, 1.0], [2, 10], [1.02, 1.02], [1.0, 1.15], 0.0)));
        assert!(bad(TwoNodeScenario::new([1.0, 0.0], [3, 10], [1.02, 1.02], [1.0, 1.15], 0.0)));
        assert!(bad(TwoNodeScenario::new([1.0, 1.0], [3, 10], [1.02, 1.02], [1.0, 1.15], -0.1)));
    }
}
