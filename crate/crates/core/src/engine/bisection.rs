//! Dual bisection for `min Σ_k f_k(x_k)` subject to `Σ_k x_k = z`,
//! `0 ≤ x_k ≤ cap_k`, where each `f_k` is convex and flat left of zero.

use super::ScalarConvex;
use crate::error::{Error, Result};

/// One producer at a node: a convex objective and its capacity.
#[derive(Clone, Copy)]
pub struct NodeTerm<'a> {
    pub func: &'a dyn ScalarConvex,
    pub cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BisectionResult {
    pub allocation: Vec<f64>,
    /// `max_k ∂⁻f_k(x_k)`; the left derivative at zero counts as zero.
    pub lambda_lo: f64,
    /// `min_k ∂⁺f_k(x_k)`; the right derivative at capacity counts as `+∞`.
    pub lambda_hi: f64,
}

const LAMBDA_REL_TOL: f64 = 1e-10;
const INNER_ITERS: usize = 200;

fn left(term: &NodeTerm, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        term.func.derivatives(x).0
    }
}

fn right(term: &NodeTerm, x: f64) -> f64 {
    if x >= term.cap {
        f64::INFINITY
    } else {
        term.func.derivatives(x.max(0.0)).1
    }
}

/// `inf { x ∈ [0, cap] : ∂⁺f(x) ≥ λ }`.
fn lower_response(term: &NodeTerm, lambda: f64) -> f64 {
    if right(term, 0.0) >= lambda {
        return 0.0;
    }
    let (mut a, mut b) = (0.0, term.cap);
    for _ in 0..INNER_ITERS {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if right(term, m) >= lambda {
            b = m;
        } else {
            a = m;
        }
    }
    b
}

/// `sup { x ∈ [0, cap] : ∂⁻f(x) ≤ λ }`.
fn upper_response(term: &NodeTerm, lambda: f64) -> f64 {
    if left(term, term.cap) <= lambda {
        return term.cap;
    }
    let (mut a, mut b) = (0.0, term.cap);
    for _ in 0..INNER_ITERS {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if left(term, m) <= lambda {
            a = m;
        } else {
            b = m;
        }
    }
    a
}

/// Allocates `z` across the terms by bisecting on the common marginal value
/// and reports the interval of multipliers supporting the allocation.
pub fn dual_bisection(terms: &[NodeTerm], z: f64) -> Result<BisectionResult> {
    dual_bisection_tol(terms, z, LAMBDA_REL_TOL)
}

/// As [`dual_bisection`], stopping once the multiplier bracket is narrower
/// than `rel_tol · max(1, λ)` or at floating-point resolution.
pub fn dual_bisection_tol(terms: &[NodeTerm], z: f64, rel_tol: f64) -> Result<BisectionResult> {
    let total: f64 = terms.iter().map(|t| t.cap).sum();
    if !(z >= 0.0) {
        return Err(Error::Shape(format!("negative target {z}")));
    }
    if z >= total {
        return Err(Error::TargetExceedsCapacity);
    }
    if z == 0.0 {
        let allocation = vec![0.0; terms.len()];
        let lambda_hi = terms.iter().map(|t| right(t, 0.0)).fold(f64::INFINITY, f64::min);
        return Ok(BisectionResult { allocation, lambda_lo: 0.0, lambda_hi });
    }

    let sum_lower = |l: f64| terms.iter().map(|t| lower_response(t, l)).sum::<f64>();
    let sum_upper = |l: f64| terms.iter().map(|t| upper_response(t, l)).sum::<f64>();

    let top = terms.iter().map(|t| left(t, t.cap)).fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, top * (1.0 + 1e-9) + 1e-9);
    let mut exact = None;
    if sum_lower(0.0) <= z && z <= sum_upper(0.0) {
        exact = Some(0.0);
    }
    while exact.is_none() && hi - lo > rel_tol * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sum_lower(mid) > z {
            hi = mid;
        } else if sum_upper(mid) < z {
            lo = mid;
        } else {
            exact = Some(mid);
        }
    }

    // Interpolate with a common weight between the largest response at the
    // low multiplier and the smallest at the high one: ties split evenly
    // relative to each producer's free range.
    let (a, b): (Vec<f64>, Vec<f64>) = match exact {
        Some(l) => terms.iter().map(|t| (lower_response(t, l), upper_response(t, l))).unzip(),
        None => terms.iter().map(|t| (upper_response(t, lo), lower_response(t, hi))).unzip(),
    };
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    let t = if sb > sa { ((z - sa) / (sb - sa)).clamp(0.0, 1.0) } else { 0.5 };
    let mut allocation: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + t * (y - x)).collect();
    // Remove the residual rounding on the marginal coordinate with most room.
    // Idle or saturated producers are left alone: nudging one off its bound
    // would pull its derivative into the multiplier bracket.
    let err = z - allocation.iter().sum::<f64>();
    if err != 0.0 {
        let free: Vec<usize> = (0..terms.len()).filter(|&k| b[k] > a[k]).collect();
        let smooth: Vec<usize> = (0..terms.len())
            .filter(|&k| {
                let x = allocation[k];
                x > 0.0 && x < terms[k].cap && left(&terms[k], x) == right(&terms[k], x)
            })
            .collect();
        let candidates = if free.is_empty() { smooth } else { free };
        if let Some((k, _)) = candidates
            .iter()
            .map(|&k| (k, allocation[k]))
            .map(|(k, x)| (k, if err > 0.0 { terms[k].cap - x } else { x }))
            .max_by(|p, q| p.1.total_cmp(&q.1))
        {
            allocation[k] = (allocation[k] + err).clamp(0.0, terms[k].cap);
        }
    }

    let lambda_lo = terms.iter().zip(&allocation).map(|(t, &x)| left(t, x)).fold(0.0, f64::max);
    let lambda_hi = terms.iter().zip(&allocation).map(|(t, &x)| right(t, x)).fold(f64::INFINITY, f64::min);
    Ok(BisectionResult { allocation, lambda_lo, lambda_hi })
}
