//! Convex machinery shared by the dispatch and equilibrium layers: an
//! interior point solver for separable objectives over the injection
//! polytope, and a dual bisection for single-node allocation problems.

mod bisection;
mod ipm;

pub use bisection::{dual_bisection, dual_bisection_tol, BisectionResult, NodeTerm};
pub use ipm::IpmSettings;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::NetworkModel;
use ipm::IpmProblem;

/// A convex scalar function given through value and derivative oracles.
pub trait ScalarConvex {
    fn value(&self, x: f64) -> f64;
    /// Left and right derivatives at `x`.
    fn derivatives(&self, x: f64) -> (f64, f64);
    /// Curvature used by Newton steps; any nonnegative value is acceptable at a kink.
    fn second_derivative(&self, x: f64) -> f64;
}

impl<T: ScalarConvex + ?Sized> ScalarConvex for &T {
    fn value(&self, x: f64) -> f64 {
        (**self).value(x)
    }
    fn derivatives(&self, x: f64) -> (f64, f64) {
        (**self).derivatives(x)
    }
    fn second_derivative(&self, x: f64) -> f64 {
        (**self).second_derivative(x)
    }
}

/// `f(x) = slope · x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear(pub f64);

impl ScalarConvex for Linear {
    fn value(&self, x: f64) -> f64 {
        self.0 * x
    }
    fn derivatives(&self, _x: f64) -> (f64, f64) {
        (self.0, self.0)
    }
    fn second_derivative(&self, _x: f64) -> f64 {
        0.0
    }
}

/// `f(x) = ½ x²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSquare;

impl ScalarConvex for HalfSquare {
    fn value(&self, x: f64) -> f64 {
        0.5 * x * x
    }
    fn derivatives(&self, x: f64) -> (f64, f64) {
        (x, x)
    }
    fn second_derivative(&self, _x: f64) -> f64 {
        1.0
    }
}

/// One decision variable: its objective term, bounds and the node its
/// output is injected at.
pub struct Coordinate<'a> {
    pub node: usize,
    pub lo: f64,
    pub hi: f64,
    pub func: Box<dyn ScalarConvex + 'a>,
}

impl<'a> Coordinate<'a> {
    pub fn new(node: usize, lo: f64, hi: f64, func: impl ScalarConvex + 'a) -> Self {
        Coordinate { node, lo, hi, func: Box::new(func) }
    }
}

/// `Σ_k f_k(v_k)` with nodal supply `q = A v`, where `A` maps each
/// coordinate to its node. Nodes without coordinates supply nothing.
#[derive(Default)]
pub struct SeparableObjective<'a> {
    pub coords: Vec<Coordinate<'a>>,
}

impl<'a> SeparableObjective<'a> {
    pub fn new() -> Self {
        SeparableObjective { coords: Vec::new() }
    }

    pub fn push(&mut self, coord: Coordinate<'a>) {
        self.coords.push(coord);
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        self.coords.iter().zip(v).map(|(c, &x)| c.func.value(x)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub minimizer: Vec<f64>,
    /// Nodal supply `A v`.
    pub supply: Vec<f64>,
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub status: SolveStatus,
    pub residuals: KktResiduals,
    pub iterations: usize,
}

impl SolveResult {
    /// `λ1 − Hᵀμ`.
    pub fn prices(&self, net: &NetworkModel) -> Vec<f64> {
        net.dual_prices(self.lambda, &self.mu)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub settings: IpmSettings,
    /// Starting point; clamped into the interior of the bounds.
    pub start: Option<Vec<f64>>,
}

pub const PRIMAL_TOL: f64 = 1e-8;
pub const STATIONARITY_TOL: f64 = 1e-7;
pub const COMPLEMENTARITY_TOL: f64 = 1e-8;

/// Minimizes a separable convex objective subject to `1ᵀ(q − d) = 0`,
/// `H(q − d) ≤ c` and the coordinate bounds.
pub fn solve_polytope(obj: &SeparableObjective, net: &NetworkModel) -> Result<SolveResult> {
    solve_polytope_with(obj, net, &SolveOptions::default())
}

pub fn solve_polytope_with(obj: &SeparableObjective, net: &NetworkModel, opts: &SolveOptions) -> Result<SolveResult> {
    solve_with_demand(obj, net, net.demand(), opts)
}

/// As [`solve_polytope_with`] with `demand` in place of the network's own;
/// entries may be negative when part of the supply is held fixed.
pub(crate) fn solve_with_demand(
    obj: &SeparableObjective,
    net: &NetworkModel,
    demand: &[f64],
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let n = net.node_count();
    if demand.len() != n {
        return Err(Error::Shape(format!("demand has length {}, expected {n}", demand.len())));
    }
    let k = obj.len();
    for (idx, c) in obj.coords.iter().enumerate() {
        if c.node >= n {
            return Err(Error::Shape(format!("coordinate {idx} mapped to node {} of {n}", c.node)));
        }
        if c.lo.is_nan() || c.hi.is_nan() || c.lo >= c.hi {
            return Err(Error::Shape(format!("coordinate {idx} has empty bounds [{}, {}]", c.lo, c.hi)));
        }
    }
    if let Some(s) = &opts.start {
        if s.len() != k {
            return Err(Error::Shape(format!("start has length {}, expected {k}", s.len())));
        }
    }
    let total_demand: f64 = demand.iter().sum();
    let lo_sum: f64 = obj.coords.iter().map(|c| c.lo).sum();
    let hi_sum: f64 = obj.coords.iter().map(|c| c.hi).sum();
    let slack = PRIMAL_TOL * (1.0 + total_demand.abs());
    if lo_sum > total_demand + slack || hi_sum < total_demand - slack || (k == 0 && total_demand.abs() > slack) {
        return Err(Error::Infeasible);
    }

    let h_mat = net.shift_factor();
    let rows = h_mat.nrows();
    let mut g_full = DMatrix::zeros(rows, k);
    for (col, c) in obj.coords.iter().enumerate() {
        g_full.set_column(col, &h_mat.column(c.node));
    }
    let hd = h_mat * nalgebra::DVector::from_column_slice(demand);
    let h_full: Vec<f64> = (0..rows).map(|l| net.line_capacity()[l] + hd[l]).collect();

    // Opposite rows with no room between them pin the flow; they enter the
    // solver as one equality since their inequalities have no interior.
    let pinned = pinned_pairs(net);
    let dropped: Vec<bool> = (0..rows).map(|l| pinned.iter().any(|&(a, b)| a == l || b == l)).collect();
    // Rows untouched by every coordinate are constants: either vacuous or
    // violated outright.
    let mut kept = Vec::with_capacity(rows);
    for l in (0..rows).filter(|&l| !dropped[l]) {
        if g_full.row(l).iter().any(|&v| v != 0.0) {
            kept.push(l);
        } else if h_full[l] < -slack {
            return Err(Error::Infeasible);
        }
    }
    let g = g_full.select_rows(&kept);
    let h: Vec<f64> = kept.iter().map(|&l| h_full[l]).collect();
    let mut eq = DMatrix::from_element(1 + pinned.len(), k, 1.0);
    let mut eq_rhs = vec![total_demand];
    for (e, &(a, _)) in pinned.iter().enumerate() {
        eq.set_row(e + 1, &g_full.row(a));
        eq_rhs.push(h_full[a]);
    }
    let funcs: Vec<&dyn ScalarConvex> = obj.coords.iter().map(|c| c.func.as_ref() as &dyn ScalarConvex).collect();
    let lo: Vec<f64> = obj.coords.iter().map(|c| c.lo).collect();
    let hi: Vec<f64> = obj.coords.iter().map(|c| c.hi).collect();

    if k == 0 {
        // Zero demand with nothing to dispatch; only the network must admit q = 0.
        let q = vec![0.0; n];
        if !net.injection_feasible(&sub(&q, demand), PRIMAL_TOL)? {
            return Err(Error::Infeasible);
        }
        return Ok(SolveResult {
            minimizer: Vec::new(),
            supply: q,
            lambda: 0.0,
            mu: vec![0.0; rows],
            status: SolveStatus::Optimal,
            residuals: KktResiduals { primal: 0.0, stationarity: 0.0, complementarity: 0.0 },
            iterations: 0,
        });
    }

    let problem = IpmProblem {
        funcs: &funcs,
        lo: &lo,
        hi: &hi,
        eq: &eq,
        eq_rhs: &eq_rhs,
        g: &g,
        h: &h,
        start: opts.start.as_deref(),
    };
    let out = problem.solve(&opts.settings);
    let supply = aggregate(obj, &out.v, n);
    let mut mu = vec![0.0; rows];
    for (&l, &z) in kept.iter().zip(&out.z) {
        mu[l] = z.max(0.0);
    }
    for (&(a, b), &y) in pinned.iter().zip(&out.y[1..]) {
        mu[a] = (-y).max(0.0);
        mu[b] = y.max(0.0);
    }
    let lambda = out.y[0];
    let residuals = kkt_residuals(obj, net, demand, &out.v, &supply, lambda, &mu);
    let within = residuals.primal <= PRIMAL_TOL
        && residuals.stationarity <= STATIONARITY_TOL
        && residuals.complementarity <= COMPLEMENTARITY_TOL;
    let status = if within {
        SolveStatus::Optimal
    } else if phase_one_infeasible(&problem, &opts.settings) {
        return Err(Error::Infeasible);
    } else {
        SolveStatus::MaxIter
    };
    Ok(SolveResult {
        minimizer: out.v,
        supply,
        lambda,
        mu,
        status,
        residuals,
        iterations: out.iterations,
    })
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn aggregate(obj: &SeparableObjective, v: &[f64], n: usize) -> Vec<f64> {
    let mut q = vec![0.0; n];
    for (c, &x) in obj.coords.iter().zip(v) {
        q[c.node] += x;
    }
    q
}

fn kkt_residuals(
    obj: &SeparableObjective,
    net: &NetworkModel,
    demand: &[f64],
    v: &[f64],
    q: &[f64],
    lambda: f64,
    mu: &[f64],
) -> KktResiduals {
    let y = sub(q, demand);
    let flows = net.shift_factor() * nalgebra::DVector::from_column_slice(&y);
    let c = net.line_capacity();
    let mut primal = y.iter().sum::<f64>().abs();
    let mut complementarity: f64 = 0.0;
    for l in 0..flows.len() {
        let slack = flows[l] - c[l];
        primal = primal.max(slack);
        complementarity = complementarity.max((mu[l] * slack).abs());
    }
    let prices = net.dual_prices(lambda, mu);
    let mut stationarity: f64 = 0.0;
    for (coord, &x) in obj.coords.iter().zip(v) {
        primal = primal.max(coord.lo - x).max(x - coord.hi);
        let (left, right) = coord.func.derivatives(x);
        let p = prices[coord.node];
        let scale = 1.0 + left.abs().min(right.abs());
        let span = coord.hi - coord.lo;
        let tol_bound = 1e-7 * (1.0 + span.min(1.0 + x.abs()));
        // A price below the left derivative is admissible at the lower bound,
        // above the right derivative at the upper bound.
        let below = if x - coord.lo <= tol_bound { 0.0 } else { (left - p).max(0.0) };
        let above = if coord.hi - x <= tol_bound { 0.0 } else { (p - right).max(0.0) };
        stationarity = stationarity.max(below.max(above) / scale);
    }
    KktResiduals { primal, stationarity, complementarity }
}

/// Solves `min t` over the same constraints with the network rows relaxed
/// by `t ≥ 0`; a positive optimum certifies infeasibility.
fn phase_one_infeasible(problem: &IpmProblem, settings: &IpmSettings) -> bool {
    let k = problem.funcs.len();
    let zero = Linear(0.0);
    let one = Linear(1.0);
    let mut funcs: Vec<&dyn ScalarConvex> = vec![&zero; k];
    funcs.push(&one);
    let mut lo = problem.lo.to_vec();
    lo.push(0.0);
    let mut hi = problem.hi.to_vec();
    hi.push(f64::INFINITY);
    let eq = problem.eq.clone().insert_column(k, 0.0);
    let rows = problem.g.nrows();
    let mut g = DMatrix::zeros(rows, k + 1);
    g.view_mut((0, 0), (rows, k)).copy_from(problem.g);
    for l in 0..rows {
        g[(l, k)] = -1.0;
    }
    let relaxed = IpmProblem {
        funcs: &funcs,
        lo: &lo,
        hi: &hi,
        eq: &eq,
        eq_rhs: problem.eq_rhs,
        g: &g,
        h: problem.h,
        start: None,
    };
    let out = relaxed.solve(settings);
    out.v[k] > 1e-7 * (1.0 + problem.eq_rhs[0].abs())
}

/// Pairs of shift-factor rows `(a, b)` with `H_b = −H_a` and `c_a + c_b`
/// within rounding of zero.
fn pinned_pairs(net: &NetworkModel) -> Vec<(usize, usize)> {
    let h = net.shift_factor();
    let c = net.line_capacity();
    let scale = 1.0 + c.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut used = vec![false; h.nrows()];
    let mut pairs = Vec::new();
    for a in 0..h.nrows() {
        if used[a] {
            continue;
        }
        for b in a + 1..h.nrows() {
            if used[b] || (c[a] + c[b]).abs() > 1e-12 * scale {
                continue;
            }
            let opposite = (0..h.ncols()).all(|i| (h[(a, i)] + h[(b, i)]).abs() <= 1e-12);
            let nonzero = (0..h.ncols()).any(|i| h[(a, i)].abs() > 1e-12);
            if opposite && nonzero {
                used[a] = true;
                used[b] = true;
                pairs.push((a, b));
                break;
            }
        }
    }
    pairs
}
