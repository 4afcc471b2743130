//! Transmission network under the DC approximation and its injection
//! polytope `P = { y : 1ᵀy = 0, H y ≤ c }`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{solve_polytope, Coordinate, Linear, SeparableObjective};
use crate::error::{Error, Result};

/// A transmission line between two nodes (0-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    pub capacity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reactance: Option<f64>,
}

impl LineSpec {
    pub fn new(from: usize, to: usize, capacity: f64) -> Self {
        LineSpec { from, to, capacity, reactance: None }
    }

    pub fn with_reactance(mut self, x: f64) -> Self {
        self.reactance = Some(x);
        self
    }
}

/// Shift factors `H = [F; −F]` (rows `0..m` carry flow in the line's
/// reference direction, rows `m..2m` the reverse), capacities per row and
/// nodal demand.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    shift_factor: DMatrix<f64>,
    line_capacity: Vec<f64>,
    demand: Vec<f64>,
}

fn check_nonnegative(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        Some(k) => Err(Error::InvalidNetwork(format!("{name}[{k}] must be finite and nonnegative"))),
        None => Ok(()),
    }
}

impl NetworkModel {
    /// Builds the PTDF matrix of the DC model from line data. Missing
    /// reactances default to 1; either all lines carry one or none does.
    pub fn from_lines(lines: &[LineSpec], demand: Vec<f64>, slack: usize) -> Result<Self> {
        let n = demand.len();
        if n == 0 {
            return Err(Error::InvalidNetwork("network has no nodes".into()));
        }
        if slack >= n {
            return Err(Error::InvalidNetwork(format!("slack node {slack} out of range")));
        }
        check_nonnegative("demand", &demand)?;
        let with_x = lines.iter().filter(|l| l.reactance.is_some()).count();
        if with_x != 0 && with_x != lines.len() {
            return Err(Error::InvalidNetwork("reactance given for some lines only".into()));
        }
        for (k, l) in lines.iter().enumerate() {
            if l.from >= n || l.to >= n || l.from == l.to {
                return Err(Error::InvalidNetwork(format!("line {k} has invalid endpoints")));
            }
            if !(l.capacity.is_finite() && l.capacity >= 0.0) {
                return Err(Error::InvalidNetwork(format!("line {k} capacity must be finite and nonnegative")));
            }
            if let Some(x) = l.reactance {
                if !(x.is_finite() && x > 0.0) {
                    return Err(Error::InvalidReactance(k));
                }
            }
        }
        if !connected(n, lines) {
            return Err(Error::DisconnectedNetwork);
        }

        let m = lines.len();
        let mut incidence = DMatrix::zeros(m, n);
        let mut susceptance = DVector::zeros(m);
        for (k, l) in lines.iter().enumerate() {
            incidence[(k, l.from)] = 1.0;
            incidence[(k, l.to)] = -1.0;
            susceptance[k] = 1.0 / l.reactance.unwrap_or(1.0);
        }
        let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
        let reduced = incidence.select_columns(&keep);
        let weighted = DMatrix::from_diagonal(&susceptance) * &reduced;
        let b_reduced = reduced.transpose() * &weighted;
        let inv = b_reduced
            .try_inverse()
            .ok_or_else(|| Error::InvalidNetwork("singular susceptance matrix".into()))?;
        let f_reduced = weighted * inv;
        let mut flow = DMatrix::zeros(m, n);
        for (col, &i) in keep.iter().enumerate() {
            flow.set_column(i, &f_reduced.column(col));
        }
        let capacity: Vec<f64> = lines.iter().map(|l| l.capacity).collect();
        Self::from_flow_matrix(&flow, &capacity, &capacity, demand)
    }

    /// `H = [F; −F]` with separate capacities per direction.
    pub fn from_flow_matrix(flow: &DMatrix<f64>, forward: &[f64], backward: &[f64], demand: Vec<f64>) -> Result<Self> {
        let m = flow.nrows();
        if forward.len() != m || backward.len() != m {
            return Err(Error::Shape("capacity length must equal line count".into()));
        }
        let mut h = DMatrix::zeros(2 * m, flow.ncols());
        h.view_mut((0, 0), (m, flow.ncols())).copy_from(flow);
        h.view_mut((m, 0), (m, flow.ncols())).copy_from(&(-flow));
        let c = forward.iter().chain(backward).copied().collect();
        Self::from_shift_factors(h, c, demand)
    }

    /// Takes `H` (2m × n) and `c` (2m) as given.
    pub fn from_shift_factors(h: DMatrix<f64>, c: Vec<f64>, demand: Vec<f64>) -> Result<Self> {
        let n = demand.len();
        if n == 0 {
            return Err(Error::InvalidNetwork("network has no nodes".into()));
        }
        if h.ncols() != n {
            return Err(Error::Shape(format!("H has {} columns for {n} nodes", h.ncols())));
        }
        if h.nrows() % 2 != 0 {
            return Err(Error::Shape(format!("H has {} rows; expected one per line direction", h.nrows())));
        }
        if c.len() != h.nrows() {
            return Err(Error::Shape(format!("c has length {} for {} rows of H", c.len(), h.nrows())));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidNetwork("H must be finite".into()));
        }
        check_nonnegative("c", &c)?;
        check_nonnegative("demand", &demand)?;
        Ok(NetworkModel { shift_factor: h, line_capacity: c, demand })
    }

    /// One node, no lines.
    pub fn single_node(demand: f64) -> Result<Self> {
        Self::from_shift_factors(DMatrix::zeros(0, 1), Vec::new(), vec![demand])
    }

    pub fn node_count(&self) -> usize {
        self.demand.len()
    }

    pub fn line_count(&self) -> usize {
        self.shift_factor.nrows() / 2
    }

    pub fn shift_factor(&self) -> &DMatrix<f64> {
        &self.shift_factor
    }

    pub fn line_capacity(&self) -> &[f64] {
        &self.line_capacity
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn total_demand(&self) -> f64 {
        self.demand.iter().sum()
    }

    pub fn with_demand(&self, demand: Vec<f64>) -> Result<Self> {
        Self::from_shift_factors(self.shift_factor.clone(), self.line_capacity.clone(), demand)
    }

    pub fn with_line_capacity(&self, c: Vec<f64>) -> Result<Self> {
        Self::from_shift_factors(self.shift_factor.clone(), c, self.demand.clone())
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.node_count() {
            return Err(Error::Shape(format!("vector has length {}, expected {}", y.len(), self.node_count())));
        }
        Ok(())
    }

    /// `H y`, one entry per line direction.
    pub fn flows(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        Ok((&self.shift_factor * DVector::from_column_slice(y)).as_slice().to_vec())
    }

    /// `λ1 − Hᵀμ`.
    pub fn dual_prices(&self, lambda: f64, mu: &[f64]) -> Vec<f64> {
        let hm = self.shift_factor.tr_mul(&DVector::from_column_slice(mu));
        hm.iter().map(|v| lambda - v).collect()
    }

    /// `|1ᵀy| ≤ tol` and `H y ≤ c + tol`.
    pub fn injection_feasible(&self, y: &[f64], tol: f64) -> Result<bool> {
        let flows = self.flows(y)?;
        let balanced = y.iter().sum::<f64>().abs() <= tol;
        Ok(balanced && flows.iter().zip(&self.line_capacity).all(|(f, c)| *f <= c + tol))
    }

    /// `sup { q_i : q ≥ 0, q − d ∈ P }`, solved as a linear program.
    pub fn max_nodal_supply(&self, i: usize) -> Result<f64> {
        let n = self.node_count();
        if i >= n {
            return Err(Error::Shape(format!("node {i} out of range")));
        }
        let total = self.total_demand();
        if n == 1 {
            return Ok(total);
        }
        let mut obj = SeparableObjective::new();
        for k in 0..n {
            let slope = if k == i { -1.0 } else { 0.0 };
            obj.push(Coordinate::new(k, 0.0, total + 1.0, Linear(slope)));
        }
        let sol = solve_polytope(&obj, self).map_err(|e| match e {
            Error::Infeasible => Error::InfeasibleNetwork,
            other => other,
        })?;
        Ok(sol.minimizer[i].clamp(self.demand[i], total))
    }
}

fn connected(n: usize, lines: &[LineSpec]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for l in lines {
        adj[l.from].push(l.to);
        adj[l.to].push(l.from);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
