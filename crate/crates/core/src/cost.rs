//! Production costs, supply functions and the cost transforms built on them.
//!
//! Every cost is stored as a list of convex quadratic pieces starting at the
//! origin; the linear and quadratic families are the one-piece special cases.
//! A piece starting at `b` contributes marginal cost `beta + 2 alpha (x - b)`
//! until the next breakpoint, and the marginal cost may jump upward at a
//! breakpoint. Costs vanish for `x <= 0`.

use serde::{Deserialize, Serialize};

use crate::engine::ScalarConvex;
use crate::error::{Error, Result};

/// One quadratic piece of a cost, as written in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPiece {
    pub start: f64,
    #[serde(default)]
    pub alpha: f64,
    pub beta: f64,
}

/// Serialized form of a cost function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CostInput {
    Linear { beta: f64 },
    Quadratic { alpha: f64, beta: f64 },
    Pwq { pieces: Vec<QuadraticPiece> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Piece {
    start: f64,
    alpha: f64,
    beta: f64,
    // C(start) and the running integral of C up to start.
    value0: f64,
    integral0: f64,
}

impl Piece {
    fn marginal(&self, x: f64) -> f64 {
        self.beta + 2.0 * self.alpha * (x - self.start)
    }

    fn value(&self, x: f64) -> f64 {
        let u = x - self.start;
        self.value0 + u * (self.beta + self.alpha * u)
    }

    fn integral(&self, x: f64) -> f64 {
        let u = x - self.start;
        self.integral0 + u * (self.value0 + u * (self.beta / 2.0 + self.alpha * u / 3.0))
    }
}

/// A convex production cost satisfying `C(x) = 0` for `x <= 0` and
/// `C(x) > 0` for `x > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CostInput", into = "CostInput")]
pub struct CostSpec {
    input: CostInput,
    pieces: Vec<Piece>,
}

/// Result of [`CostSpec::eval`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEval {
    pub value: f64,
    pub left_derivative: f64,
    pub right_derivative: f64,
    /// Running integral of the cost from 0 to `x`.
    pub integral: f64,
}

/// Value and one-sided derivatives of a modified cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModifiedEval {
    pub value: f64,
    pub left_derivative: f64,
    pub right_derivative: f64,
}

impl TryFrom<CostInput> for CostSpec {
    type Error = Error;

    fn try_from(input: CostInput) -> Result<Self> {
        let raw = match &input {
            CostInput::Linear { beta } => vec![QuadraticPiece { start: 0.0, alpha: 0.0, beta: *beta }],
            CostInput::Quadratic { alpha, beta } => {
                vec![QuadraticPiece { start: 0.0, alpha: *alpha, beta: *beta }]
            }
            CostInput::Pwq { pieces } => pieces.clone(),
        };
        if raw.is_empty() {
            return Err(Error::InvalidCost("no pieces".into()));
        }
        if raw[0].start != 0.0 {
            return Err(Error::InvalidCost("first piece must start at 0".into()));
        }
        let mut pieces: Vec<Piece> = Vec::with_capacity(raw.len());
        for (k, p) in raw.iter().enumerate() {
            if !(p.alpha.is_finite() && p.beta.is_finite() && p.start.is_finite()) {
                return Err(Error::InvalidCost(format!("piece {k} has non-finite parameters")));
            }
            if p.alpha < 0.0 || p.beta < 0.0 {
                return Err(Error::InvalidCost(format!("piece {k} has negative coefficients")));
            }
            let (value0, integral0) = match pieces.last() {
                None => (0.0, 0.0),
                Some(prev) => {
                    if p.start <= prev.start {
                        return Err(Error::InvalidCost("breakpoints must increase".into()));
                    }
                    let end_marginal = prev.marginal(p.start);
                    if p.beta < end_marginal - 1e-12 * end_marginal.abs().max(1.0) {
                        return Err(Error::InvalidCost(format!(
                            "marginal cost decreases at breakpoint {}",
                            p.start
                        )));
                    }
                    (prev.value(p.start), prev.integral(p.start))
                }
            };
            pieces.push(Piece { start: p.start, alpha: p.alpha, beta: p.beta, value0, integral0 });
        }
        if pieces[0].alpha <= 0.0 && pieces[0].beta <= 0.0 {
            return Err(Error::InvalidCost("cost must be strictly positive for x > 0".into()));
        }
        Ok(CostSpec { input, pieces })
    }
}

impl From<CostSpec> for CostInput {
    fn from(c: CostSpec) -> Self {
        c.input
    }
}

impl CostSpec {
    pub fn linear(beta: f64) -> Result<Self> {
        CostInput::Linear { beta }.try_into()
    }

    pub fn quadratic(alpha: f64, beta: f64) -> Result<Self> {
        CostInput::Quadratic { alpha, beta }.try_into()
    }

    pub fn piecewise(pieces: Vec<QuadraticPiece>) -> Result<Self> {
        CostInput::Pwq { pieces }.try_into()
    }

    pub fn input(&self) -> &CostInput {
        &self.input
    }

    /// Breakpoints strictly inside `(0, upto)` at which the marginal cost may jump.
    pub fn breakpoints(&self, upto: f64) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.start).filter(|&b| b < upto).collect()
    }

    /// True when the marginal cost is continuous on `(0, ∞)`.
    pub fn is_smooth(&self) -> bool {
        self.pieces.windows(2).all(|w| (w[0].marginal(w[1].start) - w[1].beta).abs() <= 1e-14)
    }

    fn piece_index(&self, x: f64) -> usize {
        self.pieces.partition_point(|p| p.start <= x).saturating_sub(1)
    }

    pub fn value(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.pieces[self.piece_index(x)].value(x)
    }

    pub fn integral(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.pieces[self.piece_index(x)].integral(x)
    }

    /// One-sided derivatives `(∂⁻C(x), ∂⁺C(x))`.
    pub fn derivatives(&self, x: f64) -> (f64, f64) {
        if x < 0.0 {
            return (0.0, 0.0);
        }
        if x == 0.0 {
            return (0.0, self.pieces[0].beta);
        }
        let k = self.piece_index(x);
        let right = self.pieces[k].marginal(x);
        let left = if k > 0 && x == self.pieces[k].start {
            self.pieces[k - 1].marginal(x)
        } else {
            right
        };
        (left, right)
    }

    /// Right second derivative.
    pub fn second_derivative(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        2.0 * self.pieces[self.piece_index(x)].alpha
    }

    pub fn eval(&self, x: f64) -> CostEval {
        let (left_derivative, right_derivative) = self.derivatives(x);
        CostEval { value: self.value(x), left_derivative, right_derivative, integral: self.integral(x) }
    }

    /// Modified cost `(1 + x/R) C(x) - (1/R) ∫₀ˣ C`, where `R` is the
    /// residual capacity of the producer's rivals at the node minus the
    /// nodal supply.
    pub fn modified(&self, x: f64, residual: f64) -> Result<ModifiedEval> {
        if !(residual > 0.0) {
            return Err(Error::PivotalRegime);
        }
        Ok(self.modified_unchecked(x, residual))
    }

    pub(crate) fn modified_unchecked(&self, x: f64, residual: f64) -> ModifiedEval {
        if x <= 0.0 {
            let (l, r) = self.derivatives(x);
            return ModifiedEval { value: 0.0, left_derivative: l, right_derivative: r };
        }
        let e = self.eval(x);
        let factor = 1.0 + x / residual;
        ModifiedEval {
            value: factor * e.value - e.integral / residual,
            left_derivative: e.left_derivative * factor,
            right_derivative: e.right_derivative * factor,
        }
    }

    /// Right second derivative of the modified cost in `x`.
    pub(crate) fn modified_second(&self, x: f64, residual: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let (_, d1) = self.derivatives(x);
        self.second_derivative(x) * (1.0 + x / residual) + d1 / residual
    }
}

impl ScalarConvex for CostSpec {
    fn value(&self, x: f64) -> f64 {
        CostSpec::value(self, x)
    }
    fn derivatives(&self, x: f64) -> (f64, f64) {
        CostSpec::derivatives(self, x)
    }
    fn second_derivative(&self, x: f64) -> f64 {
        CostSpec::second_derivative(self, x)
    }
}

/// A cost with its modification at fixed residual `R > 0`.
#[derive(Debug, Clone, Copy)]
pub struct ModifiedCost<'a> {
    pub cost: &'a CostSpec,
    pub residual: f64,
}

impl<'a> ModifiedCost<'a> {
    pub fn new(cost: &'a CostSpec, residual: f64) -> Result<Self> {
        if !(residual > 0.0) {
            return Err(Error::PivotalRegime);
        }
        Ok(ModifiedCost { cost, residual })
    }
}

impl ScalarConvex for ModifiedCost<'_> {
    fn value(&self, x: f64) -> f64 {
        self.cost.modified_unchecked(x, self.residual).value
    }
    fn derivatives(&self, x: f64) -> (f64, f64) {
        let m = self.cost.modified_unchecked(x, self.residual);
        (m.left_derivative, m.right_derivative)
    }
    fn second_derivative(&self, x: f64) -> f64 {
        self.cost.modified_second(x, self.residual)
    }
}

/// A producer: node location, capacity and true cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Producer {
    pub node: usize,
    pub capacity: f64,
    pub cost: CostSpec,
}

impl Producer {
    pub fn new(node: usize, capacity: f64, cost: CostSpec) -> Self {
        Producer { node, capacity, cost }
    }

    pub fn linear(node: usize, capacity: f64, beta: f64) -> Result<Self> {
        Ok(Producer { node, capacity, cost: CostSpec::linear(beta)? })
    }

    /// `S(p; θ) = X − θ/p`. Negative values are returned as is.
    pub fn supply(&self, theta: f64, price: f64) -> Result<f64> {
        if !(price > 0.0) {
            return Err(Error::NonpositivePrice);
        }
        Ok(self.capacity - theta / price)
    }

    /// Reported cost `θ log(X / (X − x))`, the integral of the inverse supply function.
    pub fn reported_cost(&self, theta: f64, x: f64) -> Result<f64> {
        if x >= self.capacity {
            return Err(Error::CapacityExceeded);
        }
        if theta == 0.0 {
            return Ok(0.0);
        }
        Ok(theta * (self.capacity / (self.capacity - x)).ln())
    }
}

/// Strategy profile of scalar supply-function bids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BidProfile(Vec<f64>);

impl BidProfile {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if let Some(j) = theta.iter().position(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidProducer(j, "bid must be finite and nonnegative".into()));
        }
        Ok(BidProfile(theta))
    }

    pub fn zeros(n: usize) -> Self {
        BidProfile(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Copy with `theta[j]` replaced.
    pub fn with(&self, j: usize, theta: f64) -> Self {
        let mut v = self.0.clone();
        v[j] = theta.max(0.0);
        BidProfile(v)
    }
}

impl std::ops::Index<usize> for BidProfile {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}
