//! Dense primal-dual interior point method for
//!
//! ```text
//!     minimize    Σ_k f_k(v_k)
//!     subject to  E v = b
//!                 G v ≤ h
//!                 lo ≤ v ≤ hi
//! ```
//!
//! with each `f_k` convex and twice differentiable on `(lo_k, hi_k)`.
//! Mehrotra predictor-corrector steps on the reduced KKT system, with a
//! backtracking safeguard on the residual norm for nonlinear terms.

use nalgebra::{DMatrix, DVector};

use super::ScalarConvex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmSettings {
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_gap: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        IpmSettings { max_iter: 200, tol_primal: 1e-11, tol_dual: 1e-10, tol_gap: 1e-12 }
    }
}

pub(crate) struct IpmProblem<'p, 'f> {
    pub funcs: &'p [&'p (dyn ScalarConvex + 'f)],
    pub lo: &'p [f64],
    pub hi: &'p [f64],
    pub eq: &'p DMatrix<f64>,
    pub eq_rhs: &'p [f64],
    pub g: &'p DMatrix<f64>,
    pub h: &'p [f64],
    pub start: Option<&'p [f64]>,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOutput {
    pub v: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub iterations: usize,
}

struct State {
    v: DVector<f64>,
    s: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    zl: DVector<f64>,
    zu: DVector<f64>,
}

struct Residuals {
    rd: DVector<f64>,
    re: DVector<f64>,
    rg: DVector<f64>,
    mu: f64,
}

impl Residuals {
    fn merit(&self) -> f64 {
        self.rd.amax() + amax(&self.re) + amax(&self.rg) + self.mu
    }
}

struct Direction {
    v: DVector<f64>,
    s: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    zl: DVector<f64>,
    zu: DVector<f64>,
}

fn amax(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

const REGULARIZATION: f64 = 1e-13;

impl<'p, 'f> IpmProblem<'p, 'f> {
    fn nvars(&self) -> usize {
        self.funcs.len()
    }

    fn has_lo(&self, k: usize) -> bool {
        self.lo[k].is_finite()
    }

    fn has_hi(&self, k: usize) -> bool {
        self.hi[k].is_finite()
    }

    fn complement_count(&self) -> usize {
        let bounds: usize = (0..self.nvars()).map(|k| self.has_lo(k) as usize + self.has_hi(k) as usize).sum();
        self.h.len() + bounds
    }

    fn initial_state(&self) -> State {
        let n = self.nvars();
        let v = DVector::from_iterator(
            n,
            (0..n).map(|k| {
                let default = match (self.has_lo(k), self.has_hi(k)) {
                    (true, true) => 0.5 * (self.lo[k] + self.hi[k]),
                    (true, false) => self.lo[k] + 1.0,
                    (false, true) => self.hi[k] - 1.0,
                    (false, false) => 0.0,
                };
                match self.start {
                    Some(x0) => {
                        let margin = if self.has_lo(k) && self.has_hi(k) {
                            1e-3 * (self.hi[k] - self.lo[k])
                        } else {
                            1e-3
                        };
                        x0[k].clamp(self.lo[k] + margin, self.hi[k] - margin)
                    }
                    None => default,
                }
            }),
        );
        let mut v = v;
        if self.start.is_none() && self.eq.nrows() > 0 {
            // Move half-bounded coordinates along the unbounded direction
            // to meet the balance row; starting far from it can leave the
            // merit with no useful descent direction.
            let row = self.eq.row(0);
            let gap = self.eq_rhs[0] - row.dot(&v.transpose());
            let free: Vec<usize> = (0..n)
                .filter(|&k| row[k] != 0.0 && if gap * row[k] < 0.0 { !self.has_lo(k) } else { !self.has_hi(k) })
                .collect();
            if !free.is_empty() {
                let norm: f64 = free.iter().map(|&k| row[k] * row[k]).sum();
                for &k in &free {
                    v[k] += gap * row[k] / norm;
                }
            }
        }
        let gv = self.g * &v;
        let s = DVector::from_iterator(self.h.len(), (0..self.h.len()).map(|l| (self.h[l] - gv[l]).max(1.0)));
        let ones_z = DVector::from_element(self.h.len(), 1.0);
        let zl = DVector::from_iterator(n, (0..n).map(|k| if self.has_lo(k) { 1.0 } else { 0.0 }));
        let zu = DVector::from_iterator(n, (0..n).map(|k| if self.has_hi(k) { 1.0 } else { 0.0 }));
        State { v, s, y: DVector::zeros(self.eq.nrows()), z: ones_z, zl, zu }
    }

    fn gaps(&self, st: &State) -> (DVector<f64>, DVector<f64>) {
        let n = self.nvars();
        let wl = DVector::from_iterator(n, (0..n).map(|k| if self.has_lo(k) { st.v[k] - self.lo[k] } else { 1.0 }));
        let wu = DVector::from_iterator(n, (0..n).map(|k| if self.has_hi(k) { self.hi[k] - st.v[k] } else { 1.0 }));
        (wl, wu)
    }

    fn residuals(&self, st: &State) -> Option<Residuals> {
        let n = self.nvars();
        let mut rd = DVector::zeros(n);
        for k in 0..n {
            let (d, _) = self.funcs[k].derivatives(st.v[k]);
            if !d.is_finite() {
                return None;
            }
            rd[k] = d - st.zl[k] + st.zu[k];
        }
        rd += self.g.tr_mul(&st.z);
        rd -= self.eq.tr_mul(&st.y);
        let mut re = self.eq * &st.v;
        for (e, b) in self.eq_rhs.iter().enumerate() {
            re[e] -= b;
        }
        let mut rg = self.g * &st.v + &st.s;
        for l in 0..self.h.len() {
            rg[l] -= self.h[l];
        }
        let (wl, wu) = self.gaps(st);
        let mut total = st.s.dot(&st.z);
        for k in 0..n {
            if self.has_lo(k) {
                total += wl[k] * st.zl[k];
            }
            if self.has_hi(k) {
                total += wu[k] * st.zu[k];
            }
        }
        let count = self.complement_count().max(1);
        Some(Residuals { rd, re, rg, mu: total / count as f64 })
    }

    /// Newton direction for target complementarity `tau`, with optional
    /// second-order correction terms from an affine direction.
    fn direction(
        &self,
        st: &State,
        r: &Residuals,
        lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        tau: f64,
        corr: Option<&Direction>,
    ) -> Option<Direction> {
        let n = self.nvars();
        let m = self.h.len();
        let (wl, wu) = self.gaps(st);
        let mut rs = DVector::zeros(m);
        for l in 0..m {
            rs[l] = st.s[l] * st.z[l] - tau;
            if let Some(c) = corr {
                rs[l] += c.s[l] * c.z[l];
            }
        }
        let mut rl = DVector::zeros(n);
        let mut ru = DVector::zeros(n);
        for k in 0..n {
            if self.has_lo(k) {
                rl[k] = wl[k] * st.zl[k] - tau;
                if let Some(c) = corr {
                    rl[k] += c.v[k] * c.zl[k];
                }
            }
            if self.has_hi(k) {
                ru[k] = wu[k] * st.zu[k] - tau;
                if let Some(c) = corr {
                    ru[k] -= c.v[k] * c.zu[k];
                }
            }
        }
        // rhs1 = -rd - Gᵀ((-rs + z∘rg)/s) - rl/wl + ru/wu
        let mut tmp = DVector::zeros(m);
        for l in 0..m {
            tmp[l] = (-rs[l] + st.z[l] * r.rg[l]) / st.s[l];
        }
        let p = self.eq.nrows();
        let mut rhs = DVector::zeros(n + p);
        let gt = self.g.tr_mul(&tmp);
        for k in 0..n {
            let mut val = -r.rd[k] - gt[k];
            if self.has_lo(k) {
                val -= rl[k] / wl[k];
            }
            if self.has_hi(k) {
                val += ru[k] / wu[k];
            }
            rhs[k] = val;
        }
        for e in 0..p {
            rhs[n + e] = r.re[e];
        }
        let sol = lu.solve(&rhs)?;
        let dv = sol.rows(0, n).into_owned();
        let dy = sol.rows(n, p).into_owned();
        let ds = -&r.rg - self.g * &dv;
        let mut dz = DVector::zeros(m);
        for l in 0..m {
            dz[l] = (-rs[l] - st.z[l] * ds[l]) / st.s[l];
        }
        let mut dzl = DVector::zeros(n);
        let mut dzu = DVector::zeros(n);
        for k in 0..n {
            if self.has_lo(k) {
                dzl[k] = (-rl[k] - st.zl[k] * dv[k]) / wl[k];
            }
            if self.has_hi(k) {
                dzu[k] = (-ru[k] + st.zu[k] * dv[k]) / wu[k];
            }
        }
        Some(Direction { v: dv, s: ds, y: dy, z: dz, zl: dzl, zu: dzu })
    }

    fn max_step(&self, st: &State, d: &Direction) -> (f64, f64) {
        let (wl, wu) = self.gaps(st);
        let mut ap: f64 = 1.0;
        let mut ad: f64 = 1.0;
        let ratio = |x: f64, dx: f64, a: &mut f64| {
            if dx < 0.0 {
                *a = a.min(-x / dx);
            }
        };
        for l in 0..self.h.len() {
            ratio(st.s[l], d.s[l], &mut ap);
            ratio(st.z[l], d.z[l], &mut ad);
        }
        for k in 0..self.nvars() {
            if self.has_lo(k) {
                ratio(wl[k], d.v[k], &mut ap);
                ratio(st.zl[k], d.zl[k], &mut ad);
            }
            if self.has_hi(k) {
                ratio(wu[k], -d.v[k], &mut ap);
                ratio(st.zu[k], d.zu[k], &mut ad);
            }
        }
        (ap, ad)
    }

    fn step(st: &State, d: &Direction, alpha: f64) -> State {
        State {
            v: &st.v + alpha * &d.v,
            s: &st.s + alpha * &d.s,
            y: &st.y + alpha * &d.y,
            z: &st.z + alpha * &d.z,
            zl: &st.zl + alpha * &d.zl,
            zu: &st.zu + alpha * &d.zu,
        }
    }

    fn kkt_matrix(&self, st: &State, reg: f64) -> DMatrix<f64> {
        let n = self.nvars();
        let m = self.h.len();
        let (wl, wu) = self.gaps(st);
        let mut scaled = self.g.clone();
        for l in 0..m {
            let w = (st.z[l] / st.s[l]).sqrt();
            for k in 0..n {
                scaled[(l, k)] *= w;
            }
        }
        let gtg = scaled.tr_mul(&scaled);
        let p = self.eq.nrows();
        let mut kkt = DMatrix::zeros(n + p, n + p);
        kkt.view_mut((0, 0), (n, n)).copy_from(&gtg);
        for k in 0..n {
            let mut diag = self.funcs[k].second_derivative(st.v[k]).max(0.0) + reg;
            if self.has_lo(k) {
                diag += st.zl[k] / wl[k];
            }
            if self.has_hi(k) {
                diag += st.zu[k] / wu[k];
            }
            kkt[(k, k)] += diag;
            for e in 0..p {
                kkt[(k, n + e)] = -self.eq[(e, k)];
                kkt[(n + e, k)] = -self.eq[(e, k)];
            }
        }
        kkt
    }

    pub(crate) fn solve(&self, settings: &IpmSettings) -> IpmOutput {
        let n = self.nvars();
        let mut st = self.initial_state();
        let mut iterations = 0;
        let Some(mut res) = self.residuals(&st) else {
            return IpmOutput {
                v: st.v.as_slice().to_vec(),
                y: st.y.as_slice().to_vec(),
                z: st.z.as_slice().to_vec(),
                iterations,
            };
        };
        let scale = 1.0 + self.eq_rhs.iter().chain(self.h).fold(0.0f64, |a, b| a.max(b.abs()));
        while iterations < settings.max_iter {
            let grad_scale = 1.0
                + (0..n)
                    .map(|k| self.funcs[k].derivatives(st.v[k]).0.abs())
                    .filter(|d| d.is_finite())
                    .fold(0.0, f64::max);
            if res.rd.amax() <= settings.tol_dual * grad_scale
                && amax(&res.re) <= settings.tol_primal * scale
                && amax(&res.rg) <= settings.tol_primal * scale
                && res.mu <= settings.tol_gap
            {
                break;
            }
            iterations += 1;
            // Near the solution the barrier blocks become badly scaled; retry
            // with stronger diagonal regularization when the factorization fails.
            let mut reg = REGULARIZATION;
            let factored = loop {
                let lu = self.kkt_matrix(&st, reg).lu();
                if let Some(aff) = self.direction(&st, &res, &lu, 0.0, None) {
                    if aff.v.iter().all(|v| v.is_finite()) {
                        break Some((lu, aff));
                    }
                }
                reg *= 100.0;
                if reg > 1e-3 {
                    break None;
                }
            };
            let Some((lu, aff)) = factored else { break };
            let (ap, ad) = self.max_step(&st, &aff);
            let a_aff = ap.min(ad).min(1.0);
            let trial = Self::step(&st, &aff, a_aff);
            let mu_aff = match self.residuals(&trial) {
                Some(r) => r.mu.max(0.0),
                None => res.mu,
            };
            let sigma = (mu_aff / res.mu.max(1e-300)).powi(3).clamp(0.0, 1.0);
            let old = res.merit();
            let mut accepted = None;
            // The corrector can point uphill for the merit; a centered Newton
            // step cannot, so it serves as the fallback.
            for corr in [Some(&aff), None] {
                let Some(dir) = self.direction(&st, &res, &lu, sigma * res.mu, corr) else { continue };
                let (ap, ad) = self.max_step(&st, &dir);
                let mut alpha = (0.995 * ap.min(ad)).min(1.0);
                for _ in 0..50 {
                    let cand = Self::step(&st, &dir, alpha);
                    if let Some(r) = self.residuals(&cand) {
                        if r.merit() <= (1.0 - 1e-4 * alpha) * old {
                            accepted = Some((cand, r));
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if accepted.is_some() {
                    break;
                }
            }
            match accepted {
                Some((cand, r)) => {
                    st = cand;
                    res = r;
                }
                None => break,
            }
        }
        IpmOutput {
            v: st.v.as_slice().to_vec(),
            y: st.y.as_slice().to_vec(),
            z: st.z.as_slice().to_vec(),
            iterations,
        }
    }
}
