//! Coefficient sets for generalized moments.
//!
//! A fit produces `c_k^(i)` and `c̃_k^(i)`, `k ∈ [-K, K]`, such that
//! `Σ_k c_k^(i) β(x - k) ≈ x^i g(x)` and `Σ_k c̃_k^(i) β(x - k) ≈ x^i g'(x)`
//! for a compactly supported, nonnegative `g` that is never formed explicitly.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::{gauss_rule, gram_integrals, integrate_unit_pieces, BSplineKernel};
use crate::error::{Error, Result};
use crate::qp::{solve_primal, QpProblem};
use crate::sampler::IndexRange;

/// Spacing of the grid on which `g >= 0` is enforced.
pub const ENFORCEMENT_STEP: f64 = 0.25;

/// Lower bound on `g` at enforcement points with `|t| <= K`; `g > 0` there.
pub const INTERIOR_MARGIN: f64 = 1e-5;

/// Coordinate scale of the bundled fits: `max(K / 2, 1)`.
pub fn default_scale(half_width: usize) -> f64 {
    (half_width as f64 / 2.0).max(1.0)
}

/// Weight of the order-`i` residual of a family when the objective is taken
/// in the coordinate `ξ = x / s`. Family 0 reproduces `x^i g`, family 1
/// reproduces `x^i g'`, family 2 ties the two together.
fn family_weight(family: usize, i: usize, s: f64) -> f64 {
    match family {
        0 => s.powi(-(i as i32)),
        _ => s.powi(1 - i as i32),
    }
}

fn one() -> f64 {
    1.0
}

/// Fitted coefficient tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmCoefficients {
    pub m: usize,
    #[serde(rename = "P")]
    pub order: usize,
    #[serde(rename = "K")]
    pub half_width: usize,
    pub window: usize,
    /// `c[i][k + K]`.
    pub c: Vec<Vec<f64>>,
    /// `c_tilde[i][k + K]`.
    pub c_tilde: Vec<Vec<f64>>,
    /// Coordinate scale `s` of the objective.
    #[serde(default = "one")]
    pub scale: f64,
    /// Objective value at `scale`, computed from the residual functions.
    pub objective: f64,
}

impl GmCoefficients {
    fn from_tables(kernel: &BSplineKernel, half_width: usize, scale: f64, c: Vec<Vec<f64>>, c_tilde: Vec<Vec<f64>>) -> Self {
        let mut out = Self {
            m: kernel.order(),
            order: c.len() - 1,
            half_width,
            window: 2 * half_width + 1,
            c,
            c_tilde,
            scale,
            objective: 0.0,
        };
        out.objective = out.residual_norms().iter().sum();
        out
    }

    /// Same tables with the objective measured at coordinate scale `s`.
    pub fn with_scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale = s;
        out.objective = out.residual_norms().iter().sum();
        out
    }

    /// Objective with `ξ = x`, i.e. in lattice units.
    pub fn lattice_objective(&self) -> f64 {
        self.residual_norms_at_scale(1.0).iter().sum()
    }

    pub fn kernel(&self) -> BSplineKernel {
        BSplineKernel::new(self.m)
    }

    pub fn range(&self) -> IndexRange {
        IndexRange::symmetric(self.half_width as i64)
    }

    pub fn c(&self, i: usize, k: i64) -> f64 {
        self.lookup(&self.c, i, k)
    }

    pub fn c_tilde(&self, i: usize, k: i64) -> f64 {
        self.lookup(&self.c_tilde, i, k)
    }

    fn lookup(&self, table: &[Vec<f64>], i: usize, k: i64) -> f64 {
        let kk = self.half_width as i64;
        if i > self.order || k.abs() > kk {
            0.0
        } else {
            table[i][(k + kk) as usize]
        }
    }

    /// Support of every expansion: `[-K - (m+1)/2, K + (m+1)/2]`.
    pub fn support(&self) -> (f64, f64) {
        let h = self.half_width as f64 + self.kernel().support_half_width();
        (-h, h)
    }

    fn expand(&self, row: &[f64], x: f64, derivative: bool) -> f64 {
        let kernel = self.kernel();
        let h = kernel.support_half_width();
        let kk = self.half_width as i64;
        let lo = ((x - h).ceil() as i64).max(-kk);
        let hi = ((x + h).floor() as i64).min(kk);
        (lo..=hi)
            .map(|k| {
                let t = x - k as f64;
                let b = if derivative {
                    kernel.eval_derivative(t).unwrap_or(0.0)
                } else {
                    kernel.eval(t)
                };
                row[(k + kk) as usize] * b
            })
            .sum()
    }

    /// `Σ_k c_k^(i) β(x - k)`, approximately `x^i g(x)`.
    pub fn reproduce(&self, i: usize, x: f64) -> f64 {
        self.expand(&self.c[i], x, false)
    }

    /// `Σ_k c̃_k^(i) β(x - k)`, approximately `x^i g'(x)`.
    pub fn reproduce_tilde(&self, i: usize, x: f64) -> f64 {
        self.expand(&self.c_tilde[i], x, false)
    }

    pub fn g(&self, x: f64) -> f64 {
        self.reproduce(0, x)
    }

    pub fn g_derivative(&self, x: f64) -> f64 {
        self.expand(&self.c[0], x, true)
    }

    /// Weighted squared residuals of the three equation families at `x`.
    pub fn residuals_at(&self, x: f64) -> [f64; 3] {
        self.residuals_at_scale(x, self.scale)
    }

    pub fn residuals_at_scale(&self, x: f64, scale: f64) -> [f64; 3] {
        let p = self.order;
        let w = |f: usize, i: usize| family_weight(f, i, scale).powi(2);
        let s: Vec<f64> = (0..=p).map(|i| self.reproduce(i, x)).collect();
        let st: Vec<f64> = (0..=p).map(|i| self.reproduce_tilde(i, x)).collect();
        let mut out = [0.0; 3];
        for i in 0..=p {
            if i >= 1 {
                out[0] += w(0, i) * (s[i] - x * s[i - 1]).powi(2);
                out[1] += w(1, i) * (st[i] - x * st[i - 1]).powi(2);
            }
            let prev = if i >= 1 { i as f64 * s[i - 1] } else { 0.0 };
            out[2] += w(2, i) * (self.expand(&self.c[i], x, true) - prev - st[i]).powi(2);
        }
        out
    }

    /// `L²` norms squared of the three residual families, integrated exactly.
    pub fn residual_norms(&self) -> [f64; 3] {
        self.residual_norms_at_scale(self.scale)
    }

    pub fn residual_norms_at_scale(&self, scale: f64) -> [f64; 3] {
        let (a, b) = self.support();
        let nodes = self.m + 2;
        let mut out = [0.0; 3];
        for (f, slot) in out.iter_mut().enumerate() {
            *slot = integrate_unit_pieces(nodes, a, b, |x| self.residuals_at_scale(x, scale)[f]);
        }
        out
    }

    /// Points of the enforcement grid.
    pub fn enforcement_grid(&self) -> Vec<f64> {
        enforcement_grid(&self.kernel(), self.half_width)
    }

    /// Minimum of `g` on the enforcement grid.
    pub fn g_min(&self) -> f64 {
        self.enforcement_grid().iter().map(|&t| self.g(t)).fold(f64::INFINITY, f64::min)
    }

    /// `min g / max g` over enforcement points with `|t| <= radius`.
    pub fn interior_ratio(&self, radius: f64) -> f64 {
        let vals: Vec<f64> = self
            .enforcement_grid()
            .iter()
            .map(|&t| (t, self.g(t)))
            .filter(|p| p.0.abs() <= radius)
            .map(|p| p.1)
            .collect();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        min / max
    }

    /// `min g / max g` over the index interval `[-K, K]`.
    pub fn interior_min_ratio(&self) -> f64 {
        self.interior_ratio(self.half_width as f64)
    }

    /// Sum of squares of the order-`i` coefficients.
    pub fn energy(&self, i: usize) -> f64 {
        self.c[i].iter().map(|v| v * v).sum()
    }

    /// Precomputed fit shipped with the library for `P = 6`.
    pub fn bundled(m: usize) -> Option<GmCoefficients> {
        let text = match m {
            2 => include_str!("../assets/gm_m2_p6.json"),
            4 => include_str!("../assets/gm_m4_p6.json"),
            6 => include_str!("../assets/gm_m6_p6.json"),
            _ => return None,
        };
        serde_json::from_str(text).ok()
    }
}

/// Default index half-width `K` for the bundled configurations.
pub fn default_half_width(m: usize) -> Option<usize> {
    match m {
        2 => Some(20),
        4 => Some(14),
        6 => Some(13),
        _ => None,
    }
}

fn enforcement_grid(kernel: &BSplineKernel, half_width: usize) -> Vec<f64> {
    let h = half_width as f64 + kernel.support_half_width();
    let n = (2.0 * h / ENFORCEMENT_STEP).round() as usize;
    (0..=n).map(|j| -h + j as f64 * ENFORCEMENT_STEP).collect()
}

/// Unknown layout: `c^(i)` blocks first, then `c̃^(i)` blocks, each over `k = -K..=K`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    order: usize,
    half_width: usize,
}

impl Layout {
    fn width(&self) -> usize {
        2 * self.half_width + 1
    }

    fn dim(&self) -> usize {
        2 * (self.order + 1) * self.width()
    }

    fn var(&self, tilde: bool, i: usize, k: i64) -> usize {
        let block = if tilde { self.order + 1 + i } else { i };
        block * self.width() + (k + self.half_width as i64) as usize
    }
}

/// The coefficient-fitting program. `qp.objective(u)` equals the objective
/// `𝒢` at the stacked coefficient vector `u`.
#[derive(Debug, Clone)]
pub struct GmProblem {
    pub kernel: BSplineKernel,
    pub order: usize,
    pub half_width: usize,
    /// Coordinate scale `s`; the objective is taken in `ξ = x / s`.
    pub scale: f64,
    pub qp: QpProblem,
}

impl GmProblem {
    fn layout(&self) -> Layout {
        Layout {
            order: self.order,
            half_width: self.half_width,
        }
    }

    pub fn stack(&self, coefs: &GmCoefficients) -> DVector<f64> {
        let lay = self.layout();
        let mut u = DVector::zeros(lay.dim());
        for i in 0..=self.order {
            for k in coefs.range().iter() {
                u[lay.var(false, i, k)] = coefs.c(i, k);
                u[lay.var(true, i, k)] = coefs.c_tilde(i, k);
            }
        }
        u
    }

    pub fn unstack(&self, u: &DVector<f64>) -> GmCoefficients {
        let lay = self.layout();
        let w = lay.width();
        let table = |tilde: bool| -> Vec<Vec<f64>> {
            (0..=self.order)
                .map(|i| {
                    let start = lay.var(tilde, i, -(self.half_width as i64));
                    u.rows(start, w).iter().copied().collect()
                })
                .collect()
        };
        GmCoefficients::from_tables(&self.kernel, self.half_width, self.scale, table(false), table(true))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Basis {
    Plain,
    Weighted,
    Derivative,
}

/// One residual function as a list of `(unknown, basis, k, weight)` terms.
fn residual_terms(lay: &Layout, scale: f64) -> Vec<Vec<(usize, Basis, i64, f64)>> {
    let kk = lay.half_width as i64;
    let mut out = Vec::new();
    for (family, tilde) in [(0, false), (1, true)] {
        for i in 1..=lay.order {
            let w = family_weight(family, i, scale);
            let mut terms = Vec::new();
            for k in -kk..=kk {
                terms.push((lay.var(tilde, i, k), Basis::Plain, k, w));
                terms.push((lay.var(tilde, i - 1, k), Basis::Weighted, k, -w));
            }
            out.push(terms);
        }
    }
    for i in 0..=lay.order {
        let w = family_weight(2, i, scale);
        let mut terms = Vec::new();
        for k in -kk..=kk {
            terms.push((lay.var(false, i, k), Basis::Derivative, k, w));
            if i >= 1 {
                terms.push((lay.var(false, i - 1, k), Basis::Plain, k, -(i as f64) * w));
            }
            terms.push((lay.var(true, i, k), Basis::Plain, k, -w));
        }
        out.push(terms);
    }
    out
}

/// Assembles the quadratic form, the normalization `c_0^(0) = 1` and the
/// nonnegativity rows for `g` on the enforcement grid, with
/// [`INTERIOR_MARGIN`] on `[-K, K]`. Residuals are measured in lattice units.
pub fn build_gm_objective(kernel: &BSplineKernel, order: usize, range: IndexRange) -> Result<GmProblem> {
    build_gm_objective_scaled(kernel, order, range, 1.0)
}

/// As [`build_gm_objective`] with the residuals measured in `ξ = x / scale`.
/// Larger scales favor relative accuracy of the high-order reproductions
/// over the absolute size of their residuals.
pub fn build_gm_objective_scaled(kernel: &BSplineKernel, order: usize, range: IndexRange, scale: f64) -> Result<GmProblem> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid("coordinate scale must be positive"));
    }
    if order < 1 {
        return Err(Error::invalid("moment order P must be at least 1"));
    }
    if kernel.order() == 0 {
        return Err(Error::NoDerivative(0));
    }
    if range.min != -range.max || range.max < 0 {
        return Err(Error::invalid("index set must be symmetric [-K, K]"));
    }
    let lay = Layout {
        order,
        half_width: range.max as usize,
    };
    let n = lay.dim();
    let reach = kernel.order() as i64 + 1;
    let mut cache: HashMap<(Basis, Basis, i64, i64), f64> = HashMap::new();
    let mut inner = |a: Basis, b: Basis, k: i64, l: i64| -> Result<f64> {
        if (k - l).abs() >= reach {
            return Ok(0.0);
        }
        if let Some(&v) = cache.get(&(a, b, k, l)) {
            return Ok(v);
        }
        let w = (a == Basis::Weighted) as usize + (b == Basis::Weighted) as usize;
        let v = gram_integrals(kernel, w, (a == Basis::Derivative, b == Basis::Derivative), k, l)?;
        cache.insert((a, b, k, l), v);
        Ok(v)
    };
    let mut h = DMatrix::zeros(n, n);
    for terms in residual_terms(&lay, scale) {
        for &(va, ba, ka, wa) in &terms {
            for &(vb, bb, kb, wb) in &terms {
                let g = inner(ba, bb, ka, kb)?;
                if g != 0.0 {
                    h[(va, vb)] += wa * wb * g;
                }
            }
        }
    }
    // ½ uᵀ(2H)u = 𝒢
    h *= 2.0;
    let h = (&h + h.transpose()) * 0.5;

    let mut eq = DMatrix::zeros(1, n);
    eq[(0, lay.var(false, 0, 0))] = 1.0;
    let grid = enforcement_grid(kernel, lay.half_width);
    let mut ineq = DMatrix::zeros(grid.len(), n);
    let rhs = DVector::from_iterator(grid.len(), grid.iter().map(|t| if t.abs() <= range.max as f64 { INTERIOR_MARGIN } else { 0.0 }));
    for (r, &t) in grid.iter().enumerate() {
        for k in range.iter() {
            ineq[(r, lay.var(false, 0, k))] = kernel.eval(t - k as f64);
        }
    }
    let qp = QpProblem::new(h, DVector::zeros(n))?
        .with_equalities(eq, DVector::from_element(1, 1.0))?
        .with_inequalities(ineq, rhs)?;
    Ok(GmProblem {
        kernel: *kernel,
        order,
        half_width: lay.half_width,
        scale,
        qp,
    })
}

/// Raised-cosine starting point, measured in lattice units.
pub fn default_init(kernel: &BSplineKernel, order: usize, range: IndexRange) -> Result<GmCoefficients> {
    if range.min != -range.max || range.max < 0 {
        return Err(Error::invalid("index set must be symmetric [-K, K]"));
    }
    let kk = range.max;
    let bump = |k: i64| {
        if k.abs() > kk {
            0.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * k as f64 / (kk + 1) as f64).cos())
        }
    };
    let c0: Vec<f64> = range.iter().map(bump).collect();
    let d0: Vec<f64> = range.iter().map(|k| 0.5 * (bump(k + 1) - bump(k - 1))).collect();
    let power = |row: &[f64], i: usize| -> Vec<f64> { range.iter().zip(row).map(|(k, v)| v * (k as f64).powi(i as i32)).collect() };
    let c = (0..=order).map(|i| power(&c0, i)).collect();
    let ct = (0..=order).map(|i| power(&d0, i)).collect();
    Ok(GmCoefficients::from_tables(kernel, kk as usize, 1.0, c, ct))
}

/// Outcome of [`solve_gm`].
#[derive(Debug, Clone)]
pub struct GmFit {
    pub coefficients: GmCoefficients,
    /// Objective of the starting point.
    pub init_objective: f64,
    /// Objective after every solver iteration, starting from the initial point.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

/// Weighted residual functions sampled at Gauss nodes so that `‖R u‖² = 𝒢(u)`, with
/// the columns of order `i` scaled by `K^i`.
fn residual_factor(problem: &GmProblem, scale: &[f64]) -> DMatrix<f64> {
    let lay = problem.layout();
    let kernel = problem.kernel;
    let h = kernel.support_half_width();
    let span = lay.half_width as f64 + h;
    let pieces = (2.0 * span).round() as usize;
    let rule = gauss_rule(kernel.order() + 2);
    let per_node = 3 * lay.order + 1;
    let sc = problem.scale;
    let mut r = DMatrix::zeros(pieces * rule.len() * per_node, lay.dim());
    let kk = lay.half_width as i64;
    let mut row = 0;
    for piece in 0..pieces {
        let mid = -span + piece as f64 + 0.5;
        for &(t, w) in rule {
            let x = mid + 0.5 * t;
            let sw = (0.5 * w).sqrt();
            let lo = ((x - h).ceil() as i64).max(-kk);
            let hi = ((x + h).floor() as i64).min(kk);
            for tilde in [false, true] {
                for i in 1..=lay.order {
                    let wgt = sw * family_weight(tilde as usize, i, sc);
                    for k in lo..=hi {
                        let b = kernel.eval(x - k as f64);
                        r[(row, lay.var(tilde, i, k))] += wgt * b;
                        r[(row, lay.var(tilde, i - 1, k))] -= wgt * x * b;
                    }
                    row += 1;
                }
            }
            for i in 0..=lay.order {
                let sw = sw * family_weight(2, i, sc);
                for k in lo..=hi {
                    let b = kernel.eval(x - k as f64);
                    let d = kernel.eval_derivative(x - k as f64).unwrap_or(0.0);
                    r[(row, lay.var(false, i, k))] += sw * d;
                    if i >= 1 {
                        r[(row, lay.var(false, i - 1, k))] -= sw * i as f64 * b;
                    }
                    r[(row, lay.var(true, i, k))] -= sw * b;
                }
                row += 1;
            }
        }
    }
    for (c, s) in scale.iter().enumerate() {
        r.column_mut(c).scale_mut(*s);
    }
    r
}

/// Solves the coefficient-fitting program.
///
/// Every unknown except `c^(0)` enters only the objective, so it is
/// eliminated by an orthogonal factorization of the residual operator; the
/// remaining program over `c^(0)` is solved by a primal active-set method
/// started from `init` (or [`default_init`]), which keeps every iterate
/// feasible and the objective non-increasing.
pub fn solve_gm(problem: &GmProblem, init: Option<&GmCoefficients>, max_iter: usize, tol: f64) -> Result<GmFit> {
    let lay = problem.layout();
    let range = IndexRange::symmetric(lay.half_width as i64);
    let start = match init {
        Some(c) => {
            if c.m != problem.kernel.order() || c.order != problem.order || c.half_width != lay.half_width {
                return Err(Error::invalid("initial coefficients do not match the problem"));
            }
            c.with_scale(problem.scale)
        }
        None => default_init(&problem.kernel, problem.order, range)?.with_scale(problem.scale),
    };
    let w = lay.width();
    let kscale = (lay.half_width as f64).max(1.0);
    let scale: Vec<f64> = (0..lay.dim()).map(|v| kscale.powi(((v / w) % (lay.order + 1)) as i32)).collect();

    // columns reordered so c^(0) comes last: QR gives [[Tzz, Tzy], [0, Tyy]]
    let r = residual_factor(problem, &scale);
    let nz = lay.dim() - w;
    let mut reordered = DMatrix::zeros(r.nrows(), lay.dim());
    reordered.columns_mut(0, nz).copy_from(&r.columns(w, nz));
    reordered.columns_mut(nz, w).copy_from(&r.columns(0, w));
    let t = reordered.qr().r();
    let tzz = t.view((0, 0), (nz, nz)).into_owned();
    let tzy = t.view((0, nz), (nz, w)).into_owned();
    let tyy = t.view((nz, nz), (w, w)).into_owned();

    let hr = tyy.transpose() * &tyy * 2.0;
    let reduced = QpProblem::new(hr, DVector::zeros(w))?
        .with_equalities(
            DMatrix::from_fn(1, w, |_, c| if c == lay.half_width { 1.0 } else { 0.0 }),
            DVector::from_element(1, 1.0),
        )?
        .with_inequalities(
            problem.qp.ineq_rows.columns(lay.var(false, 0, -(lay.half_width as i64)), w).into_owned(),
            problem.qp.ineq_rhs.clone(),
        )?;
    let y0 = DVector::from_row_slice(&start.c[0]);
    let sol = solve_primal(&reduced, &y0, max_iter, tol)?;

    // back-substitute the eliminated unknowns
    let rhs = -(&tzy * &sol.x);
    let z = tzz.clone().svd(true, true).solve(&rhs, 1e-15).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut u = DVector::zeros(lay.dim());
    u.rows_mut(w, nz).copy_from(&z);
    u.rows_mut(0, w).copy_from(&sol.x);
    for (v, s) in u.iter_mut().zip(&scale) {
        *v *= s;
    }
    let coefficients = problem.unstack(&u);
    let mut history = vec![start.objective];
    history.extend(sol.history.iter().copied());
    Ok(GmFit {
        coefficients,
        init_objective: start.objective,
        history,
        iterations: sol.iterations,
        converged: sol.converged,
        kkt_residual: sol.kkt_residual,
    })
}

/// Builds and solves the program for `(m, P, [-K, K])` in lattice units.
pub fn fit(kernel: &BSplineKernel, order: usize, half_width: usize) -> Result<GmFit> {
    fit_scaled(kernel, order, half_width, 1.0)
}

/// As [`fit`] with the objective at coordinate scale `scale`.
pub fn fit_scaled(kernel: &BSplineKernel, order: usize, half_width: usize, scale: f64) -> Result<GmFit> {
    let problem = build_gm_objective_scaled(kernel, order, IndexRange::symmetric(half_width as i64), scale)?;
    solve_gm(&problem, None, 2000, 1e-12)
}
