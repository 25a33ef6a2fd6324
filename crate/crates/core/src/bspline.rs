//! Centered B-spline kernels `β^(m)`, their derivatives, exact Gram-type
//! integrals and the classical polynomial-reproduction coefficients.

use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly2d::binomial;
use crate::sampler::IndexRange;

/// Centered B-spline of order `m`: the `(m + 1)`-fold convolution of the unit box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BSplineKernel {
    order: usize,
}

impl BSplineKernel {
    pub const fn new(order: usize) -> Self {
        Self { order }
    }

    pub const fn order(&self) -> usize {
        self.order
    }

    /// Half width of the support, `(m + 1) / 2`.
    pub fn support_half_width(&self) -> f64 {
        (self.order + 1) as f64 / 2.0
    }

    /// Exact value `β^(m)(x)`.
    ///
    /// For `m = 0` the box takes the value `1/2` at `|x| = 1/2`.
    pub fn eval(&self, x: f64) -> f64 {
        bspline_value(self.order, x)
    }

    /// Derivative `β^(m)'(x) = β^(m-1)(x + 1/2) - β^(m-1)(x - 1/2)`.
    pub fn eval_derivative(&self, x: f64) -> Result<f64> {
        if self.order == 0 {
            return Err(Error::NoDerivative(0));
        }
        Ok(bspline_value(self.order - 1, x + 0.5) - bspline_value(self.order - 1, x - 0.5))
    }

    fn eval_flagged(&self, derivative: bool, x: f64) -> f64 {
        if derivative {
            bspline_value(self.order - 1, x + 0.5) - bspline_value(self.order - 1, x - 0.5)
        } else {
            bspline_value(self.order, x)
        }
    }

    /// Indices `k` for which `β(x - k)` is nonzero somewhere in `(-h, h)`.
    pub fn overlapping_indices(&self, h: f64) -> IndexRange {
        let reach = h + self.support_half_width();
        // strict: a kernel touching the interval only at an endpoint contributes nothing
        let kmax = (reach - 1e-12).ceil() as i64 - 1;
        IndexRange::new(-kmax, kmax)
    }

    /// Moment `∫ x^r β(x) dx`, exact.
    pub fn moment(&self, r: usize) -> f64 {
        if r % 2 == 1 {
            return 0.0;
        }
        piecewise_integral(
            self.order,
            r,
            |x| x.powi(r as i32) * self.eval(x),
            -self.support_half_width(),
            self.support_half_width(),
        )
    }
}

/// Cardinal B-spline evaluation by the triangular Cox–de Boor recursion.
fn bspline_value(m: usize, x: f64) -> f64 {
    let h = (m + 1) as f64 / 2.0;
    if m == 0 {
        let a = x.abs();
        return if a < 0.5 {
            1.0
        } else if a == 0.5 {
            0.5
        } else {
            0.0
        };
    }
    // evaluate on the mirrored side so the left-closed interval convention is symmetric
    let x = -x.abs();
    if x <= -h {
        return 0.0;
    }
    let t = x + h;
    let cell = t.floor() as usize;
    let mut vals = [0.0f64; 16];
    assert!(m < vals.len(), "B-spline order too large");
    vals[cell] = 1.0;
    for d in 1..=m {
        for s in 0..=m - d {
            let u = t - s as f64;
            vals[s] = (u * vals[s] + (d as f64 + 1.0 - u) * vals[s + 1]) / d as f64;
        }
    }
    vals[0]
}

pub(crate) fn gauss_rule(nodes: usize) -> &'static [(f64, f64)] {
    static RULES: OnceLock<Vec<Vec<(f64, f64)>>> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        (0..=32)
            .map(|n| {
                if n < 2 {
                    Vec::new()
                } else {
                    GaussLegendre::new(n).expect("valid Gauss-Legendre degree").as_node_weight_pairs().to_vec()
                }
            })
            .collect()
    });
    &rules[nodes.clamp(2, 32)]
}

/// Integrates a function that is polynomial between consecutive points of
/// `a + Z`, exactly when its degree does not exceed `2 * nodes - 1`.
pub(crate) fn integrate_unit_pieces(nodes: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let rule = gauss_rule(nodes);
    let mut total = 0.0;
    let mut lo = a;
    while lo < b - 1e-12 {
        let hi = (lo + 1.0).min(b);
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        total += half * rule.iter().map(|&(t, w)| w * f(mid + half * t)).sum::<f64>();
        lo = hi;
    }
    total
}

fn piecewise_integral(m: usize, extra_degree: usize, f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let nodes = (m + extra_degree + 2).div_ceil(2).max(2);
    integrate_unit_pieces(nodes, a, b, f)
}

/// `∫ x^w · D^f1 β(x - k) · D^f2 β(x - l) dx`, exact up to rounding.
///
/// The integrand is a piecewise polynomial of degree at most `2m + w` with
/// breakpoints on the knot lattice, so a `⌈(2m + w + 2) / 2⌉`-node
/// Gauss–Legendre rule per knot interval integrates it exactly.
pub fn gram_integrals(kernel: &BSplineKernel, weight_power: usize, deriv_flags: (bool, bool), k: i64, l: i64) -> Result<f64> {
    let m = kernel.order();
    if m == 0 && (deriv_flags.0 || deriv_flags.1) {
        return Err(Error::NoDerivative(0));
    }
    if weight_power > 2 {
        return Err(Error::invalid("weight power must be 0, 1 or 2"));
    }
    let h = kernel.support_half_width();
    let a = k.max(l) as f64 - h;
    let b = k.min(l) as f64 + h;
    if a >= b {
        return Ok(0.0);
    }
    let nodes = (2 * m + weight_power + 2).div_ceil(2);
    Ok(integrate_unit_pieces(nodes, a, b, |x| {
        x.powi(weight_power as i32) * kernel.eval_flagged(deriv_flags.0, x - k as f64) * kernel.eval_flagged(deriv_flags.1, x - l as f64)
    }))
}

/// Coefficients `c_k^(i)` with `Σ_k c_k^(i) β(x - k) = x^i` for `i <= N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalReproduction {
    pub m: usize,
    #[serde(rename = "N")]
    pub order: usize,
    pub k_min: i64,
    /// `rows[i][k - k_min]`.
    pub rows: Vec<Vec<f64>>,
}

impl ClassicalReproduction {
    pub fn kernel(&self) -> BSplineKernel {
        BSplineKernel::new(self.m)
    }

    pub fn range(&self) -> IndexRange {
        IndexRange::new(self.k_min, self.k_min + self.rows[0].len() as i64 - 1)
    }

    /// `c_k^(i)`; zero outside the stored range.
    pub fn coefficient(&self, i: usize, k: i64) -> f64 {
        let idx = k - self.k_min;
        if idx < 0 || idx as usize >= self.rows[i].len() {
            0.0
        } else {
            self.rows[i][idx as usize]
        }
    }

    /// `Σ_k c_k^(i) β(x - k)` over the stored range.
    pub fn reproduce(&self, i: usize, x: f64) -> f64 {
        let kernel = self.kernel();
        self.range().iter().map(|k| self.coefficient(i, k) * kernel.eval(x - k as f64)).sum()
    }

    /// Interval on which the truncated expansion reproduces monomials exactly.
    pub fn exact_interval(&self) -> (f64, f64) {
        let h = self.kernel().support_half_width();
        let r = self.range();
        (r.min as f64 + h - 1.0, r.max as f64 - h + 1.0)
    }
}

/// Polynomials `q_i` with `Σ_k q_i(k) β(x - k) = x^i`, as monomial coefficient rows.
///
/// Uses `Σ_k k^j β(x - k) = Σ_r C(j, r) (-1)^r μ_r x^(j - r)` with `μ_r` the
/// moments of `β`, valid for `j <= m`, and inverts the resulting unit lower
/// triangular system.
fn reproduction_polynomials(kernel: &BSplineKernel, order: usize) -> Vec<Vec<f64>> {
    let mu: Vec<f64> = (0..=order).map(|r| kernel.moment(r)).collect();
    // forward[j][s]: coefficient of x^s in Σ_k k^j β(x - k)
    let mut forward = vec![vec![0.0; order + 1]; order + 1];
    for j in 0..=order {
        for r in 0..=j {
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            forward[j][j - r] = binomial(j, r) * sign * mu[r];
        }
    }
    // alpha · forward = identity, solved row by row
    let mut alpha = vec![vec![0.0; order + 1]; order + 1];
    for i in 0..=order {
        alpha[i][i] = 1.0 / forward[i][i];
        for s in (0..i).rev() {
            let acc: f64 = (s + 1..=i).map(|j| alpha[i][j] * forward[j][s]).sum();
            alpha[i][s] = -acc / forward[s][s];
        }
    }
    alpha
}

/// Classical reproduction coefficients over `k_range`.
pub fn classical_coefficients(kernel: &BSplineKernel, order: usize, k_range: IndexRange) -> Result<ClassicalReproduction> {
    if order > kernel.order() {
        return Err(Error::OrderTooHigh {
            requested: order,
            available: kernel.order(),
        });
    }
    let q = reproduction_polynomials(kernel, order);
    let rows = q
        .iter()
        .map(|coef| k_range.iter().map(|k| coef.iter().rev().fold(0.0, |acc, c| acc * k as f64 + c)).collect())
        .collect();
    Ok(ClassicalReproduction {
        m: kernel.order(),
        order,
        k_min: k_range.min,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_and_triangle_values() {
        let b0 = BSplineKernel::new(0);
        assert_eq!(b0.eval(0.0), 1.0);
        assert_eq!(b0.eval(0.5), 0.5);
        assert_eq!(b0.eval(-0.5), 0.5);
        assert_eq!(b0.eval(0.7), 0.0);
        let b1 = BSplineKernel::new(1);
        assert_eq!(b1.eval(0.0), 1.0);
        assert_eq!(b1.eval(1.0), 0.0);
        assert_eq!(b1.eval(-1.0), 0.0);
        assert!((b1.eval(0.25) - 0.75).abs() < 1e-15);
        // cubic spline at 0 is 2/3
        assert!((BSplineKernel::new(3).eval(0.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_values() {
        assert_eq!(BSplineKernel::new(2).eval_derivative(0.0).unwrap(), 0.0);
        assert_eq!(BSplineKernel::new(1).eval_derivative(-0.5).unwrap(), 1.0);
        assert!(matches!(BSplineKernel::new(0).eval_derivative(0.1), Err(Error::NoDerivative(0))));
        for m in 1..=6 {
            let k = BSplineKernel::new(m);
            let h = k.support_half_width();
            let integral = integrate_unit_pieces(m + 1, -h, h, |x| k.eval_derivative(x).unwrap());
            assert!(integral.abs() < 1e-14);
        }
    }

    #[test]
    fn unit_integral() {
        for m in 0..=7 {
            let k = BSplineKernel::new(m);
            assert!((k.moment(0) - 1.0).abs() < 1e-14, "m = {m}");
        }
        // variance of the order-m spline is (m + 1) / 12
        for m in 0..=6 {
            assert!((BSplineKernel::new(m).moment(2) - (m + 1) as f64 / 12.0).abs() < 1e-13);
        }
    }

    #[test]
    fn partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 0..=7 {
            let k = BSplineKernel::new(m);
            for _ in 0..200 {
                let x: f64 = rng.random_range(-5.0..5.0);
                let s: f64 = (-12..=12).map(|j| k.eval(x - j as f64)).sum();
                assert!((s - 1.0).abs() < 1e-12, "m = {m}, x = {x}");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in 2..=7 {
            let k = BSplineKernel::new(m);
            let h = 1e-5;
            for _ in 0..100 {
                let x: f64 = rng.random_range(-4.0..4.0);
                let frac = (x + k.support_half_width()).fract().abs();
                if !(1e-3..=1.0 - 1e-3).contains(&frac) {
                    continue;
                }
                let fd = (k.eval(x + h) - k.eval(x - h)) / (2.0 * h);
                assert!((k.eval_derivative(x).unwrap() - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gram_examples() {
        let b0 = BSplineKernel::new(0);
        assert!((gram_integrals(&b0, 0, (false, false), 0, 0).unwrap() - 1.0).abs() < 1e-15);
        let b1 = BSplineKernel::new(1);
        assert!((gram_integrals(&b1, 0, (false, false), 0, 0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(gram_integrals(&b1, 0, (false, false), 0, 3).unwrap(), 0.0);
        assert_eq!(BSplineKernel::new(4).order(), 4);
        assert_eq!(gram_integrals(&BSplineKernel::new(4), 2, (true, false), -3, 3).unwrap(), 0.0);
        assert!(gram_integrals(&b0, 0, (true, false), 0, 0).is_err());
    }

    #[test]
    fn gram_matches_fine_quadrature() {
        // independent route: composite Simpson on a fine mesh
        let k6 = BSplineKernel::new(6);
        for &(w, f1, f2, k, l) in &[(0, false, false, 0, 2), (1, true, false, 1, -1), (2, true, true, 3, 4), (2, false, true, -2, 0)] {
            let exact = gram_integrals(&k6, w, (f1, f2), k, l).unwrap();
            let n = 20_000;
            let (a, b) = (-8.0, 8.0);
            let step = (b - a) / n as f64;
            let f = |x: f64| {
                let d = |flag: bool, c: i64| {
                    if flag {
                        k6.eval_derivative(x - c as f64).unwrap()
                    } else {
                        k6.eval(x - c as f64)
                    }
                };
                x.powi(w as i32) * d(f1, k) * d(f2, l)
            };
            let mut s = f(a) + f(b);
            for i in 1..n {
                s += f(a + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let simpson = s * step / 3.0;
            assert!((exact - simpson).abs() < 1e-10, "{exact} vs {simpson}");
        }
    }

    #[test]
    fn gram_symmetry() {
        for m in 1..=6 {
            let kern = BSplineKernel::new(m);
            for k in -3..=3 {
                for l in -3..=3 {
                    for &(f1, f2) in &[(false, false), (true, false), (true, true)] {
                        let a = gram_integrals(&kern, 0, (f1, f2), k, l).unwrap();
                        let b = gram_integrals(&kern, 0, (f2, f1), l, k).unwrap();
                        assert!((a - b).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn classical_constant_and_linear() {
        let range = IndexRange::new(-8, 8);
        for m in 1..=6 {
            let c = classical_coefficients(&BSplineKernel::new(m), 1, range).unwrap();
            for k in range.iter() {
                assert!((c.coefficient(0, k) - 1.0).abs() < 1e-14);
                assert!((c.coefficient(1, k) - k as f64).abs() < 1e-12);
            }
        }
        assert!(matches!(
            classical_coefficients(&BSplineKernel::new(3), 4, range),
            Err(Error::OrderTooHigh { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn linear_spline_matches_local_system() {
        // oracle: least-squares fit of x on the triangle basis over [-1, 1]
        let b1 = BSplineKernel::new(1);
        let xs: Vec<f64> = (0..41).map(|i| -1.0 + i as f64 * 0.05).collect();
        let a = DMatrix::from_fn(xs.len(), 3, |r, c| b1.eval(xs[r] - (c as f64 - 1.0)));
        let rhs = DVector::from_iterator(xs.len(), xs.iter().copied());
        let sol = a.svd(true, true).solve(&rhs, 1e-12).unwrap();
        let c = classical_coefficients(&b1, 1, IndexRange::new(-1, 1)).unwrap();
        for (idx, k) in (-1..=1).enumerate() {
            assert!((sol[idx] - c.coefficient(1, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduction_identity() {
        let range = IndexRange::new(-12, 12);
        for m in 0..=6 {
            let c = classical_coefficients(&BSplineKernel::new(m), m, range).unwrap();
            let (lo, hi) = c.exact_interval();
            // open interval: the box kernel takes half weight at its support edge
            for s in 1..50 {
                let x = lo + (hi - lo) * s as f64 / 50.0;
                for i in 0..=m {
                    let want = x.powi(i as i32);
                    assert!((c.reproduce(i, x) - want).abs() < 1e-8 * want.abs().max(1.0), "m={m} i={i} x={x}");
                }
            }
        }
    }

    #[test]
    fn coefficients_grow_like_power() {
        let c = classical_coefficients(&BSplineKernel::new(6), 6, IndexRange::new(-40, 40)).unwrap();
        // log-log slope between |k| = 20 and |k| = 40
        let slope = (c.coefficient(6, 40).abs().ln() - c.coefficient(6, 20).abs().ln()) / 2f64.ln();
        assert!((slope - 6.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn overlapping_indices_cover_the_domain() {
        // β^(6) on [-2, 2]: |k| < 5.5 → 11 samples
        assert_eq!(BSplineKernel::new(6).overlapping_indices(2.0).len(), 11);
        assert_eq!(BSplineKernel::new(2).overlapping_indices(15.0).len(), 33);
        assert_eq!(BSplineKernel::new(4).overlapping_indices(13.0).len(), 31);
        assert_eq!(BSplineKernel::new(6).overlapping_indices(11.0).len(), 29);
    }

    #[test]
    fn json_layout() {
        let c = classical_coefficients(&BSplineKernel::new(2), 1, IndexRange::new(-1, 1)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        assert_eq!(v["m"], 2);
        assert_eq!(v["N"], 1);
        assert_eq!(v["k_min"], -1);
        assert_eq!(v["rows"][1][2], 1.0);
    }
}
