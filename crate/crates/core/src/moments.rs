//! Conventional and generalized moments.
//!
//! All moments live in lattice coordinates `u = x / T`, in which the samples
//! read `d_{k,l} = ∬ I(Tu, Tv) β(u - k) β(v - l) du dv`. Generalized moments
//! additionally use window-local coordinates centered on the window's middle
//! sample.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bspline::{gauss_rule, ClassicalReproduction};
use crate::error::{Error, Result};
use crate::gmfit::GmCoefficients;
use crate::poly2d::{BivariatePolynomial, ImagePlane};
use crate::sampler::SampleGrid;

/// Which weight multiplies `x^i y^j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MomentKind {
    #[serde(rename = "conventional")]
    Conventional,
    /// `g(x) g(y)`.
    #[serde(rename = "g_g")]
    GG,
    /// `g'(x) g(y)`.
    #[serde(rename = "gprime_g")]
    GPrimeG,
    /// `g(x) g'(y)`.
    #[serde(rename = "g_gprime")]
    GGPrime,
}

/// Moments `M_{i,j}` for `0 <= i <= max_i`, `0 <= j <= max_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub kind: MomentKind,
    /// Origin of the moment coordinates, in lattice units.
    pub center: (f64, f64),
    /// `values[(i, j)]`.
    pub values: DMatrix<f64>,
}

impl MomentTable {
    pub fn zeros(kind: MomentKind, max_i: usize, max_j: usize, center: (f64, f64)) -> Self {
        Self {
            kind,
            center,
            values: DMatrix::zeros(max_i + 1, max_j + 1),
        }
    }

    pub fn max_i(&self) -> usize {
        self.values.nrows() - 1
    }

    pub fn max_j(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        if i > self.max_i() || j > self.max_j() {
            return Err(Error::MissingMoment(i, j));
        }
        Ok(self.values[(i, j)])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct MomentTableJson {
    kind: MomentKind,
    order: [usize; 2],
    center: [f64; 2],
    matrix: Vec<Vec<f64>>,
}

impl Serialize for MomentTable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MomentTableJson {
            kind: self.kind,
            order: [self.max_i(), self.max_j()],
            center: [self.center.0, self.center.1],
            matrix: self.values.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MomentTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MomentTableJson::deserialize(d)?;
        let (ni, nj) = (raw.order[0] + 1, raw.order[1] + 1);
        if raw.matrix.len() != ni || raw.matrix.iter().any(|r| r.len() != nj) {
            return Err(serde::de::Error::custom("moment matrix does not match its order"));
        }
        Ok(Self {
            kind: raw.kind,
            center: (raw.center[0], raw.center[1]),
            values: DMatrix::from_fn(ni, nj, |i, j| raw.matrix[i][j]),
        })
    }
}

/// `M_{i,j} = Σ_k Σ_l c_k^(i) c_l^(j) d_{k,l}` with classical coefficients.
pub fn moments_from_samples(grid: &SampleGrid, repro: &ClassicalReproduction, max_i: usize, max_j: usize) -> Result<MomentTable> {
    if repro.m != grid.kernel.order() {
        return Err(Error::invalid("reproduction coefficients belong to a different kernel"));
    }
    let need = max_i.max(max_j);
    if need > repro.order {
        return Err(Error::OrderTooHigh {
            requested: need,
            available: repro.order,
        });
    }
    let r = repro.range();
    if !(r.contains(grid.k_range.min) && r.contains(grid.k_range.max) && r.contains(grid.l_range.min) && r.contains(grid.l_range.max)) {
        return Err(Error::invalid("reproduction coefficients do not cover the sample grid"));
    }
    let cx = |i: usize, k: i64| repro.coefficient(i, k);
    let values = contract(
        grid,
        (0, 0),
        grid.k_range.iter().collect(),
        grid.l_range.iter().collect(),
        max_i,
        max_j,
        &cx,
        &cx,
    );
    Ok(MomentTable {
        kind: MomentKind::Conventional,
        center: (0.0, 0.0),
        values,
    })
}

/// `Σ_κ Σ_λ a_κ^(i) b_λ^(j) d_{k0+κ, l0+λ}` for the listed offsets.
#[allow(clippy::too_many_arguments)]
fn contract(
    grid: &SampleGrid,
    origin: (i64, i64),
    kappas: Vec<i64>,
    lambdas: Vec<i64>,
    max_i: usize,
    max_j: usize,
    a: &dyn Fn(usize, i64) -> f64,
    b: &dyn Fn(usize, i64) -> f64,
) -> DMatrix<f64> {
    // y first: partial[j][κ] = Σ_λ b_λ^(j) d
    let mut partial: DMatrix<f64> = DMatrix::zeros(max_j + 1, kappas.len());
    for (ci, &kappa) in kappas.iter().enumerate() {
        for &lambda in &lambdas {
            let d = grid.get(origin.0 + kappa, origin.1 + lambda);
            if d == 0.0 {
                continue;
            }
            for j in 0..=max_j {
                partial[(j, ci)] += b(j, lambda) * d;
            }
        }
    }
    DMatrix::from_fn(max_i + 1, max_j + 1, |i, j| {
        kappas.iter().enumerate().map(|(ci, &kappa)| a(i, kappa) * partial[(j, ci)]).sum()
    })
}

/// The three generalized moment tables `(g·g, g'·g, g·g')` of the window
/// centered at lattice point `center`.
pub fn generalized_moments_from_samples(grid: &SampleGrid, coefs: &GmCoefficients, max_i: usize, max_j: usize, center: (i64, i64)) -> Result<[MomentTable; 3]> {
    if coefs.m != grid.kernel.order() {
        return Err(Error::invalid("moment coefficients belong to a different kernel"));
    }
    let need = max_i.max(max_j);
    if need > coefs.order {
        return Err(Error::OrderTooHigh {
            requested: need,
            available: coefs.order,
        });
    }
    let r = coefs.range();
    let fits = |lo: i64, hi: i64, c: i64| lo <= c + r.min && c + r.max <= hi;
    if !fits(grid.k_range.min, grid.k_range.max, center.0) || !fits(grid.l_range.min, grid.l_range.max, center.1) {
        return Err(Error::WindowOutOfRange(center.0, center.1));
    }
    let offsets: Vec<i64> = r.iter().collect();
    let plain = |i: usize, k: i64| coefs.c(i, k);
    let tilde = |i: usize, k: i64| coefs.c_tilde(i, k);
    let c = (center.0 as f64, center.1 as f64);
    let table = |kind, a: &dyn Fn(usize, i64) -> f64, b: &dyn Fn(usize, i64) -> f64| MomentTable {
        kind,
        center: c,
        values: contract(grid, center, offsets.clone(), offsets.clone(), max_i, max_j, a, b),
    };
    Ok([
        table(MomentKind::GG, &plain, &plain),
        table(MomentKind::GPrimeG, &tilde, &plain),
        table(MomentKind::GGPrime, &plain, &tilde),
    ])
}

/// Weight used by the quadrature oracle.
#[derive(Debug, Clone, Copy)]
pub enum OracleWeight<'a> {
    Unweighted,
    /// Weight of the given kind built from the fitted `g`, around a lattice center.
    Generalized {
        coefs: &'a GmCoefficients,
        center: (i64, i64),
        kind: MomentKind,
    },
}

/// Default oracle resolution in rows per lattice unit.
pub const ORACLE_ROWS_PER_UNIT: usize = 1024;

/// Brute-force moments of `1{p <= 0}` over `Ω` by direct quadrature.
///
/// Rows are placed at midpoints, `ORACLE_ROWS_PER_UNIT` per lattice unit;
/// within a row the sublevel set is split into exact intervals and each
/// interval is integrated exactly. Independent of the sampling code.
pub fn oracle_moments(p: &BivariatePolynomial, plane: &ImagePlane, weight: OracleWeight, max_i: usize, max_j: usize) -> MomentTable {
    oracle(p, plane, weight, max_i, max_j, false)
}

/// Like [`oracle_moments`] with every factor replaced by its absolute value;
/// the natural scale for relative comparisons of moments that may vanish.
pub fn oracle_moment_magnitudes(p: &BivariatePolynomial, plane: &ImagePlane, weight: OracleWeight, max_i: usize, max_j: usize) -> MomentTable {
    oracle(p, plane, weight, max_i, max_j, true)
}

fn oracle(p: &BivariatePolynomial, plane: &ImagePlane, weight: OracleWeight, max_i: usize, max_j: usize, absolute: bool) -> MomentTable {
    let t = plane.period;
    let lu = plane.lattice_half_width();
    // p in lattice coordinates
    let q = p.magnified(1.0 / t);
    let (kind, center, gm) = match weight {
        OracleWeight::Unweighted => (MomentKind::Conventional, (0, 0), None),
        OracleWeight::Generalized { coefs, center, kind } => (kind, center, Some(coefs)),
    };
    let (cx, cy) = (center.0 as f64, center.1 as f64);
    let (wx_deriv, wy_deriv) = match kind {
        MomentKind::GPrimeG => (true, false),
        MomentKind::GGPrime => (false, true),
        _ => (false, false),
    };
    let weight_at = |coefs: &GmCoefficients, deriv: bool, s: f64| if deriv { coefs.g_derivative(s) } else { coefs.g(s) };

    let rows = (2.0 * lu * ORACLE_ROWS_PER_UNIT as f64).round() as usize;
    let hv = 2.0 * lu / rows as f64;
    let mut values = DMatrix::zeros(max_i + 1, max_j + 1);
    for r in 0..rows {
        let v = -lu + (r as f64 + 0.5) * hv;
        let sv = v - cy;
        let wy = match gm {
            None => 1.0,
            Some(c) => {
                let (a, b) = c.support();
                if sv <= a || sv >= b {
                    continue;
                }
                weight_at(c, wy_deriv, sv)
            }
        };
        let wy = if absolute { wy.abs() } else { wy };
        if wy == 0.0 {
            continue;
        }
        let intervals = row_intervals(&q, v, -lu, lu);
        if intervals.is_empty() {
            continue;
        }
        let mut sx = vec![0.0; max_i + 1];
        for &(a, b) in &intervals {
            match gm {
                None => {
                    for (i, s) in sx.iter_mut().enumerate() {
                        *s += if absolute { abs_power_integral(a, b, i) } else { power_integral(a, b, i) };
                    }
                }
                Some(c) => {
                    // local coordinate s = u - cx; g is polynomial between knots
                    let (ga, gb) = c.support();
                    let lo = (a - cx).max(ga);
                    let hi = (b - cx).min(gb);
                    if lo >= hi {
                        continue;
                    }
                    let offset = c.kernel().support_half_width().fract();
                    let nodes = (c.m + max_i + 2).div_ceil(2) + 1;
                    let rule = gauss_rule(nodes);
                    let mut x0 = lo;
                    while x0 < hi {
                        let next_knot = ((x0 - offset).floor() + 1.0) + offset;
                        let x1 = next_knot.min(hi);
                        let (mid, half) = (0.5 * (x0 + x1), 0.5 * (x1 - x0));
                        for &(tn, wn) in rule {
                            let s = mid + half * tn;
                            let w = weight_at(c, wx_deriv, s);
                            let mut pw = half * wn * if absolute { w.abs() } else { w };
                            let base = if absolute { s.abs() } else { s };
                            for acc in sx.iter_mut() {
                                *acc += pw;
                                pw *= base;
                            }
                        }
                        x0 = x1;
                    }
                }
            }
        }
        let base = if absolute { sv.abs() } else { sv };
        let mut py = hv * wy;
        for j in 0..=max_j {
            for i in 0..=max_i {
                values[(i, j)] += sx[i] * py;
            }
            py *= base;
        }
    }
    MomentTable {
        kind,
        center: (cx, cy),
        values,
    }
}

fn power_integral(a: f64, b: f64, i: usize) -> f64 {
    let e = (i + 1) as i32;
    (b.powi(e) - a.powi(e)) / (i + 1) as f64
}

fn abs_power_integral(a: f64, b: f64, i: usize) -> f64 {
    let f = |x: f64| x.signum() * x.abs().powi(i as i32 + 1) / (i + 1) as f64;
    f(b) - f(a)
}

/// Sub-intervals of `[lo, hi]` where `q(u, v) <= 0`.
fn row_intervals(q: &BivariatePolynomial, v: f64, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    // univariate coefficients in u
    let n = q.degree();
    let mut coef = vec![0.0; n + 1];
    for (i, c) in coef.iter_mut().enumerate() {
        let mut vp = 1.0;
        for j in 0..=(n - i) {
            *c += q.coeff(i, j) * vp;
            vp *= v;
        }
    }
    let f = |u: f64| coef.iter().rev().fold(0.0, |acc, c| acc * u + c);
    let scan = ((hi - lo) * 64.0).ceil().max(1.0) as usize;
    let h = (hi - lo) / scan as f64;
    let mut out = Vec::new();
    let mut start = if f(lo) <= 0.0 { Some(lo) } else { None };
    let mut prev = (lo, f(lo));
    for s in 1..=scan {
        let u = if s == scan { hi } else { lo + s as f64 * h };
        let fu = f(u);
        if (prev.1 <= 0.0) != (fu <= 0.0) {
            let (mut a, mut b) = (prev.0, u);
            let inside_a = prev.1 <= 0.0;
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if (f(mid) <= 0.0) == inside_a {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let root = 0.5 * (a + b);
            match start.take() {
                Some(s0) => out.push((s0, root)),
                None => start = Some(root),
            }
        }
        prev = (u, fu);
    }
    if let Some(s0) = start {
        out.push((s0, hi));
    }
    out
}

/// Largest per-entry error of `got` relative to the magnitude table `scale`.
pub fn relative_error(got: &MomentTable, want: &MomentTable, scale: &MomentTable) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..=got.max_i().min(want.max_i()) {
        for j in 0..=got.max_j().min(want.max_j()) {
            let s = scale.values[(i, j)].max(f64::MIN_POSITIVE);
            worst = worst.max((got.values[(i, j)] - want.values[(i, j)]).abs() / s);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::{classical_coefficients, BSplineKernel};
    use crate::sampler::{default_ranges, sample_shape, IndexRange};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn disk(r: f64) -> BivariatePolynomial {
        BivariatePolynomial::from_terms(2, &[(0, 0, -r * r), (2, 0, 1.0), (0, 2, 1.0)]).unwrap()
    }

    fn quartic() -> BivariatePolynomial {
        BivariatePolynomial::from_terms(4, &[(4, 0, 1.0), (0, 4, 1.0), (2, 2, 0.6), (2, 1, 0.5), (1, 0, 0.3), (0, 0, -2.0)])
            .unwrap()
            .translated(0.4, -0.3)
    }

    fn conventional(p: &BivariatePolynomial, plane: &ImagePlane, m: usize) -> (MomentTable, SampleGrid) {
        let kern = BSplineKernel::new(m);
        let (kr, lr) = default_ranges(plane, &kern);
        let grid = sample_shape(p, plane, &kern, kr, lr).unwrap();
        let wide = IndexRange::new(kr.min.min(lr.min), kr.max.max(lr.max));
        let repro = classical_coefficients(&kern, m, wide).unwrap();
        (moments_from_samples(&grid, &repro, m, m).unwrap(), grid)
    }

    #[test]
    fn disk_area_and_symmetry() {
        let plane = ImagePlane::unit(5.0).unwrap();
        let (t, _) = conventional(&disk(1.0), &plane, 6);
        assert!((t.values[(0, 0)] - PI).abs() < 1e-2);
        assert!(t.values[(1, 0)].abs() < 1e-2 && t.values[(0, 1)].abs() < 1e-2);
    }

    #[test]
    fn zero_image_has_zero_moments() {
        let plane = ImagePlane::unit(3.0).unwrap();
        let (t, grid) = conventional(&BivariatePolynomial::constant(2, 1.0), &plane, 4);
        assert!(t.values.iter().all(|&v| v == 0.0));
        let gm = GmCoefficients::bundled(6).unwrap();
        let big = ImagePlane::unit(10.0).unwrap();
        let kern = BSplineKernel::new(6);
        let (kr, lr) = default_ranges(&big, &kern);
        let zero = sample_shape(&BivariatePolynomial::constant(2, 1.0), &big, &kern, kr, lr).unwrap();
        for tab in generalized_moments_from_samples(&zero, &gm, 6, 6, (0, 0)).unwrap() {
            assert!(tab.values.iter().all(|&v| v == 0.0));
        }
        assert!(grid.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quartic_matches_oracle() {
        let plane = ImagePlane::unit(5.0).unwrap();
        let p = quartic();
        let (t, _) = conventional(&p, &plane, 6);
        let want = oracle_moments(&p, &plane, OracleWeight::Unweighted, 6, 6);
        let scale = oracle_moment_magnitudes(&p, &plane, OracleWeight::Unweighted, 6, 6);
        assert!(relative_error(&t, &want, &scale) < 1e-3);
    }

    #[test]
    fn fractional_period_moments_are_in_lattice_units() {
        // T = 1/2: lattice moments of a radius-1 disk equal those of a radius-2 disk
        let plane = ImagePlane::new(2.0, 0.5).unwrap();
        let (t, _) = conventional(&disk(1.0), &plane, 6);
        assert!((t.values[(0, 0)] - 4.0 * PI).abs() < 4e-2);
        let want = oracle_moments(&disk(1.0), &plane, OracleWeight::Unweighted, 2, 2);
        assert!((want.values[(2, 0)] - 4.0 * PI).abs() < 1e-3);
    }

    #[test]
    fn oracle_disk_values() {
        let plane = ImagePlane::unit(2.0).unwrap();
        let t = oracle_moments(&disk(1.0), &plane, OracleWeight::Unweighted, 2, 2);
        assert!((t.values[(0, 0)] - PI).abs() < 1e-4);
        assert!((t.values[(2, 0)] - PI / 4.0).abs() < 1e-4);
        assert!((t.values[(0, 2)] - PI / 4.0).abs() < 1e-4);
    }

    #[test]
    fn oracle_full_plane_is_separable() {
        let plane = ImagePlane::unit(1.5).unwrap();
        let t = oracle_moments(&BivariatePolynomial::constant(2, -1.0), &plane, OracleWeight::Unweighted, 4, 4);
        let one_d = |i: usize| power_integral(-1.5, 1.5, i);
        for i in 0..=4 {
            for j in 0..=4 {
                assert!((t.values[(i, j)] - one_d(i) * one_d(j)).abs() < 1e-6 * (1.0 + one_d(i).abs() * one_d(j).abs()));
            }
        }
    }

    #[test]
    fn order_beyond_reproduction_is_rejected() {
        let plane = ImagePlane::unit(3.0).unwrap();
        let kern = BSplineKernel::new(2);
        let (kr, lr) = default_ranges(&plane, &kern);
        let grid = sample_shape(&disk(1.0), &plane, &kern, kr, lr).unwrap();
        let repro = classical_coefficients(&kern, 2, kr).unwrap();
        assert!(matches!(moments_from_samples(&grid, &repro, 3, 0), Err(Error::OrderTooHigh { .. })));
    }

    fn gm_plane() -> (ImagePlane, BSplineKernel, GmCoefficients) {
        (ImagePlane::unit(10.0).unwrap(), BSplineKernel::new(6), GmCoefficients::bundled(6).unwrap())
    }

    #[test]
    fn generalized_all_ones_matches_integral_of_g() {
        let (plane, kern, gm) = gm_plane();
        let (kr, lr) = default_ranges(&plane, &kern);
        let grid = sample_shape(&BivariatePolynomial::constant(2, -1.0), &plane, &kern, kr, lr).unwrap();
        let [gg, _, _] = generalized_moments_from_samples(&grid, &gm, 2, 2, (0, 0)).unwrap();
        // ∫_{-L}^{L} g by Gauss–Legendre on knot pieces
        let rule = gauss_rule(8);
        let mut int_g = 0.0;
        let mut a: f64 = -10.0;
        while a < 10.0 {
            let b = (a + 0.5).min(10.0);
            int_g += rule
                .iter()
                .map(|&(t, w)| 0.5 * (b - a) * w * gm.g(0.5 * (a + b) + 0.5 * (b - a) * t))
                .sum::<f64>();
            a = b;
        }
        assert!((gg.values[(0, 0)] - int_g * int_g).abs() < 1e-6 * int_g * int_g);
    }

    #[test]
    fn generalized_matches_oracle() {
        let (plane, kern, gm) = gm_plane();
        let (kr, lr) = default_ranges(&plane, &kern);
        let p = quartic().magnified(2.5);
        let grid = sample_shape(&p, &plane, &kern, kr, lr).unwrap();
        let got = generalized_moments_from_samples(&grid, &gm, 6, 6, (0, 0)).unwrap();
        for tab in &got {
            let w = OracleWeight::Generalized {
                coefs: &gm,
                center: (0, 0),
                kind: tab.kind,
            };
            let want = oracle_moments(&p, &plane, w, 6, 6);
            let scale = oracle_moment_magnitudes(&p, &plane, w, 6, 6);
            let err = relative_error(tab, &want, &scale);
            assert!(err < 1e-3, "{:?}: {err}", tab.kind);
        }
    }

    #[test]
    fn window_shift_covariance() {
        let (_, kern, gm) = gm_plane();
        let plane = ImagePlane::unit(11.0).unwrap();
        let (kr, lr) = default_ranges(&plane, &kern);
        let p = quartic();
        let a = sample_shape(&p, &plane, &kern, kr, lr).unwrap();
        let b = sample_shape(&p.translated(-1.0, 0.0), &plane, &kern, kr, lr).unwrap();
        let ta = generalized_moments_from_samples(&a, &gm, 4, 4, (0, 0)).unwrap();
        let tb = generalized_moments_from_samples(&b, &gm, 4, 4, (-1, 0)).unwrap();
        for (x, y) in ta.iter().zip(&tb) {
            let scale = x.values.amax();
            assert!((&x.values - &y.values).amax() < 1e-3 * scale);
        }
    }

    #[test]
    fn window_outside_grid_is_rejected() {
        let (plane, kern, gm) = gm_plane();
        let (kr, lr) = default_ranges(&plane, &kern);
        let grid = sample_shape(&disk(1.0), &plane, &kern, kr, lr).unwrap();
        assert!(matches!(
            generalized_moments_from_samples(&grid, &gm, 2, 2, (1, 0)),
            Err(Error::WindowOutOfRange(1, 0))
        ));
        assert!(matches!(
            generalized_moments_from_samples(&grid, &gm, 7, 2, (0, 0)),
            Err(Error::OrderTooHigh { .. })
        ));
    }

    #[test]
    fn json_layout() {
        let mut t = MomentTable::zeros(MomentKind::GPrimeG, 1, 2, (3.0, -1.0));
        t.values[(1, 2)] = 0.5;
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(
            s,
            r#"{"kind":"gprime_g","order":[1,2],"center":[3.0,-1.0],"matrix":[[0.0,0.0,0.0],[0.0,0.0,0.5]]}"#
        );
        let back: MomentTable = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(matches!(t.get(2, 0), Err(Error::MissingMoment(2, 0))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn moments_are_linear_in_samples(scale in -3.0f64..3.0, shift in -0.5f64..0.5) {
            let plane = ImagePlane::unit(3.0).unwrap();
            let kern = BSplineKernel::new(4);
            let (kr, lr) = default_ranges(&plane, &kern);
            let repro = classical_coefficients(&kern, 4, kr).unwrap();
            let a = sample_shape(&disk(1.0), &plane, &kern, kr, lr).unwrap();
            let b = sample_shape(&disk(0.7).translated(shift, 0.0), &plane, &kern, kr, lr).unwrap();
            let mut c = a.clone();
            c.values = &a.values * scale + &b.values;
            let ma = moments_from_samples(&a, &repro, 4, 4).unwrap();
            let mb = moments_from_samples(&b, &repro, 4, 4).unwrap();
            let mc = moments_from_samples(&c, &repro, 4, 4).unwrap();
            let combo = &ma.values * scale + &mb.values;
            prop_assert!((mc.values - combo).amax() < 1e-9 * (1.0 + ma.values.amax()));
        }
    }
}
