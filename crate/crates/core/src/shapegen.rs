//! Test shapes: bounded quartics, ellipses, half-plane-like quartics and
//! closed spline curves. Polynomial shapes are generated on `Ω = [-1, 1]²`;
//! callers enlarge them with [`BivariatePolynomial::magnified`].

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly2d::{render_shape, BivariatePolynomial, ImagePlane, Raster};

pub const MAX_TRIES: usize = 100;
pub const DIRECTIONS: usize = 720;
pub const POLYLINE_SEGMENTS: usize = 1024;
/// Generated bounded shapes stay inside `[-EXTENT, EXTENT]²`.
pub const EXTENT: f64 = 0.9;
const CHECK_RESOLUTION: usize = 128;

/// Description of a generated shape, as stored in fixture manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    BoundedQuartic { seed: u64 },
    Conic { center: [f64; 2], axes: [f64; 2], angle: f64 },
    HalfSpace { angle: f64, offset: f64, bend: [f64; 3] },
    Bezier { points: [[f64; 2]; 4] },
}

impl ShapeSpec {
    /// The polynomial of an algebraic spec; `None` for spline curves.
    pub fn polynomial(&self) -> Result<Option<BivariatePolynomial>> {
        Ok(Some(match *self {
            ShapeSpec::BoundedQuartic { seed } => gen_bounded_quartic(seed)?,
            ShapeSpec::Conic { center, axes, angle } => gen_conic(center, axes, angle)?,
            ShapeSpec::HalfSpace { angle, offset, bend } => gen_half_space(angle, offset, bend),
            ShapeSpec::Bezier { .. } => return Ok(None),
        }))
    }
}

/// Minimum of the degree-`d` leading form over `count` unit directions.
pub fn leading_form_min(p: &BivariatePolynomial, count: usize) -> f64 {
    let d = p.degree();
    (0..count)
        .map(|t| {
            let th = 2.0 * PI * t as f64 / count as f64;
            let (c, s) = (th.cos(), th.sin());
            (0..=d).map(|i| p.coeff(i, d - i) * c.powi(i as i32) * s.powi((d - i) as i32)).sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

fn random_form(rng: &mut ChaCha8Rng, degree: usize, sd: f64) -> Vec<(usize, usize, f64)> {
    (0..=degree)
        .map(|i| {
            let z: f64 = StandardNormal.sample(rng);
            (i, degree - i, sd * z)
        })
        .collect()
}

fn square(q: &[(usize, usize, f64)]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for &(i1, j1, a) in q {
        for &(i2, j2, b) in q {
            out.push((i1 + i2, j1 + j2, a * b));
        }
    }
    out
}

fn accumulate(p: &mut BivariatePolynomial, terms: &[(usize, usize, f64)]) {
    for &(i, j, v) in terms {
        p.set_coeff(i, j, p.coeff(i, j) + v);
    }
}

/// Random quartic with positive leading form and a nonempty sublevel set
/// strictly inside `[-EXTENT, EXTENT]²`, normalized to unit coefficient norm.
pub fn gen_bounded_quartic(seed: u64) -> Result<BivariatePolynomial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_TRIES {
        let mut p = BivariatePolynomial::zero(4);
        let q1 = random_form(&mut rng, 2, 1.0);
        let q2 = random_form(&mut rng, 2, 1.0);
        accumulate(&mut p, &square(&q1));
        accumulate(&mut p, &square(&q2));
        let eta = rng.random_range(0.1..0.5);
        accumulate(&mut p, &[(4, 0, eta), (0, 4, eta)]);
        for d in 1..=3 {
            let terms = random_form(&mut rng, d, 0.8);
            accumulate(&mut p, &terms);
        }
        let level = rng.random_range(0.3..0.8);
        if let Some(p) = place_level(p, level) {
            if accept_bounded(&p) {
                return Ok(p.scaled(1.0 / p.norm()));
            }
        }
    }
    Err(Error::ShapeRejected(format!("no admissible quartic in {MAX_TRIES} tries")))
}

/// Sets the constant term so the zero level sits a fraction `level` of the way
/// from the interior minimum to the minimum on the boundary of the box.
fn place_level(mut p: BivariatePolynomial, level: f64) -> Option<BivariatePolynomial> {
    let n = 181;
    let at = |s: usize| -EXTENT + 2.0 * EXTENT * s as f64 / (n - 1) as f64;
    let mut inner = f64::INFINITY;
    let mut edge = f64::INFINITY;
    for a in 0..n {
        for b in 0..n {
            let v = p.evaluate(at(a), at(b));
            if a == 0 || b == 0 || a == n - 1 || b == n - 1 {
                edge = edge.min(v);
            } else {
                inner = inner.min(v);
            }
        }
    }
    if !(inner < edge) {
        return None;
    }
    let c = inner + level * (edge - inner);
    p.set_coeff(0, 0, p.coeff(0, 0) - c);
    Some(p)
}

fn accept_bounded(p: &BivariatePolynomial) -> bool {
    if leading_form_min(p, DIRECTIONS) <= 0.0 {
        return false;
    }
    // the whole sublevel set, not just the part inside Ω, must sit in the box
    let wide = ImagePlane::unit(4.0).expect("valid");
    let Ok(r) = render_shape(p, &wide, 32) else { return false };
    let box_ok = (0..r.height).all(|row| (0..r.width).all(|col| r.get(row, col) == 0 || (r.col_x(col).abs() <= EXTENT && r.row_y(row).abs() <= EXTENT)));
    if !box_ok {
        return false;
    }
    let unit = ImagePlane::unit(1.0).expect("valid");
    let Ok(r) = render_shape(p, &unit, CHECK_RESOLUTION) else { return false };
    // tiny shapes are not useful fixtures
    r.area() >= 0.05 && !r.touches_border() && r.count_components() <= 4
}

/// Ellipse with semi-axes `axes` rotated by `angle`: `x'²/a² + y'²/b² - 1`.
pub fn gen_conic(center: [f64; 2], axes: [f64; 2], angle: f64) -> Result<BivariatePolynomial> {
    let [a, b] = axes;
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::invalid("ellipse axes must be positive"));
    }
    let (c, s) = (angle.cos(), angle.sin());
    let (ia, ib) = (1.0 / (a * a), 1.0 / (b * b));
    // x' = c x + s y, y' = -s x + c y
    let p = BivariatePolynomial::from_terms(
        2,
        &[
            (2, 0, c * c * ia + s * s * ib),
            (1, 1, 2.0 * c * s * (ia - ib)),
            (0, 2, s * s * ia + c * c * ib),
            (0, 0, -1.0),
        ],
    )?;
    Ok(p.translated(center[0], center[1]))
}

/// Region `u - offset + b₂ v² + b₃ v³ + b₄ v⁴ <= 0` with `u` along the
/// direction `angle` and `v` across it; unbounded, degree 4 when `b₄ ≠ 0`.
pub fn gen_half_space(angle: f64, offset: f64, bend: [f64; 3]) -> BivariatePolynomial {
    let (c, s) = (angle.cos(), angle.sin());
    let mut p = BivariatePolynomial::from_terms(4, &[(1, 0, c), (0, 1, s), (0, 0, -offset)]).expect("in range");
    // powers of v = -s x + c y by the binomial expansion
    for (k, &b) in bend.iter().enumerate() {
        let d = k + 2;
        for i in 0..=d {
            let coef = crate::poly2d::binomial(d, i) * (-s).powi(i as i32) * c.powi((d - i) as i32);
            accumulate(&mut p, &[(i, d - i, b * coef)]);
        }
    }
    p
}

/// Closed spline shape: boundary polyline and filled raster.
#[derive(Debug, Clone, PartialEq)]
pub struct BezierShape {
    pub points: [[f64; 2]; 4],
    /// Closed polyline; the last vertex connects to the first.
    pub polyline: Vec<[f64; 2]>,
    pub raster: Raster,
}

impl BezierShape {
    /// Shoelace area of the polyline.
    pub fn polygon_area(&self) -> f64 {
        shoelace(&self.polyline)
    }
}

fn shoelace(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// Closed curve through the cyclic control polygon: four uniform cubic
/// B-spline pieces, each a cubic Bézier arc, joined with C² continuity.
pub fn bezier_polyline(points: &[[f64; 2]; 4], segments: usize) -> Vec<[f64; 2]> {
    let per = segments / 4;
    let mut out = Vec::with_capacity(4 * per);
    for piece in 0..4 {
        let p = |k: usize| points[(piece + k) % 4];
        for s in 0..per {
            let t = s as f64 / per as f64;
            let w = [
                (1.0 - t).powi(3),
                3.0 * t.powi(3) - 6.0 * t * t + 4.0,
                -3.0 * t.powi(3) + 3.0 * t * t + 3.0 * t + 1.0,
                t.powi(3),
            ];
            let x = (0..4).map(|k| w[k] * p(k)[0]).sum::<f64>() / 6.0;
            let y = (0..4).map(|k| w[k] * p(k)[1]).sum::<f64>() / 6.0;
            out.push([x, y]);
        }
    }
    out
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (d1, d2) = (orient(a, b, c), orient(a, b, d));
    let (d3, d4) = (orient(c, d, a), orient(c, d, b));
    // touching counts: only non-adjacent segments are compared
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

fn self_intersects(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let seg = |i: usize| (poly[i], poly[(i + 1) % n]);
    (0..n).any(|i| {
        let (a, b) = seg(i);
        (i + 2..n).filter(|&j| (j + 1) % n != i).any(|j| {
            let (c, d) = seg(j);
            let disjoint_boxes =
                a[0].max(b[0]) < c[0].min(d[0]) || c[0].max(d[0]) < a[0].min(b[0]) || a[1].max(b[1]) < c[1].min(d[1]) || c[1].max(d[1]) < a[1].min(b[1]);
            !disjoint_boxes && segments_cross(a, b, c, d)
        })
    })
}

/// Even-odd fill of a closed polyline at pixel centers.
pub fn rasterize_polygon(poly: &[[f64; 2]], half_width: f64, resolution: f64) -> Result<Raster> {
    let mut r = Raster::filled(half_width, resolution, 0)?;
    let n = poly.len();
    let mut xs = Vec::new();
    for row in 0..r.height {
        let y = r.row_y(row);
        xs.clear();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a[1] <= y) != (b[1] <= y) {
                xs.push(a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let lo = ((pair[0] + half_width) * resolution - 0.5).ceil().max(0.0) as usize;
            let hi = ((pair[1] + half_width) * resolution - 0.5).floor();
            if hi < 0.0 {
                continue;
            }
            for col in lo..=(hi as usize).min(r.width - 1) {
                r.data[row * r.width + col] = 1;
            }
        }
    }
    Ok(r)
}

/// Closed spline shape rasterized over `[-L, L]²` at `resolution` pixels per
/// unit. Pass the sampler's sub-cell density to feed
/// [`crate::sampler::sample_raster`].
pub fn gen_bezier_shape(points: [[f64; 2]; 4], half_width: f64, resolution: f64) -> Result<BezierShape> {
    if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::invalid("control points must be finite"));
    }
    let polyline = bezier_polyline(&points, POLYLINE_SEGMENTS);
    let extent = polyline.iter().flat_map(|p| [p[0].abs(), p[1].abs()]).fold(0.0, f64::max);
    let area = shoelace(&polyline);
    if self_intersects(&polyline) {
        return Err(Error::ShapeRejected("self-intersecting boundary".into()));
    }
    if area <= 1e-9 * extent.max(1.0).powi(2) {
        return Err(Error::ShapeRejected("degenerate control polygon".into()));
    }
    if extent >= half_width {
        return Err(Error::ShapeRejected("curve leaves the image plane".into()));
    }
    let raster = rasterize_polygon(&polyline, half_width, resolution)?;
    Ok(BezierShape { points, polyline, raster })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_quartics_are_admissible() {
        let unit = ImagePlane::unit(1.0).unwrap();
        for seed in 0..12 {
            let p = gen_bounded_quartic(seed).unwrap();
            assert_eq!(p.degree(), 4);
            assert!(leading_form_min(&p, DIRECTIONS) > 0.0);
            let r = render_shape(&p, &unit, 256).unwrap();
            assert!(!r.touches_border());
            assert!(r.count_ones() > 0);
            assert!(r.count_components() <= 4);
        }
    }

    #[test]
    fn bounded_quartic_is_deterministic() {
        assert_eq!(gen_bounded_quartic(7).unwrap(), gen_bounded_quartic(7).unwrap());
        assert_ne!(gen_bounded_quartic(7).unwrap(), gen_bounded_quartic(8).unwrap());
    }

    #[test]
    fn unit_circle_conic() {
        let p = gen_conic([0.0, 0.0], [1.0, 1.0], 0.0).unwrap();
        assert_eq!(p.coeffs(), &[-1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn conic_vertices_and_area() {
        let p = gen_conic([0.0, 0.0], [2.0, 1.0], 0.0).unwrap();
        assert!(p.evaluate(2.0, 0.0).abs() < 1e-15);
        assert!(p.evaluate(0.0, 1.0).abs() < 1e-15);
        let q = gen_conic([0.3, -0.2], [1.5, 0.7], 0.6).unwrap();
        let r = render_shape(&q, &ImagePlane::unit(2.0).unwrap(), 256).unwrap();
        let want = PI * 1.5 * 0.7;
        assert!((r.area() - want).abs() / want < 5e-3);
        // rotated vertex
        let (x, y) = (0.3 + 1.5 * 0.6f64.cos(), -0.2 + 1.5 * 0.6f64.sin());
        assert!(q.evaluate(x, y).abs() < 1e-12);
        assert!(gen_conic([0.0, 0.0], [0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn half_space_is_unbounded_quartic() {
        let p = gen_half_space(0.3, 0.1, [0.2, -0.1, 0.05]);
        assert_eq!(p.degree(), 4);
        let r = render_shape(&p, &ImagePlane::unit(1.0).unwrap(), 128).unwrap();
        assert!(r.touches_border());
        // straight line reduces to the half plane u <= offset
        let flat = gen_half_space(0.0, 0.25, [0.0; 3]);
        assert!(flat.evaluate(0.25, 0.7).abs() < 1e-15);
        // v coordinate along (-sin, cos)
        let (th, v) = (0.4f64, 0.5);
        let (x, y) = (-th.sin() * v, th.cos() * v);
        let bent = gen_half_space(th, 0.0, [1.0, 0.0, 0.0]);
        assert!((bent.evaluate(x, y) - v * v).abs() < 1e-12);
    }

    const SQUARE: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

    #[test]
    fn bezier_square_loop_area() {
        let s = gen_bezier_shape(SQUARE, 1.5, 256.0).unwrap();
        assert_eq!(s.polyline.len(), POLYLINE_SEGMENTS);
        assert_eq!(s.raster.count_components(), 1);
        let want = s.polygon_area();
        assert!((s.raster.area() - want).abs() / want < 1e-2);
        assert!((want - green_area(&SQUARE)).abs() < 1e-4);
    }

    /// `½∮(x dy - y dx)` with the analytic derivative of each cubic piece.
    fn green_area(pts: &[[f64; 2]; 4]) -> f64 {
        let steps = 20_000;
        let mut acc = 0.0;
        for piece in 0..4 {
            let p = |k: usize| pts[(piece + k) % 4];
            for s in 0..steps {
                let t = (s as f64 + 0.5) / steps as f64;
                let w = [
                    (1.0 - t).powi(3),
                    3.0 * t.powi(3) - 6.0 * t * t + 4.0,
                    -3.0 * t.powi(3) + 3.0 * t * t + 3.0 * t + 1.0,
                    t.powi(3),
                ];
                let dw = [-3.0 * (1.0 - t).powi(2), 9.0 * t * t - 12.0 * t, -9.0 * t * t + 6.0 * t + 3.0, 3.0 * t * t];
                let c = |ws: &[f64; 4], a: usize| (0..4).map(|k| ws[k] * p(k)[a]).sum::<f64>() / 6.0;
                acc += (c(&w, 0) * c(&dw, 1) - c(&w, 1) * c(&dw, 0)) / steps as f64;
            }
        }
        0.5 * acc.abs()
    }

    #[test]
    fn bezier_rejections() {
        assert!(matches!(gen_bezier_shape([[0.2, 0.2]; 4], 2.0, 64.0), Err(Error::ShapeRejected(_))));
        let bowtie = [[-1.0, -1.0], [1.0, 1.0], [1.0, -1.0], [-1.0, 1.0]];
        let err = gen_bezier_shape(bowtie, 2.0, 64.0).unwrap_err().to_string();
        assert!(err.contains("self-intersecting"), "{err}");
        let skew = [[-1.0, -1.2], [1.1, 0.9], [0.8, -1.0], [-1.0, 1.3]];
        let err = gen_bezier_shape(skew, 2.0, 64.0).unwrap_err().to_string();
        assert!(err.contains("self-intersecting"), "{err}");
        assert!(gen_bezier_shape(SQUARE, 0.5, 64.0).is_err());
    }

    #[test]
    fn spec_round_trip() {
        let s = ShapeSpec::Conic {
            center: [0.0, 0.5],
            axes: [1.0, 2.0],
            angle: 0.1,
        };
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"kind\":\"conic\""));
        assert_eq!(serde_json::from_str::<ShapeSpec>(&j).unwrap(), s);
        assert!(ShapeSpec::Bezier { points: SQUARE }.polynomial().unwrap().is_none());
    }
}
