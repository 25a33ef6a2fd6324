//! Bivariate polynomials, the image plane, coordinate shifts and rendering of
//! the binary shape `1{p <= 0}`.
//!
//! Coefficients are stored densely in graded order: by total degree first,
//! then by the power of `x` ascending. For degree 2 the order is
//! `1, y, x, y², xy, x²`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of monomials `x^i y^j` with `i + j <= degree`.
pub const fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Position of `x^i y^j` in the graded coefficient vector.
pub const fn monomial_index(i: usize, j: usize) -> usize {
    let d = i + j;
    d * (d + 1) / 2 + i
}

/// Inverse of [`monomial_index`].
pub fn monomial_at(index: usize) -> (usize, usize) {
    let mut d = 0;
    while num_coeffs(d) <= index {
        d += 1;
    }
    let i = index - d * (d + 1) / 2;
    (i, d - i)
}

/// Iterates `(i, j)` over all monomials of a given degree bound, in graded order.
pub fn monomials(degree: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..=degree).flat_map(|d| (0..=d).map(move |i| (i, d - i)))
}

/// Binomial coefficient as a float; exact for the small arguments used here.
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

/// Implicit polynomial `p(x, y) = Σ a_{i,j} x^i y^j` of structural degree `n`.
///
/// The degree is part of the type, not derived from the coefficients: a
/// degree-4 polynomial whose quartic terms vanish is still degree 4.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariatePolynomial {
    degree: usize,
    coeffs: Vec<f64>,
}

impl BivariatePolynomial {
    pub fn zero(degree: usize) -> Self {
        Self {
            degree,
            coeffs: vec![0.0; num_coeffs(degree)],
        }
    }

    pub fn constant(degree: usize, value: f64) -> Self {
        let mut p = Self::zero(degree);
        p.coeffs[0] = value;
        p
    }

    /// Builds a polynomial from a dense graded coefficient vector.
    pub fn from_coeffs(degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != num_coeffs(degree) {
            return Err(Error::invalid(format!(
                "degree {degree} needs {} coefficients, got {}",
                num_coeffs(degree),
                coeffs.len()
            )));
        }
        Ok(Self { degree, coeffs })
    }

    /// Builds a polynomial from `(i, j, a_ij)` triples; repeated monomials add up.
    pub fn from_terms(degree: usize, terms: &[(usize, usize, f64)]) -> Result<Self> {
        let mut p = Self::zero(degree);
        for &(i, j, a) in terms {
            if i + j > degree {
                return Err(Error::invalid(format!("monomial x^{i} y^{j} exceeds degree {degree}")));
            }
            p.coeffs[monomial_index(i, j)] += a;
        }
        Ok(p)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i + j > self.degree {
            0.0
        } else {
            self.coeffs[monomial_index(i, j)]
        }
    }

    pub fn set_coeff(&mut self, i: usize, j: usize, a: f64) {
        assert!(i + j <= self.degree, "monomial exceeds degree");
        self.coeffs[monomial_index(i, j)] = a;
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }

    /// Evaluates `p(x, y)` by nested Horner schemes: outer in `x`, inner in `y`.
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        let n = self.degree;
        let mut acc = 0.0;
        for i in (0..=n).rev() {
            let mut inner = 0.0;
            for j in (0..=n - i).rev() {
                inner = inner * y + self.coeffs[monomial_index(i, j)];
            }
            acc = acc * x + inner;
        }
        acc
    }

    /// Coefficients of the univariate polynomial `x ↦ p(x, y)`, constant first.
    pub fn restrict_y(&self, y: f64) -> Vec<f64> {
        let n = self.degree;
        (0..=n)
            .map(|i| (0..=n - i).rev().fold(0.0, |acc, j| acc * y + self.coeffs[monomial_index(i, j)]))
            .collect()
    }

    /// Value and gradient `(p, ∂p/∂x, ∂p/∂y)`.
    pub fn evaluate_with_gradient(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let n = self.degree;
        let (mut v, mut dx, mut dy) = (0.0, 0.0, 0.0);
        for i in (0..=n).rev() {
            let (mut q, mut dq) = (0.0, 0.0);
            for j in (0..=n - i).rev() {
                dq = dq * y + q;
                q = q * y + self.coeffs[monomial_index(i, j)];
            }
            dx = dx * x + v;
            v = v * x + q;
            dy = dy * x + dq;
        }
        (v, dx, dy)
    }

    /// Multiplies every coefficient by `c`; the zero set is unchanged for `c != 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|a| a * c).collect(),
        }
    }

    /// Returns `q(x, y) = p(x / s, y / s)`, i.e. the shape magnified by `s`.
    pub fn magnified(&self, s: f64) -> Self {
        let coeffs = monomials(self.degree).zip(&self.coeffs).map(|((i, j), a)| a / s.powi((i + j) as i32)).collect();
        Self { degree: self.degree, coeffs }
    }

    /// Returns `q(x, y) = p(x - x0, y - y0)`, the shape translated by `(x0, y0)`.
    pub fn translated(&self, x0: f64, y0: f64) -> Self {
        ShiftMatrix::new(self.degree, -x0, -y0).apply(self)
    }

    /// Re-expresses the polynomial with a larger structural degree.
    pub fn with_degree(&self, degree: usize) -> Result<Self> {
        if degree < self.degree {
            let dropped = monomials(self.degree).zip(&self.coeffs).any(|((i, j), a)| i + j > degree && *a != 0.0);
            if dropped {
                return Err(Error::invalid("cannot lower degree of polynomial with nonzero high-order terms"));
            }
        }
        let mut p = Self::zero(degree);
        for ((i, j), a) in monomials(self.degree).zip(&self.coeffs) {
            if i + j <= degree {
                p.coeffs[monomial_index(i, j)] = *a;
            }
        }
        Ok(p)
    }

    /// Euclidean norm of the coefficient vector.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    i: usize,
    j: usize,
    a: f64,
}

#[derive(Serialize, Deserialize)]
struct PolyJson {
    degree: usize,
    coeffs: Vec<TermJson>,
}

impl Serialize for BivariatePolynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let coeffs = monomials(self.degree)
            .zip(&self.coeffs)
            .filter(|(_, a)| **a != 0.0)
            .map(|((i, j), a)| TermJson { i, j, a: *a })
            .collect();
        PolyJson { degree: self.degree, coeffs }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BivariatePolynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PolyJson::deserialize(d)?;
        let terms: Vec<_> = raw.coeffs.iter().map(|t| (t.i, t.j, t.a)).collect();
        BivariatePolynomial::from_terms(raw.degree, &terms).map_err(serde::de::Error::custom)
    }
}

/// Square image domain `[-L, L]²` sampled on a lattice of period `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePlane {
    pub half_width: f64,
    pub period: f64,
}

impl ImagePlane {
    pub fn new(half_width: f64, period: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::invalid("half width must be positive"));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::invalid("period must be positive"));
        }
        let cells = 2.0 * half_width / period;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
            return Err(Error::invalid(format!(
                "2L/T = {cells} is not an integer; the lattice must align with the domain"
            )));
        }
        Ok(Self { half_width, period })
    }

    /// Plane with unit period.
    pub fn unit(half_width: f64) -> Result<Self> {
        Self::new(half_width, 1.0)
    }

    /// Plane whose lattice has `cells` periods across the domain.
    pub fn with_cells(half_width: f64, cells: usize) -> Result<Self> {
        Self::new(half_width, 2.0 * half_width / cells as f64)
    }

    /// Number of lattice periods across the domain, `2L/T`.
    pub fn cells(&self) -> usize {
        (2.0 * self.half_width / self.period).round() as usize
    }

    /// Half width measured in lattice units, `L/T`.
    pub fn lattice_half_width(&self) -> f64 {
        self.half_width / self.period
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.half_width && y.abs() <= self.half_width
    }
}

/// Linear map taking the coefficients of `p` to those of `p(x + x0, y + y0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMatrix {
    center: (f64, f64),
    entries: DMatrix<f64>,
}

impl ShiftMatrix {
    /// `b_{k,l} = Σ C(i,k) C(j,l) x0^(i-k) y0^(j-l) a_{i,j}`.
    pub fn new(degree: usize, x0: f64, y0: f64) -> Self {
        let n = num_coeffs(degree);
        let mut entries = DMatrix::zeros(n, n);
        for (col, (i, j)) in monomials(degree).enumerate() {
            for k in 0..=i {
                for l in 0..=j {
                    let row = monomial_index(k, l);
                    entries[(row, col)] = binomial(i, k) * binomial(j, l) * x0.powi((i - k) as i32) * y0.powi((j - l) as i32);
                }
            }
        }
        Self { center: (x0, y0), entries }
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn degree(&self) -> usize {
        let mut d = 0;
        while num_coeffs(d) < self.entries.nrows() {
            d += 1;
        }
        d
    }

    pub fn apply(&self, p: &BivariatePolynomial) -> BivariatePolynomial {
        assert_eq!(p.coeffs.len(), self.entries.nrows(), "degree mismatch");
        let b = &self.entries * p.as_vector();
        BivariatePolynomial {
            degree: p.degree,
            coeffs: b.as_slice().to_vec(),
        }
    }
}

/// Binary raster over `[-L, L]²`. Row 0 is the top edge (`y = +L`).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Pixels per unit length.
    pub resolution: f64,
    pub half_width: f64,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn filled(half_width: f64, resolution: f64, value: u8) -> Result<Self> {
        let side = pixels_across(half_width, resolution)?;
        Ok(Self {
            width: side,
            height: side,
            resolution,
            half_width,
            data: vec![value; side * side],
        })
    }

    /// Rasterizes an arbitrary inside-predicate at pixel centers.
    pub fn from_predicate(half_width: f64, resolution: f64, inside: impl Fn(f64, f64) -> bool) -> Result<Self> {
        let mut r = Self::filled(half_width, resolution, 0)?;
        for row in 0..r.height {
            let y = r.row_y(row);
            for col in 0..r.width {
                let x = r.col_x(col);
                r.data[row * r.width + col] = inside(x, y) as u8;
            }
        }
        Ok(r)
    }

    pub fn col_x(&self, col: usize) -> f64 {
        -self.half_width + (col as f64 + 0.5) / self.resolution
    }

    pub fn row_y(&self, row: usize) -> f64 {
        self.half_width - (row as f64 + 0.5) / self.resolution
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn pixel_area(&self) -> f64 {
        1.0 / (self.resolution * self.resolution)
    }

    /// Area of the set pixels.
    pub fn area(&self) -> f64 {
        self.count_ones() as f64 * self.pixel_area()
    }

    /// Number of pixels where the two rasters differ.
    pub fn count_differences(&self, other: &Raster) -> Result<usize> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::invalid("raster dimensions differ"));
        }
        Ok(self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count())
    }

    /// Pixelwise `|a - b|` as a raster.
    pub fn abs_difference(&self, other: &Raster) -> Result<Raster> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::invalid("raster dimensions differ"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| (a != b) as u8).collect();
        Ok(Raster { data, ..self.clone() })
    }

    /// True if any set pixel touches the outermost ring of pixels.
    pub fn touches_border(&self) -> bool {
        let (w, h) = (self.width, self.height);
        (0..w).any(|c| self.get(0, c) != 0 || self.get(h - 1, c) != 0) || (0..h).any(|r| self.get(r, 0) != 0 || self.get(r, w - 1) != 0)
    }

    /// Number of 4-connected components of set pixels.
    pub fn count_components(&self) -> usize {
        let (w, h) = (self.width, self.height);
        let mut seen = vec![false; w * h];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..w * h {
            if self.data[start] == 0 || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(idx) = stack.pop() {
                let (r, c) = (idx / w, idx % w);
                let mut visit = |n: usize| {
                    if self.data[n] != 0 && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                };
                if r > 0 {
                    visit(idx - w);
                }
                if r + 1 < h {
                    visit(idx + w);
                }
                if c > 0 {
                    visit(idx - 1);
                }
                if c + 1 < w {
                    visit(idx + 1);
                }
            }
        }
        count
    }
}

fn pixels_across(half_width: f64, resolution: f64) -> Result<usize> {
    if !(resolution > 0.0) {
        return Err(Error::invalid("resolution must be positive"));
    }
    let side = 2.0 * half_width * resolution;
    let rounded = side.round();
    if rounded < 1.0 || (side - rounded).abs() > 1e-6 {
        return Err(Error::invalid(format!("2L x resolution = {side} is not a positive integer")));
    }
    Ok(rounded as usize)
}

/// Renders `1{p <= 0}` at pixel centers over the plane; `resolution` is in
/// pixels per unit length.
pub fn render_shape(p: &BivariatePolynomial, plane: &ImagePlane, resolution: usize) -> Result<Raster> {
    if resolution == 0 {
        return Err(Error::invalid("resolution must be at least 1"));
    }
    Raster::from_predicate(plane.half_width, resolution as f64, |x, y| p.evaluate(x, y) <= 0.0)
}

/// Nodes per axis of the sign-change scan used to locate zero sets.
pub const ZERO_SET_SCAN: usize = 512;
const BISECTION_STEPS: usize = 30;

/// Points of `{p = 0} ∩ Ω` located on the edges of a regular scan grid.
pub fn boundary_points(p: &BivariatePolynomial, plane: &ImagePlane, scan: usize) -> Vec<(f64, f64)> {
    let l = plane.half_width;
    let h = 2.0 * l / scan as f64;
    let coord = |i: usize| -l + h * i as f64;
    let nodes = scan + 1;
    let mut values = vec![0.0; nodes * nodes];
    for r in 0..nodes {
        for c in 0..nodes {
            values[r * nodes + c] = p.evaluate(coord(c), coord(r));
        }
    }
    let mut pts = Vec::new();
    let push_root = |pts: &mut Vec<(f64, f64)>, (x0, y0): (f64, f64), (x1, y1): (f64, f64), v0: f64, v1: f64| {
        if v0 == 0.0 {
            pts.push((x0, y0));
            return;
        }
        if v0 * v1 >= 0.0 {
            return;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut vlo = v0;
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            let vm = p.evaluate(x0 + mid * (x1 - x0), y0 + mid * (y1 - y0));
            if vm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if (vm < 0.0) == (vlo < 0.0) {
                lo = mid;
                vlo = vm;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        pts.push((x0 + t * (x1 - x0), y0 + t * (y1 - y0)));
    };
    for r in 0..nodes {
        for c in 0..nodes {
            let v0 = values[r * nodes + c];
            let here = (coord(c), coord(r));
            if c + 1 < nodes {
                push_root(&mut pts, here, (coord(c + 1), coord(r)), v0, values[r * nodes + c + 1]);
            } else if v0 == 0.0 && r + 1 == nodes {
                pts.push(here);
            }
            if r + 1 < nodes {
                push_root(&mut pts, here, (coord(c), coord(r + 1)), v0, values[(r + 1) * nodes + c]);
            }
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

/// Uniform bucket grid for nearest-neighbor queries on a point cloud.
struct PointIndex {
    origin: f64,
    cell: f64,
    side: usize,
    buckets: Vec<Vec<(f64, f64)>>,
}

impl PointIndex {
    fn new(points: &[(f64, f64)], half_width: f64, side: usize) -> Self {
        let cell = 2.0 * half_width / side as f64;
        let mut buckets = vec![Vec::new(); side * side];
        let idx = PointIndex {
            origin: -half_width,
            cell,
            side,
            buckets: Vec::new(),
        };
        for &pt in points {
            let (bx, by) = idx.bucket_of(pt);
            buckets[by * side + bx].push(pt);
        }
        PointIndex { buckets, ..idx }
    }

    fn bucket_of(&self, (x, y): (f64, f64)) -> (usize, usize) {
        let clamp = |v: f64| (((v - self.origin) / self.cell).floor().max(0.0) as usize).min(self.side - 1);
        (clamp(x), clamp(y))
    }

    fn nearest(&self, pt: (f64, f64)) -> f64 {
        let (bx, by) = self.bucket_of(pt);
        let mut best = f64::INFINITY;
        for ring in 0..self.side {
            // every point in ring `ring` is at least (ring - 1) cells away
            if ring > 0 && (ring as f64 - 1.0) * self.cell > best {
                break;
            }
            let lo_x = bx.saturating_sub(ring);
            let hi_x = (bx + ring).min(self.side - 1);
            let lo_y = by.saturating_sub(ring);
            let hi_y = (by + ring).min(self.side - 1);
            for cy in lo_y..=hi_y {
                for cx in lo_x..=hi_x {
                    let on_ring = cx.abs_diff(bx) == ring || cy.abs_diff(by) == ring;
                    if !on_ring {
                        continue;
                    }
                    for q in &self.buckets[cy * self.side + cx] {
                        best = best.min(((q.0 - pt.0).powi(2) + (q.1 - pt.1).powi(2)).sqrt());
                    }
                }
            }
        }
        best
    }
}

/// Foot point of `pt` on `{q = 0}` by damped Newton projection, if it converges inside the plane.
fn newton_projection(q: &BivariatePolynomial, plane: &ImagePlane, pt: (f64, f64)) -> Option<(f64, f64)> {
    let (mut x, mut y) = pt;
    let scale = q.norm().max(f64::MIN_POSITIVE);
    for _ in 0..50 {
        let (v, gx, gy) = q.evaluate_with_gradient(x, y);
        let g2 = gx * gx + gy * gy;
        if v.abs() <= 1e-13 * scale {
            break;
        }
        if g2 == 0.0 {
            return None;
        }
        x -= v * gx / g2;
        y -= v * gy / g2;
    }
    let (v, gx, gy) = q.evaluate_with_gradient(x, y);
    let g = (gx * gx + gy * gy).sqrt();
    let on_curve = v.abs() <= 1e-10 * scale || (g > 0.0 && v.abs() / g < 1e-10);
    (on_curve && plane.contains(x, y)).then_some((x, y))
}

/// One-sided Hausdorff distance from `{p = 0} ∩ Ω` to `{q = 0} ∩ Ω`.
///
/// Returns `None` when `p` has no sign change on the scan grid, i.e. its
/// zero set does not cross the plane.
pub fn zero_set_distance(p: &BivariatePolynomial, q: &BivariatePolynomial, plane: &ImagePlane) -> Option<f64> {
    let from = boundary_points(p, plane, ZERO_SET_SCAN);
    if from.is_empty() {
        return None;
    }
    let to = boundary_points(q, plane, ZERO_SET_SCAN);
    let index = PointIndex::new(&to, plane.half_width, 64);
    let worst = from
        .iter()
        .map(|&pt| {
            let mut d = if to.is_empty() { f64::INFINITY } else { index.nearest(pt) };
            if let Some(foot) = newton_projection(q, plane, pt) {
                d = d.min(((foot.0 - pt.0).powi(2) + (foot.1 - pt.1).powi(2)).sqrt());
            }
            d
        })
        .fold(0.0, f64::max);
    Some(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn circle(r2: f64) -> BivariatePolynomial {
        BivariatePolynomial::from_terms(2, &[(0, 0, -r2), (2, 0, 1.0), (0, 2, 1.0)]).unwrap()
    }

    fn random_poly(rng: &mut ChaCha8Rng, degree: usize) -> BivariatePolynomial {
        let c = (0..num_coeffs(degree)).map(|_| rng.random_range(-1.0..1.0)).collect();
        BivariatePolynomial::from_coeffs(degree, c).unwrap()
    }

    #[test]
    fn index_roundtrip() {
        for (idx, (i, j)) in monomials(6).enumerate() {
            assert_eq!(monomial_index(i, j), idx);
            assert_eq!(monomial_at(idx), (i, j));
        }
        assert_eq!(num_coeffs(4), 15);
        assert_eq!(monomial_at(2), (1, 0));
    }

    #[test]
    fn evaluate_examples() {
        let p = circle(1.0);
        assert_eq!(p.evaluate(1.0, 0.0), 0.0);
        assert_eq!(BivariatePolynomial::constant(3, 1.0).evaluate(7.3, -2.0), 1.0);
        assert!((p.evaluate(0.5, 0.5) - (0.25 + 0.25 - 1.0)).abs() < 1e-15);
        assert_eq!(p.coeffs(), &[-1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn horner_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_poly(&mut rng, 5);
        for _ in 0..50 {
            let (x, y): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let direct: f64 = monomials(5).map(|(i, j)| p.coeff(i, j) * x.powi(i as i32) * y.powi(j as i32)).sum();
            assert!((p.evaluate(x, y) - direct).abs() < 1e-10 * direct.abs().max(1.0));
            let (v, gx, gy) = p.evaluate_with_gradient(x, y);
            let h = 1e-6;
            let fx = (p.evaluate(x + h, y) - p.evaluate(x - h, y)) / (2.0 * h);
            let fy = (p.evaluate(x, y + h) - p.evaluate(x, y - h)) / (2.0 * h);
            assert!((v - direct).abs() < 1e-10 * direct.abs().max(1.0));
            assert!((gx - fx).abs() < 1e-5 * fx.abs().max(1.0));
            assert!((gy - fy).abs() < 1e-5 * fy.abs().max(1.0));
        }
    }

    #[test]
    fn degree_is_structural() {
        let p = BivariatePolynomial::from_terms(4, &[(1, 0, 1.0)]).unwrap();
        assert_eq!(p.degree(), 4);
        assert_eq!(p.coeffs().len(), 15);
        assert!(BivariatePolynomial::from_coeffs(2, vec![0.0; 5]).is_err());
    }

    #[test]
    fn json_format() {
        let p = circle(1.0);
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"degree\":2"));
        let q: BivariatePolynomial =
            serde_json::from_str(r#"{"degree":2,"coeffs":[{"i":2,"j":0,"a":1.0},{"i":0,"j":2,"a":1.0},{"i":0,"j":0,"a":-1.0}]}"#).unwrap();
        assert_eq!(p, q);
        assert!(serde_json::from_str::<BivariatePolynomial>(r#"{"degree":1,"coeffs":[{"i":2,"j":0,"a":1.0}]}"#).is_err());
    }

    #[test]
    fn plane_validation() {
        assert!(ImagePlane::new(2.0, 1.0).is_ok());
        assert!(ImagePlane::new(2.0, 0.3).is_err());
        assert!(ImagePlane::new(-1.0, 1.0).is_err());
        let p = ImagePlane::with_cells(2.0, 22).unwrap();
        assert_eq!(p.cells(), 22);
    }

    #[test]
    fn shift_matrix_examples() {
        let id = ShiftMatrix::new(4, 0.0, 0.0);
        assert_eq!(id.matrix(), &DMatrix::identity(15, 15));
        let px = BivariatePolynomial::from_terms(1, &[(1, 0, 1.0)]).unwrap();
        let b = ShiftMatrix::new(1, 2.0, 0.0).apply(&px);
        assert_eq!(b.coeff(0, 0), 2.0);
        assert_eq!(b.coeff(1, 0), 1.0);
        let c = ShiftMatrix::new(2, 1.0, 1.0).apply(&circle(1.0));
        assert!((c.evaluate(0.0, 0.0) - 1.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            assert!((c.evaluate(x, y) - circle(1.0).evaluate(x + 1.0, y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_matrix_is_unit_upper_triangular() {
        let b = ShiftMatrix::new(4, 0.7, -1.3);
        let m = b.matrix();
        for r in 0..m.nrows() {
            assert_eq!(m[(r, r)], 1.0);
            for c in 0..r {
                assert_eq!(m[(r, c)], 0.0);
            }
        }
        assert_eq!(b.degree(), 4);
    }

    #[test]
    fn translation_moves_the_zero_set() {
        let p = circle(1.0).translated(0.5, -0.25);
        assert!(p.evaluate(1.5, -0.25).abs() < 1e-14);
        assert!((p.evaluate(0.5, -0.25) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn render_examples() {
        let plane = ImagePlane::unit(2.0).unwrap();
        let all = render_shape(&BivariatePolynomial::constant(2, -1.0), &plane, 8).unwrap();
        assert_eq!(all.count_ones(), all.width * all.height);
        let disk = render_shape(&circle(1.0), &plane, 256).unwrap();
        assert!((disk.area() - std::f64::consts::PI).abs() / std::f64::consts::PI < 5e-3);
        assert_eq!(disk.count_components(), 1);
        assert!(!disk.touches_border());
        // the zero line belongs to the shape
        let half = BivariatePolynomial::from_terms(1, &[(1, 0, 1.0)]).unwrap();
        let hp = render_shape(&half, &ImagePlane::new(1.5, 1.5).unwrap(), 1).unwrap();
        assert_eq!(hp.col_x(1), 0.0);
        assert_eq!(hp.count_ones(), 6);
        let r = render_shape(&half, &ImagePlane::unit(1.0).unwrap(), 4).unwrap();
        assert_eq!(r.count_ones(), 32);
        assert!(r.touches_border());
    }

    #[test]
    fn zero_set_distance_examples() {
        let plane = ImagePlane::unit(2.0).unwrap();
        let p = circle(1.0);
        assert!(zero_set_distance(&p, &p, &plane).unwrap() < 1e-9);
        assert!(zero_set_distance(&p, &p.scaled(2.0), &plane).unwrap() < 1e-9);
        let d = zero_set_distance(&p, &circle(1.21), &plane).unwrap();
        assert!((d - 0.1).abs() < 2.0 * 4.0 / 512.0, "d = {d}");
        assert!(zero_set_distance(&BivariatePolynomial::constant(2, 1.0), &p, &plane).is_none());
        // q has no zero set in the plane
        assert_eq!(zero_set_distance(&p, &BivariatePolynomial::constant(2, 1.0), &plane), Some(f64::INFINITY));
    }

    proptest::proptest! {
        #[test]
        fn shift_composition(seed in 0u64..1000, x0 in -2.0f64..2.0, y0 in -2.0f64..2.0, x1 in -2.0f64..2.0, y1 in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_poly(&mut rng, 4);
            let two = ShiftMatrix::new(4, x0, y0).apply(&ShiftMatrix::new(4, x1, y1).apply(&p));
            let one = ShiftMatrix::new(4, x0 + x1, y0 + y1).apply(&p);
            let diff: f64 = two.coeffs().iter().zip(one.coeffs()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            proptest::prop_assert!(diff <= 1e-9 * one.norm().max(1.0));
        }

        #[test]
        fn render_is_scale_invariant(seed in 0u64..1000, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_poly(&mut rng, 3);
            let plane = ImagePlane::unit(1.0).unwrap();
            let a = render_shape(&p, &plane, 16).unwrap();
            let b = render_shape(&p.scaled(c), &plane, 16).unwrap();
            proptest::prop_assert_eq!(a, b);
        }

        #[test]
        fn render_complement(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_poly(&mut rng, 3);
            let plane = ImagePlane::unit(1.0).unwrap();
            let a = render_shape(&p, &plane, 16).unwrap();
            let b = render_shape(&p.scaled(-1.0), &plane, 16).unwrap();
            for row in 0..a.height {
                for col in 0..a.width {
                    let v = p.evaluate(a.col_x(col), a.row_y(row));
                    if v.abs() > 1e-12 {
                        proptest::prop_assert_eq!(a.get(row, col), 1 - b.get(row, col));
                    }
                }
            }
        }
    }
}
