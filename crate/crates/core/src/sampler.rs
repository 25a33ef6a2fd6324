//! Forward model: samples `d_{k,l}` of a binary shape through a separable
//! B-spline kernel, plus additive noise at a prescribed SNR.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bspline::BSplineKernel;
use crate::error::{Error, Result};
use crate::poly2d::{BivariatePolynomial, ImagePlane, Raster};

/// Default number of quadrature sub-cells per lattice period and axis.
pub const DEFAULT_SUBCELLS: usize = 64;

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexRange {
    pub min: i64,
    pub max: i64,
}

impl IndexRange {
    pub const fn new(min: i64, max: i64) -> Self {
        Self { min, max }
    }

    /// `[-k, k]`.
    pub const fn symmetric(k: i64) -> Self {
        Self { min: -k, max: k }
    }

    pub fn len(&self) -> usize {
        if self.max < self.min {
            0
        } else {
            (self.max - self.min + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, k: i64) -> bool {
        self.min <= k && k <= self.max
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> {
        self.min..=self.max
    }

    pub fn expanded(&self, by: i64) -> Self {
        Self::new(self.min - by, self.max + by)
    }
}

/// Noise metadata attached to a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseInfo {
    pub snr_db: f64,
    pub seed: u64,
}

/// Samples `d_{k,l}` on an integer lattice. `values[(k - k_min, l - l_min)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub values: DMatrix<f64>,
    pub k_range: IndexRange,
    pub l_range: IndexRange,
    pub kernel: BSplineKernel,
    pub plane: ImagePlane,
    pub noise: Option<NoiseInfo>,
}

impl SampleGrid {
    pub fn new(values: DMatrix<f64>, k_range: IndexRange, l_range: IndexRange, kernel: BSplineKernel, plane: ImagePlane) -> Result<Self> {
        if values.nrows() != k_range.len() || values.ncols() != l_range.len() {
            return Err(Error::invalid(format!(
                "sample matrix is {}x{} but ranges have {}x{} indices",
                values.nrows(),
                values.ncols(),
                k_range.len(),
                l_range.len()
            )));
        }
        Ok(Self {
            values,
            k_range,
            l_range,
            kernel,
            plane,
            noise: None,
        })
    }

    /// `d_{k,l}`; zero outside the stored ranges.
    pub fn get(&self, k: i64, l: i64) -> f64 {
        if self.k_range.contains(k) && self.l_range.contains(l) {
            self.values[((k - self.k_range.min) as usize, (l - self.l_range.min) as usize)]
        } else {
            0.0
        }
    }

    /// Iterates `(k, l, d_{k,l})`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
        self.k_range.iter().flat_map(move |k| self.l_range.iter().map(move |l| (k, l, self.get(k, l))))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Grid extended by `margin` indices on each side with zero samples.
    ///
    /// For an image restricted to the plane, samples whose kernel support
    /// misses the plane are exactly zero, so this adds known values rather
    /// than guesses, provided the grid already covers every overlapping index.
    pub fn zero_padded(&self, margin: usize) -> SampleGrid {
        let m = margin as i64;
        let k_range = self.k_range.expanded(m);
        let l_range = self.l_range.expanded(m);
        let mut values = DMatrix::zeros(k_range.len(), l_range.len());
        values
            .view_mut((margin, margin), (self.values.nrows(), self.values.ncols()))
            .copy_from(&self.values);
        SampleGrid {
            values,
            k_range,
            l_range,
            ..self.clone()
        }
    }
}

/// Lattice indices whose kernel support meets the plane, in both axes.
pub fn default_ranges(plane: &ImagePlane, kernel: &BSplineKernel) -> (IndexRange, IndexRange) {
    let r = kernel.overlapping_indices(plane.lattice_half_width());
    (r, r)
}

/// `∫ φ` over the interval of width `h` centered at `u`; exact when the
/// interval does not straddle a knot.
fn cell_integral(kernel: &BSplineKernel, u: f64, h: f64) -> f64 {
    let rule = crate::bspline::gauss_rule(kernel.order() / 2 + 1);
    0.5 * h * rule.iter().map(|&(t, w)| w * kernel.eval(u + 0.5 * h * t)).sum::<f64>()
}

/// Kernel integrals over every sub-cell, for the indices of `range`.
fn axis_weights(kernel: &BSplineKernel, plane: &ImagePlane, subcells: usize, range: IndexRange) -> Vec<Vec<(usize, f64)>> {
    let cells = plane.cells();
    let n = cells * subcells;
    let lh = plane.lattice_half_width();
    let hw = kernel.support_half_width();
    (0..n)
        .map(|s| {
            let u = -lh + (s as f64 + 0.5) / subcells as f64;
            let lo = ((u - hw).floor() as i64).max(range.min);
            let hi = ((u + hw).ceil() as i64).min(range.max);
            (lo..=hi)
                .filter_map(|k| {
                    let w = cell_integral(kernel, u - k as f64, 1.0 / subcells as f64);
                    (w != 0.0).then(|| ((k - range.min) as usize, w))
                })
                .collect()
        })
        .collect()
}

/// Contracts a coverage field on the sub-cell lattice (`coverage(sx, sy)` in
/// `[0, 1]`, with `sy` counted from the bottom edge) against the separable kernel.
fn contract(
    coverage: impl Fn(usize, usize) -> f64,
    plane: &ImagePlane,
    kernel: &BSplineKernel,
    k_range: IndexRange,
    l_range: IndexRange,
    subcells: usize,
) -> DMatrix<f64> {
    let wx = axis_weights(kernel, plane, subcells, k_range);
    let wy = axis_weights(kernel, plane, subcells, l_range);
    let nl = l_range.len();
    let mut values = DMatrix::zeros(k_range.len(), nl);
    let mut partial = vec![0.0; nl];
    for (sx, wxs) in wx.iter().enumerate() {
        if wxs.is_empty() {
            continue;
        }
        partial.iter_mut().for_each(|v| *v = 0.0);
        for (sy, wys) in wy.iter().enumerate() {
            if wys.is_empty() {
                continue;
            }
            let c = coverage(sx, sy);
            if c == 0.0 {
                continue;
            }
            for &(l, w) in wys {
                partial[l] += c * w;
            }
        }
        for &(k, w) in wxs {
            for l in 0..nl {
                values[(k, l)] += w * partial[l];
            }
        }
    }
    values
}

/// Fraction of the unit square where `α t + β s <= γ`, for `α, β >= 0`.
fn square_fraction(alpha: f64, beta: f64, gamma: f64) -> f64 {
    let total = alpha + beta;
    if total == 0.0 {
        return if gamma >= 0.0 { 1.0 } else { 0.0 };
    }
    let (lo, hi) = (alpha.min(beta), alpha.max(beta));
    if lo < 1e-6 * total {
        // boundary nearly parallel to a side: average over the short direction
        return ((gamma - 0.5 * lo) / hi).clamp(0.0, 1.0);
    }
    let r = |z: f64| if z > 0.0 { z * z } else { 0.0 };
    ((r(gamma) - r(gamma - alpha) - r(gamma - beta) + r(gamma - total)) / (2.0 * alpha * beta)).clamp(0.0, 1.0)
}

/// Micro-cells per axis inside a boundary sub-cell.
const BOUNDARY_REFINE: usize = 8;

/// Area fraction of a sub-cell of side `h` centered where `p = v` with
/// gradient `(gx, gy)`, under the linearized boundary.
fn cell_coverage(v: f64, gx: f64, gy: f64, h: f64) -> f64 {
    let (a, b) = ((gx * h).abs(), (gy * h).abs());
    square_fraction(a, b, 0.5 * (a + b) - v)
}

/// Samples of `1{p <= 0}` restricted to the plane, by supersampled midpoint
/// quadrature with `subcells` sub-cells per lattice period and axis.
///
/// Sub-cells cut by the boundary contribute the area fraction on the
/// `p <= 0` side of the boundary linearized at the sub-cell center.
pub fn sample_shape_with(
    p: &BivariatePolynomial,
    plane: &ImagePlane,
    kernel: &BSplineKernel,
    k_range: IndexRange,
    l_range: IndexRange,
    subcells: usize,
) -> Result<SampleGrid> {
    if subcells == 0 {
        return Err(Error::invalid("sub-cell count must be positive"));
    }
    let n = plane.cells() * subcells;
    let step = plane.period / subcells as f64;
    let coord = |s: usize| -plane.half_width + (s as f64 + 0.5) * step;
    // only sub-cells under some kernel support matter; one extra cell of
    // margin keeps the boundary test exact at the window edge
    let span = |r: IndexRange| {
        let lh = plane.lattice_half_width();
        let hw = kernel.support_half_width();
        let lo = ((r.min as f64 - hw + lh) * subcells as f64).floor() as i64 - 1;
        let hi = ((r.max as f64 + hw + lh) * subcells as f64).ceil() as i64 + 1;
        (lo.max(0) as usize, (hi.max(0) as usize).min(n))
    };
    let (x0, x1) = span(k_range);
    let (y0, y1) = span(l_range);
    let (w, h) = (x1.saturating_sub(x0), y1.saturating_sub(y0));
    let mut value = vec![0.0; w * h];
    for sy in 0..h {
        let row = p.restrict_y(coord(y0 + sy));
        for sx in 0..w {
            let x = coord(x0 + sx);
            value[sy * w + sx] = row.iter().rev().fold(0.0, |acc, c| acc * x + c);
        }
    }
    let inside = |i: usize| value[i] <= 0.0;
    let mut cover: Vec<f64> = (0..w * h).map(|i| if inside(i) { 1.0 } else { 0.0 }).collect();
    let mut cut_cells = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            let i = sy * w + sx;
            let mut cut = false;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (sx as i64 + dx, sy as i64 + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                        cut |= inside(ny as usize * w + nx as usize) != inside(i);
                    }
                }
            }
            if cut {
                cover[i] = 0.0;
                cut_cells.push((x0 + sx, y0 + sy));
            }
        }
    }
    let at = |sx: usize, sy: usize| {
        if sx < x0 || sx >= x1 || sy < y0 || sy >= y1 {
            0.0
        } else {
            cover[(sy - y0) * w + (sx - x0)]
        }
    };
    let mut values = contract(at, plane, kernel, k_range, l_range, subcells);
    add_cut_cells(&mut values, p, &cut_cells, coord, step, plane, kernel, k_range, l_range);
    SampleGrid::new(values, k_range, l_range, *kernel, *plane)
}

/// Adds the contribution of boundary sub-cells. Coverage and its first
/// moments come from `BOUNDARY_REFINE²` micro-cells with linearized
/// coverage; the kernel is expanded to first order about the sub-cell center.
#[allow(clippy::too_many_arguments)]
fn add_cut_cells(
    values: &mut DMatrix<f64>,
    p: &BivariatePolynomial,
    cells: &[(usize, usize)],
    coord: impl Fn(usize) -> f64,
    step: f64,
    plane: &ImagePlane,
    kernel: &BSplineKernel,
    k_range: IndexRange,
    l_range: IndexRange,
) {
    let r = BOUNDARY_REFINE;
    let hh = step / r as f64;
    // lattice units
    let h = step / plane.period;
    let hw = kernel.support_half_width();
    let taps = |u: f64, range: IndexRange| {
        let lo = ((u - hw).floor() as i64).max(range.min);
        let hi = ((u + hw).ceil() as i64).min(range.max);
        (lo..=hi).map(move |k| {
            let t = u - k as f64;
            let mean = cell_integral(kernel, t, h) / h;
            let slope = (kernel.eval(t + 0.5 * h) - kernel.eval(t - 0.5 * h)) / h;
            ((k - range.min) as usize, mean, slope)
        })
    };
    let mut ly = Vec::new();
    for &(sx, sy) in cells {
        let (cx, cy) = (coord(sx), coord(sy));
        let (mut c0, mut cxm, mut cym) = (0.0, 0.0, 0.0);
        for a in 0..r {
            let dy = (a as f64 + 0.5) * hh - 0.5 * step;
            for b in 0..r {
                let dx = (b as f64 + 0.5) * hh - 0.5 * step;
                let (v, gx, gy) = p.evaluate_with_gradient(cx + dx, cy + dy);
                let c = cell_coverage(v, gx, gy, hh);
                c0 += c;
                cxm += c * dx;
                cym += c * dy;
            }
        }
        if c0 == 0.0 {
            continue;
        }
        // area in lattice units; offsets converted to lattice units
        let da = h * h / (r * r) as f64;
        let (c0, cxm, cym) = (c0 * da, cxm * da / plane.period, cym * da / plane.period);
        ly.clear();
        ly.extend(taps(cy / plane.period, l_range));
        for (k, bk, dk) in taps(cx / plane.period, k_range) {
            for &(l, bl, dl) in &ly {
                values[(k, l)] += c0 * bk * bl + cxm * dk * bl + cym * bk * dl;
            }
        }
    }
}

/// [`sample_shape_with`] at the default quadrature resolution.
pub fn sample_shape(p: &BivariatePolynomial, plane: &ImagePlane, kernel: &BSplineKernel, k_range: IndexRange, l_range: IndexRange) -> Result<SampleGrid> {
    sample_shape_with(p, plane, kernel, k_range, l_range, DEFAULT_SUBCELLS)
}

/// Samples of a binary raster. The raster must cover the plane with one
/// pixel per quadrature sub-cell, i.e. `resolution = subcells / T`.
pub fn sample_raster(raster: &Raster, plane: &ImagePlane, kernel: &BSplineKernel, k_range: IndexRange, l_range: IndexRange) -> Result<SampleGrid> {
    let subcells_f = raster.resolution * plane.period;
    let subcells = subcells_f.round() as usize;
    if subcells == 0 || (subcells_f - subcells as f64).abs() > 1e-9 {
        return Err(Error::invalid("raster resolution must be an integer multiple of 1/T"));
    }
    let n = plane.cells() * subcells;
    if raster.width != n || raster.height != n || (raster.half_width - plane.half_width).abs() > 1e-12 {
        return Err(Error::invalid("raster does not cover the image plane"));
    }
    let values = contract(
        |sx, sy| if raster.get(n - 1 - sy, sx) != 0 { 1.0 } else { 0.0 },
        plane,
        kernel,
        k_range,
        l_range,
        subcells,
    );
    SampleGrid::new(values, k_range, l_range, *kernel, *plane)
}

/// Signal-to-noise flag value used when two grids coincide.
pub const INFINITE_SNR: f64 = f64::INFINITY;

/// Adds i.i.d. Gaussian noise rescaled so the realized SNR is exactly `snr_db`.
///
/// An infinite `snr_db` returns the grid unchanged.
pub fn add_noise(grid: &SampleGrid, snr_db: f64, seed: u64) -> Result<SampleGrid> {
    if grid.noise.is_some() {
        return Err(Error::invalid("grid already carries noise"));
    }
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(grid.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("SNR must be finite or +inf"));
    }
    let signal = grid.energy();
    if signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..grid.values.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let raw_energy: f64 = raw.iter().map(|v| v * v).sum();
    let target = signal / 10f64.powf(snr_db / 10.0);
    let scale = (target / raw_energy).sqrt();
    let mut out = grid.clone();
    out.values.iter_mut().zip(&raw).for_each(|(v, n)| *v += scale * n);
    out.noise = Some(NoiseInfo { snr_db, seed });
    Ok(out)
}

/// `10 log10(‖ref‖² / ‖ref - test‖²)`; `+inf` when the grids coincide.
pub fn sample_snr(reference: &SampleGrid, test: &SampleGrid) -> Result<f64> {
    if reference.k_range != test.k_range || reference.l_range != test.l_range {
        return Err(Error::invalid("sample grids have different index ranges"));
    }
    let err: f64 = reference.values.iter().zip(test.values.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    if err == 0.0 {
        return Ok(INFINITE_SNR);
    }
    Ok(10.0 * (reference.energy() / err).log10())
}
