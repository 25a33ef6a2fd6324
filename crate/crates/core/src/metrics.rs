//! Image-domain comparison of shapes.
//!
//! Shapes are compared pixel by pixel at pixel centers over `[-L, L]²`.
//! Rows are evaluated on the fly, so large planes never hold a full raster.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly2d::{BivariatePolynomial, Raster};

/// Pixels per unit length of every reported PSNR.
pub const EVAL_RESOLUTION: usize = 256;

/// Shape to compare: an implicit polynomial or a raster covering the plane.
#[derive(Debug, Clone, Copy)]
pub enum Shape<'a> {
    Polynomial(&'a BivariatePolynomial),
    Raster(&'a Raster),
}

/// Pixel counts of a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub resolution: f64,
    pub half_width: f64,
    pub total: u64,
    pub differing: u64,
    /// Differing pixels whose center is farther than half a pixel diagonal
    /// from the true boundary (first-order distance `|p| / |∇p|`).
    /// Equals `differing` for raster truths.
    pub differing_off_boundary: u64,
    /// `10 log10(total / differing)` with peak 1; `+inf` when nothing differs.
    #[serde(with = "crate::io::nonfinite")]
    pub psnr_db: f64,
}

impl Comparison {
    pub fn identical(&self) -> bool {
        self.differing == 0
    }
}

fn row_of(shape: &Shape, y: f64, row: usize, xs: &[f64], out: &mut [bool]) -> Result<()> {
    match shape {
        Shape::Polynomial(p) => {
            let c = p.restrict_y(y);
            for (o, &x) in out.iter_mut().zip(xs) {
                *o = c.iter().rev().fold(0.0, |acc, a| acc * x + a) <= 0.0;
            }
        }
        Shape::Raster(r) => {
            for (col, o) in out.iter_mut().enumerate() {
                *o = r.get(row, col) != 0;
            }
        }
    }
    Ok(())
}

fn check_raster(shape: &Shape, side: usize, half_width: f64) -> Result<()> {
    if let Shape::Raster(r) = shape {
        if r.width != side || r.height != side || (r.half_width - half_width).abs() > 1e-12 {
            return Err(Error::invalid("raster does not match the comparison grid"));
        }
    }
    Ok(())
}

/// Compares two shapes on `[-L, L]²` at `resolution` pixels per unit.
pub fn compare_shapes(truth: Shape, recon: Shape, half_width: f64, resolution: f64) -> Result<Comparison> {
    if !(half_width > 0.0 && resolution > 0.0) {
        return Err(Error::invalid("plane size and resolution must be positive"));
    }
    let side_f = 2.0 * half_width * resolution;
    let side = side_f.round() as usize;
    if side == 0 || (side_f - side as f64).abs() > 1e-6 {
        return Err(Error::invalid("2L x resolution must be a positive integer"));
    }
    check_raster(&truth, side, half_width)?;
    check_raster(&recon, side, half_width)?;
    let xs: Vec<f64> = (0..side).map(|c| -half_width + (c as f64 + 0.5) / resolution).collect();
    let half_diag = std::f64::consts::SQRT_2 * 0.5 / resolution;
    let counts = (0..side)
        .into_par_iter()
        .map(|row| -> Result<(u64, u64)> {
            let y = half_width - (row as f64 + 0.5) / resolution;
            let mut a = vec![false; side];
            let mut b = vec![false; side];
            row_of(&truth, y, row, &xs, &mut a)?;
            row_of(&recon, y, row, &xs, &mut b)?;
            let mut diff = 0;
            let mut off = 0;
            for c in 0..side {
                if a[c] != b[c] {
                    diff += 1;
                    let near = match truth {
                        Shape::Polynomial(p) => {
                            let (v, gx, gy) = p.evaluate_with_gradient(xs[c], y);
                            v.abs() <= half_diag * gx.hypot(gy)
                        }
                        Shape::Raster(_) => false,
                    };
                    if !near {
                        off += 1;
                    }
                }
            }
            Ok((diff, off))
        })
        .collect::<Result<Vec<_>>>()?;
    let (differing, differing_off_boundary) = counts.iter().fold((0, 0), |(d, o), &(a, b)| (d + a, o + b));
    let total = (side * side) as u64;
    Ok(Comparison {
        resolution,
        half_width,
        total,
        differing,
        differing_off_boundary,
        psnr_db: psnr_from_counts(total, differing),
    })
}

/// `10 log10(total / differing)`; `+inf` for zero differing pixels.
pub fn psnr_from_counts(total: u64, differing: u64) -> f64 {
    if differing == 0 {
        f64::INFINITY
    } else {
        10.0 * (total as f64 / differing as f64).log10()
    }
}

/// PSNR between two polynomial shapes at [`EVAL_RESOLUTION`].
pub fn psnr(truth: &BivariatePolynomial, recon: &BivariatePolynomial, half_width: f64) -> Result<f64> {
    Ok(compare_shapes(Shape::Polynomial(truth), Shape::Polynomial(recon), half_width, EVAL_RESOLUTION as f64)?.psnr_db)
}
