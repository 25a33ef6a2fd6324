//! Linear annihilation systems `M a = 0` for the coefficients of the
//! boundary polynomial.
//!
//! Columns follow the graded coefficient order of [`crate::poly2d`]. Every
//! `(r, s)` pair contributes two rows per window: the `x`-derivative family
//! first, then the `y`-derivative family.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmfit::GmCoefficients;
use crate::moments::{MomentKind, MomentTable};
use crate::poly2d::{monomials, num_coeffs, BivariatePolynomial, ShiftMatrix};
use crate::sampler::SampleGrid;

/// Which moments the system is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Conventional,
    Generalized,
}

/// Set of `(r, s)` multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RsPolicy {
    /// `0 <= r, s <= n/2`.
    #[default]
    Balanced,
    /// `0 <= r + s <= 2n - 1`.
    Full,
}

impl RsPolicy {
    pub fn pairs(self, n: usize) -> Vec<(usize, usize)> {
        match self {
            RsPolicy::Balanced => {
                let h = n / 2;
                (0..=h).flat_map(|r| (0..=h).map(move |s| (r, s))).collect()
            }
            RsPolicy::Full => {
                let top = (2 * n).saturating_sub(1);
                (0..=top).flat_map(|t| (0..=t).map(move |r| (r, t - r))).collect()
            }
        }
    }

    /// Largest moment order needed along either axis for degree `n`.
    pub fn max_order(self, n: usize) -> usize {
        match self {
            RsPolicy::Balanced => n + n / 2,
            RsPolicy::Full => n + (2 * n).saturating_sub(1),
        }
    }
}

/// Stacked annihilation equations.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnihilationSystem {
    pub matrix: DMatrix<f64>,
    pub degree: usize,
    pub mode: Mode,
    pub policy: RsPolicy,
    /// Window centers in lattice coordinates, in stacking order.
    pub windows: Vec<(f64, f64)>,
    /// Coordinate scale: solutions `b` of this system describe `q(x/σ, y/σ)`.
    pub sigma: f64,
}

/// Everything about a system except its entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMetadata {
    pub n: usize,
    pub mode: Mode,
    pub policy: RsPolicy,
    pub rows: usize,
    pub cols: usize,
    pub windows: Vec<[f64; 2]>,
    pub sigma: f64,
}

impl AnnihilationSystem {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Copy with every nonzero row scaled to unit Euclidean norm.
    pub fn with_unit_rows(&self) -> Self {
        let mut out = self.clone();
        normalize_rows(&mut out.matrix);
        out
    }

    /// Maps a solution of this system back to global lattice coordinates.
    pub fn to_global(&self, b: &DVector<f64>) -> Result<BivariatePolynomial> {
        if b.len() != self.cols() {
            return Err(Error::invalid("solution length does not match the system"));
        }
        let coeffs = monomials(self.degree)
            .zip(b.iter())
            .map(|((i, j), v)| v * self.sigma.powi(-((i + j) as i32)))
            .collect();
        BivariatePolynomial::from_coeffs(self.degree, coeffs)
    }

    /// Inverse of [`AnnihilationSystem::to_global`].
    pub fn from_global(&self, p: &BivariatePolynomial) -> Result<DVector<f64>> {
        if p.degree() != self.degree {
            return Err(Error::invalid("polynomial degree does not match the system"));
        }
        Ok(DVector::from_iterator(
            self.cols(),
            monomials(self.degree).zip(p.coeffs()).map(|((i, j), v)| v * self.sigma.powi((i + j) as i32)),
        ))
    }

    /// `‖M b‖`.
    pub fn residual(&self, b: &DVector<f64>) -> f64 {
        (&self.matrix * b).norm()
    }

    pub fn metadata(&self) -> SystemMetadata {
        SystemMetadata {
            n: self.degree,
            mode: self.mode,
            policy: self.policy,
            rows: self.rows(),
            cols: self.cols(),
            windows: self.windows.iter().map(|&(x, y)| [x, y]).collect(),
            sigma: self.sigma,
        }
    }

    /// The matrix as CSV, one row per line, full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                if c > 0 {
                    out.push(',');
                }
                write!(out, "{:e}", self.matrix[(r, c)]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn export(&self, stem: &Path) -> Result<()> {
        std::fs::write(stem.with_extension("csv"), self.to_csv())?;
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&self.metadata())?)?;
        Ok(())
    }
}

fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

fn check_order(table: &MomentTable, need: usize) -> Result<()> {
    if table.max_i() < need || table.max_j() < need {
        let (i, j) = if table.max_i() < need { (need, 0) } else { (0, need) };
        return Err(Error::MissingMoment(i, j));
    }
    Ok(())
}

/// Rows `(i+r) M_{i+r-1,j+s}` and `(j+s) M_{i+r,j+s-1}` from conventional
/// moments. Entries are left unnormalized.
pub fn build_conventional(table: &MomentTable, n: usize, policy: RsPolicy) -> Result<AnnihilationSystem> {
    if table.kind != MomentKind::Conventional {
        return Err(Error::invalid("conventional system needs a conventional moment table"));
    }
    check_order(table, policy.max_order(n))?;
    let m = |i: usize, j: usize| table.values[(i, j)];
    let pairs = policy.pairs(n);
    let mut matrix = DMatrix::zeros(2 * pairs.len(), num_coeffs(n));
    for (p, &(r, s)) in pairs.iter().enumerate() {
        for (col, (i, j)) in monomials(n).enumerate() {
            // a zero multiplier is exactly the case where the index would be -1
            if i + r > 0 {
                matrix[(2 * p, col)] = (i + r) as f64 * m(i + r - 1, j + s);
            }
            if j + s > 0 {
                matrix[(2 * p + 1, col)] = (j + s) as f64 * m(i + r, j + s - 1);
            }
        }
    }
    Ok(AnnihilationSystem {
        matrix,
        degree: n,
        mode: Mode::Conventional,
        policy,
        windows: vec![table.center],
        sigma: 1.0,
    })
}

/// Rows of one window, in window-local coordinates.
fn generalized_block(tables: &[MomentTable; 3], n: usize, policy: RsPolicy) -> Result<DMatrix<f64>> {
    let kinds = [MomentKind::GG, MomentKind::GPrimeG, MomentKind::GGPrime];
    for (t, k) in tables.iter().zip(kinds) {
        if t.kind != k {
            return Err(Error::invalid("generalized tables must be ordered g·g, g'·g, g·g'"));
        }
        check_order(t, policy.max_order(n))?;
    }
    let [gg, gpg, ggp] = tables;
    let pairs = policy.pairs(n);
    let mut block = DMatrix::zeros(2 * pairs.len(), num_coeffs(n));
    for (p, &(r, s)) in pairs.iter().enumerate() {
        for (col, (i, j)) in monomials(n).enumerate() {
            let (a, b) = (i + r, j + s);
            let mut x = gpg.values[(a, b)];
            if a > 0 {
                x += a as f64 * gg.values[(a - 1, b)];
            }
            let mut y = ggp.values[(a, b)];
            if b > 0 {
                y += b as f64 * gg.values[(a, b - 1)];
            }
            block[(2 * p, col)] = x;
            block[(2 * p + 1, col)] = y;
        }
    }
    Ok(block)
}

/// Stacks the window blocks `M^(x0,y0) B^(x0,y0)`, each row scaled to unit
/// norm. `windows[w]` must equal the center of `tables[w]`.
pub fn build_generalized(tables: &[[MomentTable; 3]], n: usize, policy: RsPolicy, windows: &[(f64, f64)]) -> Result<AnnihilationSystem> {
    if tables.len() != windows.len() {
        return Err(Error::invalid(format!("{} windows but {} table triples", windows.len(), tables.len())));
    }
    if tables.is_empty() {
        return Err(Error::invalid("no windows"));
    }
    let per = 2 * policy.pairs(n).len();
    let mut matrix = DMatrix::zeros(per * tables.len(), num_coeffs(n));
    for (w, (tabs, &center)) in tables.iter().zip(windows).enumerate() {
        if tabs.iter().any(|t| t.center != center) {
            return Err(Error::invalid(format!(
                "window {w} is centered at ({}, {}) but its tables are not",
                center.0, center.1
            )));
        }
        let block = generalized_block(tabs, n, policy)?;
        let shift = ShiftMatrix::new(n, center.0, center.1);
        matrix.rows_mut(w * per, per).copy_from(&(block * shift.matrix()));
    }
    normalize_rows(&mut matrix);
    Ok(AnnihilationSystem {
        matrix,
        degree: n,
        mode: Mode::Generalized,
        policy,
        windows: windows.to_vec(),
        sigma: 1.0,
    })
}

/// Rescales columns by `σ^-(i+j)`, so that solutions are coefficients in the
/// coordinates `(x/σ, y/σ)`. Scales compose.
pub fn normalize_coordinates(system: &AnnihilationSystem, sigma: f64) -> Result<AnnihilationSystem> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("coordinate scale must be positive"));
    }
    let mut out = system.clone();
    for (col, (i, j)) in monomials(system.degree).enumerate() {
        out.matrix.column_mut(col).scale_mut(sigma.powi(-((i + j) as i32)));
    }
    out.sigma *= sigma;
    Ok(out)
}

/// Lattice centers of every window of `coefs` that lies inside `grid`,
/// stepping by `stride`, row-major in `(k, l)`.
pub fn window_centers(grid: &SampleGrid, coefs: &GmCoefficients, stride: usize) -> Vec<(i64, i64)> {
    let kk = coefs.half_width as i64;
    let step = stride.max(1);
    let axis = |lo: i64, hi: i64| -> Vec<i64> {
        if hi - lo < 2 * kk {
            return Vec::new();
        }
        // centered so that the window set is symmetric when the grid is
        let (first, last) = (lo + kk, hi - kk);
        let count = (last - first) as usize / step;
        let offset = ((last - first) as usize - count * step) as i64 / 2;
        (0..=count).map(|t| first + offset + (t * step) as i64).collect()
    };
    let ks = axis(grid.k_range.min, grid.k_range.max);
    let ls = axis(grid.l_range.min, grid.l_range.max);
    ks.iter().flat_map(|&k| ls.iter().map(move |&l| (k, l))).collect()
}
