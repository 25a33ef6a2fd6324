//! Reconstruction cascade: constrained least squares, sign-constrained
//! quadratic program, and measurement-consistency refinement.
//!
//! Polynomials inside this module live in lattice coordinates `u = x / T`;
//! [`RecoveryResult`] reports them in plane coordinates.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annihilate::{build_conventional, build_generalized, normalize_coordinates, window_centers, AnnihilationSystem, Mode, RsPolicy};
use crate::bspline::{classical_coefficients, BSplineKernel, ClassicalReproduction};
use crate::error::{Error, Result};
use crate::gmfit::GmCoefficients;
use crate::moments::{generalized_moments_from_samples, moments_from_samples};
use crate::poly2d::{monomials, BivariatePolynomial, ImagePlane};
use crate::qp::{solve_dual, QpProblem};
use crate::sampler::{sample_shape_with, sample_snr, IndexRange, SampleGrid, DEFAULT_SUBCELLS};

pub const DEFAULT_EPSILON: f64 = 0.2;
pub const DEFAULT_DELTA: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 10;
pub const DEFAULT_FD_STEP: f64 = 1e-3;
pub const MAX_HALVINGS: usize = 5;
/// Singular values below this fraction of the largest are dropped from `J⁺`.
pub const PINV_CUTOFF: f64 = 1e-8;

/// Lattice points whose sign of `p` is inferred from the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignConstraintSet {
    /// `d >= 1 - ε`, so `p <= 0`.
    pub inside: Vec<(i64, i64)>,
    /// `d <= ε`, so `p >= δ`.
    pub outside: Vec<(i64, i64)>,
    pub epsilon: f64,
    pub delta: f64,
}

impl SignConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.inside.is_empty() && self.outside.is_empty()
    }

    /// Number of points whose sign `p` contradicts (`p > 0` inside, `p <= 0` outside).
    pub fn violations(&self, p: &BivariatePolynomial) -> usize {
        let bad_in = self.inside.iter().filter(|&&(k, l)| p.evaluate(k as f64, l as f64) > 0.0).count();
        let bad_out = self.outside.iter().filter(|&&(k, l)| p.evaluate(k as f64, l as f64) <= 0.0).count();
        bad_in + bad_out
    }
}

/// Classifies lattice points by thresholding the samples.
pub fn infer_signs(grid: &SampleGrid, epsilon: f64) -> Result<SignConstraintSet> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::invalid("sign threshold must lie in (0, 0.5)"));
    }
    let mut out = SignConstraintSet {
        inside: Vec::new(),
        outside: Vec::new(),
        epsilon,
        delta: DEFAULT_DELTA,
    };
    for (k, l, d) in grid.iter() {
        if d >= 1.0 - epsilon {
            out.inside.push((k, l));
        } else if d <= epsilon {
            out.outside.push((k, l));
        }
    }
    Ok(out)
}

/// Least-squares stage output, in the system's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub coeffs: DVector<f64>,
    /// Set when `a_00 = 1` was unattainable and the unit-norm smallest
    /// singular vector was returned instead.
    pub fallback: bool,
}

/// `min ‖M a‖²` subject to `a_00 = 1`, on unit-norm rows.
pub fn solve_ls(system: &AnnihilationSystem) -> Result<LsSolution> {
    if system.rows() == 0 {
        return Err(Error::invalid("annihilation system has no rows"));
    }
    let m = system.with_unit_rows().matrix;
    let n = m.ncols();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let smallest = smallest_right_singular_vector(&m);
    let head = m.column(0).norm();
    if head <= 1e-12 * scale || smallest[0].abs() <= 1e-8 {
        return Ok(LsSolution {
            coeffs: smallest,
            fallback: true,
        });
    }
    let rest = m.columns(1, n - 1).into_owned();
    let rhs = -m.column(0).into_owned();
    let svd = rest.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    let x = svd.solve(&rhs, tol).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut coeffs = DVector::zeros(n);
    coeffs[0] = 1.0;
    coeffs.rows_mut(1, n - 1).copy_from(&x);
    if !coeffs.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("least-squares solution is not finite".into()));
    }
    Ok(LsSolution { coeffs, fallback: false })
}

fn smallest_right_singular_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.ncols();
    // pad so the thin SVD always has n right singular vectors
    let mut tall = DMatrix::zeros(m.nrows().max(n), n);
    tall.rows_mut(0, m.nrows()).copy_from(m);
    let svd = tall.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let k = svd.singular_values.imin();
    let mut v = vt.row(k).transpose();
    if v[0] < 0.0 {
        v.neg_mut();
    }
    v
}

/// Sign-constrained stage output, in the system's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QpOutcome {
    pub coeffs: DVector<f64>,
    /// False when the constraints were infeasible and `coeffs` is the LS solution.
    pub feasible: bool,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Evaluation row of the monomials at lattice point `(k, l)` in the
/// system's coordinates.
fn evaluation_row(system: &AnnihilationSystem, k: i64, l: i64) -> Vec<f64> {
    let (x, y) = (k as f64 / system.sigma, l as f64 / system.sigma);
    monomials(system.degree).map(|(i, j)| x.powi(i as i32) * y.powi(j as i32)).collect()
}

/// `min ‖M a‖²` with `p <= 0` at inside points and `p >= δ` at outside points.
///
/// The program is homogeneous in `a`: when outside points exist their margin
/// fixes the scale and `a_00` is left free, since `a_00 = 1` is incompatible
/// with an inside point at the origin. Otherwise `a_00 = ±1` with the sign of
/// the oriented least-squares solution.
pub fn solve_sign_qp(system: &AnnihilationSystem, signs: &SignConstraintSet) -> Result<QpOutcome> {
    let ls = solve_ls(system)?;
    if signs.is_empty() {
        return Ok(QpOutcome {
            coeffs: ls.coeffs,
            feasible: true,
            kkt_residual: 0.0,
            iterations: 0,
        });
    }
    if !(signs.delta > 0.0) {
        return Err(Error::invalid("outside margin must be positive"));
    }
    let m = system.with_unit_rows().matrix;
    let n = m.ncols();
    let gram = m.transpose() * &m;
    // ridge keeps the form positive definite; relative size below round-off of ‖M a‖²
    let ridge = 1e-12 * gram.trace().max(f64::MIN_POSITIVE) / n as f64;
    let h = (&gram + DMatrix::identity(n, n) * ridge) * 2.0;

    let rows: Vec<Vec<f64>> = signs
        .inside
        .iter()
        .map(|&(k, l)| evaluation_row(system, k, l).iter().map(|v| -v).collect())
        .chain(signs.outside.iter().map(|&(k, l)| evaluation_row(system, k, l)))
        .collect();
    let ineq = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
    // solved with unit margin and rescaled: the program is homogeneous
    let rhs = DVector::from_iterator(rows.len(), (0..rows.len()).map(|r| if r < signs.inside.len() { 0.0 } else { 1.0 }));
    let mut qp = QpProblem::new(h, DVector::zeros(n))?.with_inequalities(ineq, rhs)?;
    let margin = if signs.outside.is_empty() {
        let oriented = orient(&system.to_global(&ls.coeffs)?, signs);
        let s = oriented.coeffs()[0].signum();
        let mut eq = DMatrix::zeros(1, n);
        eq[(0, 0)] = 1.0;
        qp = qp.with_equalities(eq, DVector::from_element(1, if s == 0.0 { 1.0 } else { s }))?;
        1.0
    } else {
        signs.delta
    };
    match solve_dual(&qp, 50 * (n + rows.len())) {
        Ok(sol) if sol.converged => Ok(QpOutcome {
            coeffs: sol.x * margin,
            feasible: true,
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
        }),
        Ok(_) | Err(Error::Infeasible) => Ok(QpOutcome {
            coeffs: ls.coeffs,
            feasible: false,
            kkt_residual: f64::NAN,
            iterations: 0,
        }),
        Err(e) => Err(e),
    }
}

/// `p` or `-p`, whichever contradicts fewer inferred signs; `p` on ties.
pub fn orient(p: &BivariatePolynomial, signs: &SignConstraintSet) -> BivariatePolynomial {
    let flipped = p.scaled(-1.0);
    if signs.violations(&flipped) < signs.violations(p) {
        flipped
    } else {
        p.clone()
    }
}

/// Sampling configuration `𝒟` used by the consistency stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub plane: ImagePlane,
    pub kernel: BSplineKernel,
    pub k_range: IndexRange,
    pub l_range: IndexRange,
    /// Quadrature resolution of residual evaluations.
    pub subcells: usize,
    /// Quadrature resolution of Jacobian columns.
    pub jacobian_subcells: usize,
}

impl ForwardModel {
    /// Same configuration as `grid`, at the default resolutions.
    pub fn of(grid: &SampleGrid) -> Self {
        Self {
            plane: grid.plane,
            kernel: grid.kernel,
            k_range: grid.k_range,
            l_range: grid.l_range,
            subcells: DEFAULT_SUBCELLS,
            jacobian_subcells: DEFAULT_SUBCELLS / 2,
        }
    }

    /// Samples of the shape of a lattice-coordinate polynomial.
    pub fn samples(&self, p: &BivariatePolynomial, subcells: usize) -> Result<DMatrix<f64>> {
        let phys = p.magnified(self.plane.period);
        Ok(sample_shape_with(&phys, &self.plane, &self.kernel, self.k_range, self.l_range, subcells)?.values)
    }
}

/// Consistency stage output.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    /// Lattice-coordinate polynomial.
    pub poly: BivariatePolynomial,
    /// `‖d̃ - 𝒟(a)‖` before the first and after every accepted iteration.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Gauss-Newton iterations `a ← a + J⁺ (d̃ - 𝒟(a))` with monotone acceptance.
///
/// Coefficients are handled in the coordinates `(u/σ, v/σ)` and kept at unit
/// norm; the Jacobian is projected off the current coefficient vector, along
/// which `𝒟` is constant.
pub fn refine_consistency(
    a_cur: &BivariatePolynomial,
    sigma: f64,
    grid_noisy: &SampleGrid,
    forward: &ForwardModel,
    max_iter: usize,
    fd_step: f64,
) -> Result<RefineOutcome> {
    if !(sigma > 0.0 && fd_step > 0.0) {
        return Err(Error::invalid("scale and finite-difference step must be positive"));
    }
    if grid_noisy.k_range != forward.k_range || grid_noisy.l_range != forward.l_range {
        return Err(Error::invalid("forward model and samples cover different indices"));
    }
    let to_b = |p: &BivariatePolynomial| -> DVector<f64> {
        let b = DVector::from_iterator(
            p.coeffs().len(),
            monomials(p.degree()).zip(p.coeffs()).map(|((i, j), v)| v * sigma.powi((i + j) as i32)),
        );
        let norm = b.norm();
        b / norm
    };
    let to_p = |b: &DVector<f64>| -> BivariatePolynomial {
        let c = monomials(a_cur.degree())
            .zip(b.iter())
            .map(|((i, j), v)| v * sigma.powi(-((i + j) as i32)))
            .collect();
        BivariatePolynomial::from_coeffs(a_cur.degree(), c).expect("length matches")
    };
    if a_cur.norm() == 0.0 {
        return Err(Error::invalid("polynomial is identically zero"));
    }
    let target = DVector::from_column_slice(grid_noisy.values.as_slice());
    let eval = |b: &DVector<f64>, subcells: usize| -> Result<DVector<f64>> { Ok(DVector::from_column_slice(forward.samples(&to_p(b), subcells)?.as_slice())) };

    let mut b = to_b(a_cur);
    let current = eval(&b, forward.subcells)?;
    if current.amax() == 0.0 {
        return Err(Error::invalid("current estimate renders an empty shape"));
    }
    let mut res = (&target - &current).norm();
    let mut residuals = vec![res];
    let mut iterations = 0;
    // below this the residual is quadrature round-off
    let floor = 1e-10 * target.norm().max(1.0);
    while iterations < max_iter && res > floor {
        iterations += 1;
        let n = b.len();
        let columns: Vec<Result<DVector<f64>>> = (0..n)
            .into_par_iter()
            .map(|c| {
                let h = fd_step * b[c].abs().max(1.0);
                let mut plus = b.clone();
                plus[c] += h;
                let mut minus = b.clone();
                minus[c] -= h;
                Ok((eval(&plus, forward.jacobian_subcells)? - eval(&minus, forward.jacobian_subcells)?) / (2.0 * h))
            })
            .collect();
        let cols = columns.into_iter().collect::<Result<Vec<_>>>()?;
        let jac = DMatrix::from_columns(&cols);
        let proj = DMatrix::identity(n, n) - &b * b.transpose();
        let jp = jac * proj;
        let svd = jp.svd(true, true);
        let cutoff = PINV_CUTOFF * svd.singular_values.max();
        let current = eval(&b, forward.subcells)?;
        let step = svd.solve(&(&target - &current), cutoff).map_err(|e| Error::Numerical(e.to_string()))?;
        if !step.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("consistency step is not finite".into()));
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &b + &step * t;
            let trial = &trial / trial.norm();
            let r = (&target - eval(&trial, forward.subcells)?).norm();
            if r < res {
                accepted = Some((trial, r));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, r)) => {
                b = trial;
                res = r;
                residuals.push(r);
            }
            None => break,
        }
    }
    let poly = if residuals.len() == 1 {
        a_cur.clone()
    } else {
        let p = to_p(&b);
        let s = a_cur.norm() / p.norm();
        p.scaled(s)
    };
    Ok(RefineOutcome { poly, residuals, iterations })
}

/// Moment coefficients driving the annihilation system.
#[derive(Debug, Clone, Copy)]
pub enum Coefficients<'a> {
    Classical(&'a ClassicalReproduction),
    Generalized(&'a GmCoefficients),
}

impl Coefficients<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            Coefficients::Classical(_) => Mode::Conventional,
            Coefficients::Generalized(_) => Mode::Generalized,
        }
    }
}

/// Classical reproduction coefficients over the indices of `grid`.
pub fn classical_for(grid: &SampleGrid, order: usize) -> Result<ClassicalReproduction> {
    let r = IndexRange::new(grid.k_range.min.min(grid.l_range.min), grid.k_range.max.max(grid.l_range.max));
    classical_coefficients(&grid.kernel, order, r)
}

/// Which stages run after least squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StagePolicy {
    /// Sign QP and consistency only for noisy samples.
    #[default]
    Auto,
    Always,
    LsOnly,
}

/// Tunable parameters of [`run_pipeline`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub policy: RsPolicy,
    pub stages: StagePolicy,
    pub epsilon: f64,
    pub delta: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    /// Window stride in lattice steps.
    pub stride: usize,
    /// Coordinate scale; the grid's lattice half-width when absent.
    pub sigma: Option<f64>,
    pub subcells: usize,
    pub jacobian_subcells: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            policy: RsPolicy::Balanced,
            stages: StagePolicy::Auto,
            epsilon: DEFAULT_EPSILON,
            delta: DEFAULT_DELTA,
            max_iter: DEFAULT_MAX_ITER,
            fd_step: DEFAULT_FD_STEP,
            stride: 1,
            sigma: None,
            subcells: DEFAULT_SUBCELLS,
            jacobian_subcells: DEFAULT_SUBCELLS / 2,
        }
    }
}

/// Diagnostics of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    /// Plane-coordinate polynomial.
    pub coefficients: BivariatePolynomial,
    /// `‖M b‖ / ‖b‖` on unit-norm rows, `b` in normalized coordinates.
    pub residual: f64,
    /// SNR of the input samples against the samples of this stage's shape.
    #[serde(with = "crate::io::nonfinite")]
    pub sample_snr_db: f64,
    pub iterations: usize,
    /// Wall time; not serialized, so results are reproducible byte for byte.
    #[serde(skip)]
    pub seconds: f64,
}

/// Output of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub n: usize,
    pub mode: Mode,
    pub policy: RsPolicy,
    pub sigma: f64,
    pub windows: Vec<[f64; 2]>,
    /// Zero samples added on each side so that one moment window fits.
    pub padding: usize,
    pub ls: StageReport,
    pub qp: Option<StageReport>,
    #[serde(rename = "final")]
    pub final_stage: StageReport,
    pub ls_fallback: bool,
    pub qp_infeasible: bool,
    pub refine_residuals: Vec<f64>,
    pub inside_points: usize,
    pub outside_points: usize,
    #[serde(skip)]
    pub seconds: f64,
}

impl RecoveryResult {
    pub fn final_poly(&self) -> &BivariatePolynomial {
        &self.final_stage.coefficients
    }
}

fn snr_db(grid: &SampleGrid, forward: &ForwardModel, p: &BivariatePolynomial) -> Result<f64> {
    consistency_snr(grid, &p.magnified(forward.plane.period), forward.subcells)
}

/// SNR of `grid` against the samples of the plane-coordinate shape `p`
/// taken with the grid's own kernel and indices.
pub fn consistency_snr(grid: &SampleGrid, p: &BivariatePolynomial, subcells: usize) -> Result<f64> {
    let model = sample_shape_with(p, &grid.plane, &grid.kernel, grid.k_range, grid.l_range, subcells)?;
    sample_snr(grid, &model)
}

/// Builds the annihilation system for `grid`; returns it with the padding used.
pub fn build_system(grid: &SampleGrid, n: usize, coefs: Coefficients, options: &PipelineOptions) -> Result<(AnnihilationSystem, usize)> {
    let order = options.policy.max_order(n);
    match coefs {
        Coefficients::Classical(repro) => {
            let table = moments_from_samples(grid, repro, order, order)?;
            Ok((build_conventional(&table, n, options.policy)?, 0))
        }
        Coefficients::Generalized(gm) => {
            let mut padding = 0;
            let mut work = grid.clone();
            let mut centers = window_centers(&work, gm, options.stride);
            if centers.is_empty() {
                // exact only when the grid already holds every sample that sees the plane
                let (kr, lr) = crate::sampler::default_ranges(&grid.plane, &grid.kernel);
                let complete = grid.k_range.min <= kr.min && grid.k_range.max >= kr.max && grid.l_range.min <= lr.min && grid.l_range.max >= lr.max;
                if !complete {
                    return Err(Error::invalid(format!("sample grid is narrower than the {}-sample moment window", gm.window)));
                }
                let short = gm.window.saturating_sub(grid.k_range.len().min(grid.l_range.len()));
                padding = short.div_ceil(2);
                work = grid.zero_padded(padding);
                centers = window_centers(&work, gm, options.stride);
            }
            let tables = centers
                .iter()
                .map(|&c| generalized_moments_from_samples(&work, gm, order, order, c))
                .collect::<Result<Vec<_>>>()?;
            let windows: Vec<(f64, f64)> = centers.iter().map(|&(k, l)| (k as f64, l as f64)).collect();
            Ok((build_generalized(&tables, n, options.policy, &windows)?, padding))
        }
    }
}

/// Samples to reconstruction: moments, annihilation system, least squares,
/// then (for noisy samples, or always if requested) the sign-constrained
/// program and the consistency refinement.
pub fn run_pipeline(grid: &SampleGrid, n: usize, coefs: Coefficients, options: &PipelineOptions) -> Result<RecoveryResult> {
    let start = Instant::now();
    let forward = ForwardModel {
        subcells: options.subcells,
        jacobian_subcells: options.jacobian_subcells,
        ..ForwardModel::of(grid)
    };
    let period = grid.plane.period;
    let to_plane = |p: &BivariatePolynomial| p.magnified(period);

    let (system, padding) = build_system(grid, n, coefs, options).map_err(|e| e.in_stage("moments"))?;
    let half = [grid.k_range.min, grid.k_range.max, grid.l_range.min, grid.l_range.max]
        .iter()
        .map(|v| v.abs())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let sigma = options.sigma.unwrap_or(half);
    let system = normalize_coordinates(&system.with_unit_rows(), sigma).map_err(|e| e.in_stage("annihilation"))?;
    let unit_residual = |b: &DVector<f64>| system.residual(b) / b.norm();

    let mut signs = infer_signs(grid, options.epsilon).map_err(|e| e.in_stage("signs"))?;
    signs.delta = options.delta;

    let t = Instant::now();
    let ls = solve_ls(&system).map_err(|e| e.in_stage("least-squares"))?;
    let ls_poly = orient(&system.to_global(&ls.coeffs)?, &signs);
    let ls_report = StageReport {
        coefficients: to_plane(&ls_poly),
        residual: unit_residual(&ls.coeffs),
        sample_snr_db: snr_db(grid, &forward, &ls_poly).map_err(|e| e.in_stage("least-squares"))?,
        iterations: 1,
        seconds: t.elapsed().as_secs_f64(),
    };

    let run_rest = match options.stages {
        StagePolicy::Always => true,
        StagePolicy::LsOnly => false,
        StagePolicy::Auto => grid.noise.is_some(),
    };
    let mut result = RecoveryResult {
        n,
        mode: coefs.mode(),
        policy: options.policy,
        sigma,
        windows: system.windows.iter().map(|&(x, y)| [x * period, y * period]).collect(),
        padding,
        ls: ls_report.clone(),
        qp: None,
        final_stage: ls_report,
        ls_fallback: ls.fallback,
        qp_infeasible: false,
        refine_residuals: Vec::new(),
        inside_points: signs.inside.len(),
        outside_points: signs.outside.len(),
        seconds: 0.0,
    };
    if run_rest {
        let t = Instant::now();
        let qp = solve_sign_qp(&system, &signs).map_err(|e| e.in_stage("sign-qp"))?;
        let qp_poly = if qp.feasible { system.to_global(&qp.coeffs)? } else { ls_poly.clone() };
        let qp_report = StageReport {
            coefficients: to_plane(&qp_poly),
            residual: unit_residual(&qp.coeffs),
            sample_snr_db: snr_db(grid, &forward, &qp_poly).map_err(|e| e.in_stage("sign-qp"))?,
            iterations: qp.iterations,
            seconds: t.elapsed().as_secs_f64(),
        };
        result.qp_infeasible = !qp.feasible;

        let t = Instant::now();
        let refined = refine_consistency(&qp_poly, sigma, grid, &forward, options.max_iter, options.fd_step).map_err(|e| e.in_stage("consistency"))?;
        let b = system.from_global(&refined.poly)?;
        result.final_stage = StageReport {
            coefficients: to_plane(&refined.poly),
            residual: unit_residual(&b),
            sample_snr_db: snr_db(grid, &forward, &refined.poly).map_err(|e| e.in_stage("consistency"))?,
            iterations: refined.iterations,
            seconds: t.elapsed().as_secs_f64(),
        };
        result.refine_residuals = refined.residuals;
        result.qp = Some(qp_report);
    }
    result.seconds = start.elapsed().as_secs_f64();
    Ok(result)
}
