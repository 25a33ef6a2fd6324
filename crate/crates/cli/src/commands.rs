use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgMatches, Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use algshape::annihilate::{Mode, RsPolicy};
use algshape::bspline::BSplineKernel;
use algshape::gmfit::{build_gm_objective_scaled, default_half_width, default_scale, solve_gm, GmCoefficients};
use algshape::io::{self, nonfinite, nonfinite_opt};
use algshape::metrics::{compare_shapes, Shape, EVAL_RESOLUTION};
use algshape::poly2d::{boundary_points, render_shape, zero_set_distance, BivariatePolynomial, ImagePlane, Raster, ZERO_SET_SCAN};
use algshape::recover::{
    classical_for, consistency_snr, run_pipeline, Coefficients, PipelineOptions, RecoveryResult, StagePolicy, DEFAULT_DELTA, DEFAULT_EPSILON, DEFAULT_FD_STEP,
    DEFAULT_MAX_ITER,
};
use algshape::sampler::{add_noise, default_ranges, sample_raster, sample_shape_with, IndexRange, DEFAULT_SUBCELLS};
use algshape::scenarios::{median, Scenario, ScenarioName, Truth};
use algshape::shapegen::{gen_bezier_shape, ShapeSpec};

use crate::config::{defaults, manifest_next_to, parse_enum, required, write_manifest, CmdResult, Failure};

/// Flags shared by every subcommand. Read from the command line only.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON file of option values (a manifest works too); flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest [default: next to the main output].
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
}

fn manifest_path(m: &ArgMatches, main_output: &Path) -> PathBuf {
    m.get_one::<PathBuf>("manifest").cloned().unwrap_or_else(|| manifest_next_to(main_output))
}

macro_rules! clap_defaults {
    ($($t:ty),*) => {
        $(impl Default for $t {
            fn default() -> Self {
                defaults()
            }
        })*
    };
}

clap_defaults!(GenerateArgs, SampleArgs, FitGmArgs, ReconstructArgs, EvaluateArgs, ReproArgs);

/// Finite numbers as JSON numbers, others as strings.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(format!("{v}").to_lowercase())
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    BoundedQuartic,
    Conic,
    HalfSpace,
    Bezier,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Shape family.
    #[arg(long, value_enum, default_value_t = ShapeKind::BoundedQuartic)]
    pub kind: ShapeKind,
    /// Seed of the random quartic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Conic: circle of this radius about the center.
    #[arg(long)]
    pub circle: Option<f64>,
    /// Conic: center as x,y.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [0.0, 0.0])]
    pub center: Vec<f64>,
    /// Conic: semi-axes as a,b.
    #[arg(long, value_delimiter = ',')]
    pub axes: Option<Vec<f64>>,
    /// Conic: rotation of the first axis; half-space: normal direction (radians).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub angle: f64,
    /// Half-space: signed offset of the boundary along the normal.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub offset: f64,
    /// Half-space: coefficients of v^2, v^3, v^4 bending the boundary.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [0.0, 0.0, 0.0])]
    pub bend: Vec<f64>,
    /// Spline: four control points as x1,y1,...,x4,y4.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub points: Option<Vec<f64>>,
    /// Scales the shape about the origin.
    #[arg(long, default_value_t = 1.0)]
    pub magnification: f64,
    /// Half-width of the raster (spline) and of the boundary scan.
    #[arg(long, default_value_t = 1.0)]
    pub half_width: f64,
    /// Spline raster pixels per unit length.
    #[arg(long, default_value_t = DEFAULT_SUBCELLS as f64)]
    pub resolution: f64,
    /// Output: polynomial JSON, or PGM for spline shapes.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Also write boundary points as x,y CSV.
    #[arg(long, value_name = "FILE")]
    pub boundary: Option<PathBuf>,
}

fn pair(v: &[f64], flag: &str) -> CmdResult<[f64; 2]> {
    <[f64; 2]>::try_from(v).map_err(|_| Failure::input(format!("--{flag} takes two comma-separated numbers")))
}

impl GenerateArgs {
    fn spec(&self) -> CmdResult<ShapeSpec> {
        Ok(match self.kind {
            ShapeKind::BoundedQuartic => ShapeSpec::BoundedQuartic { seed: self.seed },
            ShapeKind::Conic => {
                let axes = match (self.circle, &self.axes) {
                    (Some(r), None) => [r, r],
                    (None, Some(a)) => pair(a, "axes")?,
                    _ => return Err(Failure::input("conic needs exactly one of --circle and --axes")),
                };
                ShapeSpec::Conic {
                    center: pair(&self.center, "center")?,
                    axes,
                    angle: self.angle,
                }
            }
            ShapeKind::HalfSpace => ShapeSpec::HalfSpace {
                angle: self.angle,
                offset: self.offset,
                bend: <[f64; 3]>::try_from(self.bend.as_slice()).map_err(|_| Failure::input("--bend takes three numbers"))?,
            },
            ShapeKind::Bezier => {
                let p = self.points.as_deref().ok_or_else(|| Failure::input("spline shapes need --points"))?;
                if p.len() != 8 {
                    return Err(Failure::input("--points takes eight numbers"));
                }
                let s = self.magnification;
                ShapeSpec::Bezier {
                    points: [[p[0] * s, p[1] * s], [p[2] * s, p[3] * s], [p[4] * s, p[5] * s], [p[6] * s, p[7] * s]],
                }
            }
        })
    }
}

fn write_boundary(path: &Path, points: &[(f64, f64)]) -> CmdResult<()> {
    io::write_points_csv(path, points)?;
    Ok(())
}

pub fn generate(a: &GenerateArgs, m: &ArgMatches) -> CmdResult<()> {
    let started = Instant::now();
    let out = required(&a.out, "out")?;
    let spec = a.spec()?;
    let mut outputs = vec![out];
    let summary = match spec.polynomial()? {
        Some(p) => {
            let p = p.magnified(a.magnification);
            io::write_json(out, &p)?;
            if let Some(b) = &a.boundary {
                write_boundary(b, &boundary_points(&p, &ImagePlane::unit(a.half_width)?, ZERO_SET_SCAN))?;
                outputs.push(b);
            }
            json!({ "shape": spec, "degree": p.degree() })
        }
        None => {
            let ShapeSpec::Bezier { points } = spec else {
                unreachable!("only splines lack a polynomial")
            };
            let shape = gen_bezier_shape(points, a.half_width, a.resolution)?;
            io::write_pgm(out, &shape.raster)?;
            if let Some(b) = &a.boundary {
                let pts: Vec<(f64, f64)> = shape.polyline.iter().map(|v| (v[0], v[1])).collect();
                write_boundary(b, &pts)?;
                outputs.push(b);
            }
            json!({ "shape": spec, "area": shape.polygon_area(), "pixels": shape.raster.width })
        }
    };
    write_manifest(&manifest_path(m, out), "generate", a, &outputs, summary, started)?;
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Shape file: polynomial JSON or PGM raster covering the plane.
    #[arg(long, value_name = "FILE")]
    pub shape: Option<PathBuf>,
    /// Pixels per unit length of a PGM shape; must be an integer multiple of 1/T.
    #[arg(long, default_value_t = DEFAULT_SUBCELLS as f64)]
    pub raster_resolution: f64,
    /// B-spline order m.
    #[arg(long, default_value_t = 6)]
    pub kernel: usize,
    /// Plane half-width L.
    #[arg(long, default_value_t = 11.0)]
    pub half_width: f64,
    /// Lattice period T.
    #[arg(long, default_value_t = 1.0)]
    pub period: f64,
    /// Odd number of samples per axis, centered on the origin [default: every kernel that meets the plane].
    #[arg(long)]
    pub grid: Option<usize>,
    /// Scales a polynomial shape about the origin.
    #[arg(long, default_value_t = 1.0)]
    pub magnification: f64,
    /// Add white Gaussian noise at this sample SNR (dB).
    #[arg(long)]
    pub snr: Option<f64>,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Quadrature sub-cells per lattice cell for polynomial shapes.
    #[arg(long, default_value_t = DEFAULT_SUBCELLS)]
    pub subcells: usize,
    /// Samples CSV; the sidecar goes next to it with extension .json.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

enum LoadedShape {
    Polynomial(BivariatePolynomial),
    Raster(Raster),
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn load_shape(path: &Path, resolution: f64) -> CmdResult<LoadedShape> {
    if is_pgm(path) {
        Ok(LoadedShape::Raster(io::read_pgm(path, resolution)?))
    } else {
        Ok(LoadedShape::Polynomial(io::read_json(path)?))
    }
}

pub fn sample(a: &SampleArgs, m: &ArgMatches) -> CmdResult<()> {
    let started = Instant::now();
    let out = required(&a.out, "out")?;
    let shape = load_shape(required(&a.shape, "shape")?, a.raster_resolution)?;
    let plane = ImagePlane::new(a.half_width, a.period)?;
    let kernel = BSplineKernel::new(a.kernel);
    let (kr, lr) = match a.grid {
        Some(n) if n % 2 == 1 => (IndexRange::symmetric((n / 2) as i64), IndexRange::symmetric((n / 2) as i64)),
        Some(_) => return Err(Failure::input("--grid must be odd")),
        None => default_ranges(&plane, &kernel),
    };
    let clean = match &shape {
        LoadedShape::Polynomial(p) => sample_shape_with(&p.magnified(a.magnification), &plane, &kernel, kr, lr, a.subcells)?,
        LoadedShape::Raster(r) => sample_raster(r, &plane, &kernel, kr, lr)?,
    };
    let grid = match a.snr {
        Some(snr) => add_noise(&clean, snr, a.seed)?,
        None => clean,
    };
    io::write_samples(out, &grid)?;
    let sidecar = io::sidecar_path(out);
    let cell = plane.period * plane.period;
    let summary = json!({
        "k_range": kr,
        "l_range": lr,
        "sum_times_cell_area": grid.values.sum() * cell,
        "energy": grid.energy(),
    });
    write_manifest(&manifest_path(m, out), "sample", a, &[out, sidecar.as_path()], summary, started)?;
    println!("wrote {} ({}x{} samples)", out.display(), kr.len(), lr.len());
    Ok(())
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitGmArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// B-spline order m.
    #[arg(long, default_value_t = 6)]
    pub kernel: usize,
    /// Highest moment order P.
    #[arg(long, default_value_t = 6)]
    pub order: usize,
    /// Coefficient index half-width K [default: 13, 14, 20 for m = 6, 4, 2].
    #[arg(long)]
    pub half_width: Option<usize>,
    /// Coordinate scale of the objective [default: max(K/2, 1)].
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// Stationarity tolerance of the solver.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    /// Coefficients JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn fit_gm(a: &FitGmArgs, m: &ArgMatches) -> CmdResult<()> {
    let started = Instant::now();
    let out = required(&a.out, "out")?;
    let kk = a
        .half_width
        .or_else(|| default_half_width(a.kernel))
        .ok_or_else(|| Failure::input(format!("no default --half-width for kernel order {}", a.kernel)))?;
    let scale = a.scale.unwrap_or_else(|| default_scale(kk));
    let kernel = BSplineKernel::new(a.kernel);
    let problem = build_gm_objective_scaled(&kernel, a.order, IndexRange::symmetric(kk as i64), scale)?;
    let fit = solve_gm(&problem, None, a.max_iter, a.tol)?;
    let c = &fit.coefficients;
    io::write_json(out, c)?;
    let summary = json!({
        "half_width": kk,
        "scale": scale,
        "objective": c.objective,
        "init_objective": fit.init_objective,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "kkt_residual": fit.kkt_residual,
        "residual_norms": c.residual_norms(),
        "g_min": c.g_min(),
        "interior_min_ratio": c.interior_min_ratio(),
    });
    write_manifest(&manifest_path(m, out), "fit-gm", a, &[out], summary, started)?;
    println!("wrote {} (objective {:e}, {} iterations)", out.display(), c.objective, fit.iterations);
    Ok(())
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Samples CSV with its JSON sidecar.
    #[arg(long, value_name = "FILE")]
    pub samples: Option<PathBuf>,
    /// Degree n of the implicit polynomial.
    #[arg(long, default_value_t = 4)]
    pub degree: usize,
    /// Moment family: conventional or generalized.
    #[arg(long, value_parser = parse_enum::<Mode>, default_value = "generalized")]
    pub mode: Mode,
    /// Fitted coefficients JSON for generalized mode [default: bundled fit for the kernel].
    #[arg(long, value_name = "FILE")]
    pub coefficients: Option<PathBuf>,
    /// Multiplier set of the annihilation system: balanced or full.
    #[arg(long, value_parser = parse_enum::<RsPolicy>, default_value = "balanced")]
    pub policy: RsPolicy,
    /// Stages after least squares: auto (only for noisy samples), always or ls_only.
    #[arg(long, value_parser = parse_enum::<StagePolicy>, default_value = "auto")]
    pub stages: StagePolicy,
    /// Sample threshold for inside/outside constraints, in (0, 0.5).
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Margin of the sign constraints.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Iterations of the consistency refinement.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Relative finite-difference step of the refinement Jacobian.
    #[arg(long, default_value_t = DEFAULT_FD_STEP)]
    pub fd_step: f64,
    /// Moment window stride in lattice steps.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Coordinate scale [default: largest sample index].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Quadrature sub-cells of the forward model.
    #[arg(long, default_value_t = DEFAULT_SUBCELLS)]
    pub subcells: usize,
    /// Quadrature sub-cells of Jacobian columns.
    #[arg(long, default_value_t = DEFAULT_SUBCELLS / 2)]
    pub jacobian_subcells: usize,
    /// Result JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Also render the final shape as PGM.
    #[arg(long, value_name = "FILE")]
    pub render: Option<PathBuf>,
    /// Pixels per unit of the rendering.
    #[arg(long, default_value_t = 16)]
    pub render_resolution: usize,
    /// Also write the final zero set as x,y CSV.
    #[arg(long, value_name = "FILE")]
    pub boundary: Option<PathBuf>,
}

impl ReconstructArgs {
    fn options(&self) -> PipelineOptions {
        PipelineOptions {
            policy: self.policy,
            stages: self.stages,
            epsilon: self.epsilon,
            delta: self.delta,
            max_iter: self.max_iter,
            fd_step: self.fd_step,
            stride: self.stride,
            sigma: self.sigma,
            subcells: self.subcells,
            jacobian_subcells: self.jacobian_subcells,
        }
    }
}

fn load_coefficients(path: Option<&Path>, m: usize) -> CmdResult<GmCoefficients> {
    let gm = match path {
        Some(p) => io::read_json::<GmCoefficients>(p)?,
        None => GmCoefficients::bundled(m).ok_or_else(|| Failure::input(format!("no bundled coefficients for kernel order {m}; pass --coefficients")))?,
    };
    if gm.m != m {
        return Err(Failure::input(format!("coefficients were fitted for order {}, samples use order {m}", gm.m)));
    }
    Ok(gm)
}

fn stage_summary(r: &RecoveryResult) -> Value {
    let stage = |s: &algshape::recover::StageReport| json!({ "sample_snr_db": num(s.sample_snr_db), "seconds": s.seconds });
    json!({
        "ls": stage(&r.ls),
        "qp": r.qp.as_ref().map(stage),
        "final": stage(&r.final_stage),
        "ls_fallback": r.ls_fallback,
        "qp_infeasible": r.qp_infeasible,
        "seconds": r.seconds,
    })
}

pub fn reconstruct(a: &ReconstructArgs, m: &ArgMatches) -> CmdResult<()> {
    let started = Instant::now();
    let out = required(&a.out, "out")?;
    let grid = io::read_samples(required(&a.samples, "samples")?)?;
    let options = a.options();
    let result = match a.mode {
        Mode::Conventional => {
            let repro = classical_for(&grid, options.policy.max_order(a.degree))?;
            run_pipeline(&grid, a.degree, Coefficients::Classical(&repro), &options)?
        }
        Mode::Generalized => {
            let gm = load_coefficients(a.coefficients.as_deref(), grid.kernel.order())?;
            run_pipeline(&grid, a.degree, Coefficients::Generalized(&gm), &options)?
        }
    };
    io::write_json(out, &result)?;
    let mut outputs = vec![out];
    if let Some(path) = &a.render {
        io::write_pgm(path, &render_shape(result.final_poly(), &grid.plane, a.render_resolution)?)?;
        outputs.push(path);
    }
    if let Some(path) = &a.boundary {
        write_boundary(path, &boundary_points(result.final_poly(), &grid.plane, ZERO_SET_SCAN))?;
        outputs.push(path);
    }
    write_manifest(&manifest_path(m, out), "reconstruct", a, &outputs, stage_summary(&result), started)?;
    println!("wrote {} (final sample SNR {:.2} dB)", out.display(), result.final_stage.sample_snr_db);
    Ok(())
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Ground truth: polynomial JSON or PGM raster at --resolution.
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Polynomial JSON or a reconstruct result (every stage is scored).
    #[arg(long, value_name = "FILE")]
    pub reconstruction: Option<PathBuf>,
    /// Half-width of the comparison square [default: plane of --samples].
    #[arg(long)]
    pub half_width: Option<f64>,
    /// Pixels per unit length of the comparison.
    #[arg(long, default_value_t = EVAL_RESOLUTION as f64)]
    pub resolution: f64,
    /// Samples to check each stage's consistency against.
    #[arg(long, value_name = "FILE")]
    pub samples: Option<PathBuf>,
    /// Quadrature sub-cells of the consistency check.
    #[arg(long, default_value_t = DEFAULT_SUBCELLS)]
    pub subcells: usize,
    /// Metrics JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Scores of one reconstructed polynomial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    #[serde(with = "nonfinite")]
    pub psnr_db: f64,
    /// True when no pixel differs (PSNR is infinite).
    pub identical: bool,
    pub differing: u64,
    pub differing_off_boundary: u64,
    pub total: u64,
    /// One-sided distance from the true zero set to the reconstructed one;
    /// absent for raster truths or when the true zero set misses the square.
    pub zero_set_distance: Option<f64>,
    #[serde(with = "nonfinite_opt")]
    pub sample_snr_db: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub half_width: f64,
    pub resolution: f64,
    pub stages: Vec<StageMetrics>,
}

fn load_reconstruction(path: &Path) -> CmdResult<Vec<(String, BivariatePolynomial)>> {
    let v: Value = io::read_json(path)?;
    if v.get("final").is_some() {
        let r: RecoveryResult = serde_json::from_value(v)?;
        let mut out = vec![("ls".to_string(), r.ls.coefficients)];
        if let Some(q) = r.qp {
            out.push(("qp".to_string(), q.coefficients));
        }
        out.push(("final".to_string(), r.final_stage.coefficients));
        Ok(out)
    } else {
        Ok(vec![("reconstruction".to_string(), serde_json::from_value(v)?)])
    }
}

pub fn evaluate(a: &EvaluateArgs, m: &ArgMatches) -> CmdResult<()> {
    let started = Instant::now();
    let out = required(&a.out, "out")?;
    let truth = load_shape(required(&a.truth, "truth")?, a.resolution)?;
    let stages = load_reconstruction(required(&a.reconstruction, "reconstruction")?)?;
    let grid = a.samples.as_deref().map(io::read_samples).transpose()?;
    let half_width = a
        .half_width
        .or(grid.as_ref().map(|g| g.plane.half_width))
        .ok_or_else(|| Failure::input("--half-width is required without --samples"))?;
    let square = ImagePlane::unit(half_width)?;
    let truth_shape = match &truth {
        LoadedShape::Polynomial(p) => Shape::Polynomial(p),
        LoadedShape::Raster(r) => Shape::Raster(r),
    };
    let mut scored = Vec::new();
    for (stage, p) in stages {
        let c = compare_shapes(truth_shape, Shape::Polynomial(&p), half_width, a.resolution)?;
        let zero_set_distance = match &truth {
            LoadedShape::Polynomial(t) => zero_set_distance(t, &p, &square),
            LoadedShape::Raster(_) => None,
        };
        let sample_snr_db = grid.as_ref().map(|g| consistency_snr(g, &p, a.subcells)).transpose()?;
        scored.push(StageMetrics {
            stage,
            psnr_db: c.psnr_db,
            identical: c.identical(),
            differing: c.differing,
            differing_off_boundary: c.differing_off_boundary,
            total: c.total,
            zero_set_distance,
            sample_snr_db,
        });
    }
    let metrics = Metrics {
        half_width,
        resolution: a.resolution,
        stages: scored,
    };
    io::write_json(out, &metrics)?;
    let summary: Vec<Value> = metrics.stages.iter().map(|s| json!({ "stage": s.stage, "psnr_db": num(s.psnr_db) })).collect();
    write_manifest(&manifest_path(m, out), "evaluate", a, &[out], Value::Array(summary), started)?;
    for s in &metrics.stages {
        println!("{}: PSNR {:.2} dB", s.stage, s.psnr_db);
    }
    Ok(())
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Scenario: noiseless, noisy, kernel-b2, kernel-b4, kernel-b6, unbounded, overfit or bezier.
    #[arg(long, value_parser = parse_enum::<ScenarioName>)]
    pub scenario: Option<ScenarioName>,
    /// Number of noise seeds.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    /// Fitted coefficients JSON [default: bundled fit for the scenario's kernel].
    #[arg(long, value_name = "FILE")]
    pub coefficients: Option<PathBuf>,
    /// Directory receiving truth, samples, results and summary.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

/// One seed of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReproRow {
    pub seed: u64,
    #[serde(with = "nonfinite")]
    pub psnr_ls: f64,
    #[serde(with = "nonfinite_opt")]
    pub psnr_qp: Option<f64>,
    #[serde(with = "nonfinite")]
    pub psnr_final: f64,
    #[serde(with = "nonfinite")]
    pub sample_snr_ls: f64,
    #[serde(with = "nonfinite_opt")]
    pub sample_snr_qp: Option<f64>,
    #[serde(with = "nonfinite")]
    pub sample_snr_final: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReproSummary {
    pub scenario: Scenario,
    pub runs: Vec<ReproRow>,
    #[serde(with = "nonfinite")]
    pub median_psnr_ls: f64,
    #[serde(with = "nonfinite")]
    pub median_psnr_final: f64,
}

pub fn repro(a: &ReproArgs, m: &ArgMatches) -> CmdResult<()> {
    let started = Instant::now();
    let name = a.scenario.ok_or_else(|| Failure::input("--scenario is required"))?;
    let dir = required(&a.out_dir, "out-dir")?;
    if a.seeds == 0 {
        return Err(Failure::input("--seeds must be positive"));
    }
    std::fs::create_dir_all(dir)?;
    let scenario = Scenario::named(name);
    let gm = match scenario.mode {
        Mode::Conventional => None,
        Mode::Generalized => Some(load_coefficients(a.coefficients.as_deref(), scenario.kernel.order())?),
    };
    let truth = scenario.truth()?;
    let mut outputs: Vec<PathBuf> = Vec::new();
    match &truth {
        Truth::Polynomial(p) => {
            let path = dir.join("truth.json");
            io::write_json(&path, p)?;
            outputs.push(path);
        }
        Truth::Raster { evaluation, .. } => {
            let path = dir.join("truth.pgm");
            io::write_pgm(&path, evaluation)?;
            outputs.push(path);
        }
    }
    let mut runs = Vec::new();
    for seed in a.first_seed..a.first_seed + a.seeds as u64 {
        let grid = scenario.samples(&truth, seed)?;
        let samples = dir.join(format!("samples_seed{seed}.csv"));
        io::write_samples(&samples, &grid)?;
        let result = scenario.reconstruct(&grid, gm.as_ref())?;
        let result_path = dir.join(format!("result_seed{seed}.json"));
        io::write_json(&result_path, &result)?;
        let boundary = dir.join(format!("boundary_seed{seed}.csv"));
        write_boundary(&boundary, &boundary_points(result.final_poly(), &scenario.plane, ZERO_SET_SCAN))?;
        let run = scenario.score(&truth, seed, result)?;
        let r = &run.result;
        let row = ReproRow {
            seed,
            psnr_ls: run.psnr_ls,
            psnr_qp: run.psnr_qp,
            psnr_final: run.psnr_final,
            sample_snr_ls: r.ls.sample_snr_db,
            sample_snr_qp: r.qp.as_ref().map(|q| q.sample_snr_db),
            sample_snr_final: r.final_stage.sample_snr_db,
        };
        println!(
            "{} seed {seed}: PSNR ls {:.2} qp {} final {:.2} dB",
            name.as_str(),
            row.psnr_ls,
            row.psnr_qp.map_or("-".to_string(), |v| format!("{v:.2}")),
            row.psnr_final
        );
        runs.push(row);
        outputs.extend([io::sidecar_path(&samples), samples, result_path, boundary]);
    }
    let summary = ReproSummary {
        median_psnr_ls: median(&runs.iter().map(|r| r.psnr_ls).collect::<Vec<_>>()),
        median_psnr_final: median(&runs.iter().map(|r| r.psnr_final).collect::<Vec<_>>()),
        scenario,
        runs,
    };
    let summary_path = dir.join("summary.json");
    io::write_json(&summary_path, &summary)?;
    outputs.push(summary_path);
    let manifest = m.get_one::<PathBuf>("manifest").cloned().unwrap_or_else(|| dir.join("manifest.json"));
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let brief = json!({ "median_psnr_ls": num(summary.median_psnr_ls), "median_psnr_final": num(summary.median_psnr_final) });
    write_manifest(&manifest, "repro", a, &refs, brief, started)?;
    println!("median final PSNR {:.2} dB over {} seed(s)", summary.median_psnr_final, a.seeds);
    Ok(())
}
