//! Named end-to-end reconstruction scenarios with fixed fixtures.
//!
//! All scenarios use a unit lattice period, so lattice and plane
//! coordinates coincide.

use serde::{Deserialize, Serialize};

use crate::annihilate::Mode;
use crate::bspline::BSplineKernel;
use crate::error::{Error, Result};
use crate::gmfit::GmCoefficients;
use crate::metrics::{compare_shapes, Comparison, Shape, EVAL_RESOLUTION};
use crate::poly2d::{BivariatePolynomial, ImagePlane, Raster};
use crate::recover::{classical_for, run_pipeline, Coefficients, PipelineOptions, RecoveryResult, StagePolicy};
use crate::sampler::{add_noise, default_ranges, sample_raster, sample_shape, IndexRange, SampleGrid, DEFAULT_SUBCELLS};
use crate::shapegen::{gen_bezier_shape, gen_bounded_quartic, gen_conic, gen_half_space, ShapeSpec, EXTENT};

/// Seed of the bounded quartic used by every bounded scenario.
pub const QUARTIC_SEED: u64 = 34;
pub const BEZIER_POINTS: [[f64; 2]; 4] = [[-4.6, -3.4], [4.4, -4.4], [3.6, 4.6], [-3.8, 2.8]];

/// Scenario identifiers accepted by `repro`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioName {
    /// Noiseless 11x11 samples, classical moments.
    Noiseless,
    /// 29x29 samples at 17 dB, generalized moments.
    Noisy,
    /// 27 dB samples through kernels of order 2, 4 and 6.
    KernelB2,
    KernelB4,
    KernelB6,
    /// Half-plane-like quartic crossing the image border, 39x39 samples at 25 dB.
    Unbounded,
    /// Ellipse reconstructed with a degree-4 model.
    Overfit,
    /// Spline-bounded shape, 15x15 noiseless samples, order-2 kernel.
    Bezier,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 8] = [
        ScenarioName::Noiseless,
        ScenarioName::Noisy,
        ScenarioName::KernelB2,
        ScenarioName::KernelB4,
        ScenarioName::KernelB6,
        ScenarioName::Unbounded,
        ScenarioName::Overfit,
        ScenarioName::Bezier,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
            let names: Vec<_> = Self::ALL.iter().map(|n| n.as_str()).collect();
            Error::invalid(format!("unknown scenario '{s}'; expected one of {}", names.join(", ")))
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::Noiseless => "noiseless",
            ScenarioName::Noisy => "noisy",
            ScenarioName::KernelB2 => "kernel-b2",
            ScenarioName::KernelB4 => "kernel-b4",
            ScenarioName::KernelB6 => "kernel-b6",
            ScenarioName::Unbounded => "unbounded",
            ScenarioName::Overfit => "overfit",
            ScenarioName::Bezier => "bezier",
        }
    }
}

/// Ground truth of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Polynomial(BivariatePolynomial),
    /// Raster at the sampler's sub-cell density and one at [`EVAL_RESOLUTION`].
    Raster {
        sampling: Raster,
        evaluation: Raster,
    },
}

/// Fully specified scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    pub shape: ShapeSpec,
    /// Magnification applied to the unit-domain polynomial.
    pub magnification: f64,
    pub plane: ImagePlane,
    pub kernel: BSplineKernel,
    pub k_range: IndexRange,
    pub l_range: IndexRange,
    pub n: usize,
    pub mode: Mode,
    pub snr_db: Option<f64>,
    /// Half-width of the square on which PSNR is measured.
    pub eval_half_width: f64,
    pub options: PipelineOptions,
}

impl Scenario {
    pub fn named(name: ScenarioName) -> Self {
        let quartic = ShapeSpec::BoundedQuartic { seed: QUARTIC_SEED };
        let bounded = |name, m: usize, half: f64, snr: Option<f64>| {
            let plane = ImagePlane::unit(half).expect("valid plane");
            let kernel = BSplineKernel::new(m);
            let (k_range, l_range) = default_ranges(&plane, &kernel);
            Scenario {
                name,
                shape: quartic.clone(),
                magnification: 9.0,
                plane,
                kernel,
                k_range,
                l_range,
                n: 4,
                mode: Mode::Generalized,
                snr_db: snr,
                eval_half_width: 11.0,
                options: PipelineOptions::default(),
            }
        };
        match name {
            ScenarioName::Noiseless => {
                let plane = ImagePlane::unit(2.0).expect("valid plane");
                let kernel = BSplineKernel::new(6);
                let (k_range, l_range) = default_ranges(&plane, &kernel);
                Scenario {
                    name,
                    shape: quartic,
                    // inside the interval where 11 kernels reproduce monomials exactly
                    magnification: 1.5 / EXTENT,
                    plane,
                    kernel,
                    k_range,
                    l_range,
                    n: 4,
                    mode: Mode::Conventional,
                    snr_db: None,
                    eval_half_width: 2.0,
                    options: PipelineOptions::default(),
                }
            }
            ScenarioName::Noisy => bounded(name, 6, 11.0, Some(17.0)),
            ScenarioName::KernelB6 => bounded(name, 6, 11.0, Some(27.0)),
            ScenarioName::KernelB4 => bounded(name, 4, 13.0, Some(27.0)),
            ScenarioName::KernelB2 => bounded(name, 2, 15.0, Some(27.0)),
            ScenarioName::Unbounded => {
                let plane = ImagePlane::unit(40.0).expect("valid plane");
                let kernel = BSplineKernel::new(6);
                Scenario {
                    name,
                    shape: ShapeSpec::HalfSpace {
                        angle: 0.5,
                        offset: 0.15,
                        bend: [0.45, 0.2, -0.35],
                    },
                    magnification: 19.0,
                    plane,
                    kernel,
                    k_range: IndexRange::symmetric(19),
                    l_range: IndexRange::symmetric(19),
                    n: 4,
                    mode: Mode::Generalized,
                    snr_db: Some(25.0),
                    eval_half_width: 19.0,
                    options: PipelineOptions::default(),
                }
            }
            ScenarioName::Overfit => {
                let mut s = Scenario::named(ScenarioName::Noiseless);
                s.name = name;
                s.shape = ShapeSpec::Conic {
                    center: [0.1, -0.05],
                    axes: [0.85, 0.5],
                    angle: 0.4,
                };
                s.magnification = 1.6;
                s.options.stages = StagePolicy::Always;
                s
            }
            ScenarioName::Bezier => {
                let plane = ImagePlane::unit(6.0).expect("valid plane");
                let kernel = BSplineKernel::new(2);
                let (k_range, l_range) = default_ranges(&plane, &kernel);
                Scenario {
                    name,
                    shape: ShapeSpec::Bezier { points: BEZIER_POINTS },
                    magnification: 1.0,
                    plane,
                    kernel,
                    k_range,
                    l_range,
                    n: 4,
                    mode: Mode::Generalized,
                    snr_db: None,
                    eval_half_width: 6.0,
                    options: PipelineOptions::default(),
                }
            }
        }
    }

    pub fn truth(&self) -> Result<Truth> {
        match &self.shape {
            ShapeSpec::Bezier { points } => {
                let sub = DEFAULT_SUBCELLS as f64 / self.plane.period;
                let sampling = gen_bezier_shape(*points, self.plane.half_width, sub)?.raster;
                let evaluation = gen_bezier_shape(*points, self.eval_half_width, EVAL_RESOLUTION as f64)?.raster;
                Ok(Truth::Raster { sampling, evaluation })
            }
            ShapeSpec::BoundedQuartic { seed } => Ok(Truth::Polynomial(gen_bounded_quartic(*seed)?.magnified(self.magnification))),
            ShapeSpec::Conic { center, axes, angle } => Ok(Truth::Polynomial(gen_conic(*center, *axes, *angle)?.magnified(self.magnification))),
            ShapeSpec::HalfSpace { angle, offset, bend } => Ok(Truth::Polynomial(gen_half_space(*angle, *offset, *bend).magnified(self.magnification))),
        }
    }

    /// Noiseless samples of the truth.
    pub fn clean_samples(&self, truth: &Truth) -> Result<SampleGrid> {
        match truth {
            Truth::Polynomial(p) => sample_shape(p, &self.plane, &self.kernel, self.k_range, self.l_range),
            Truth::Raster { sampling, .. } => sample_raster(sampling, &self.plane, &self.kernel, self.k_range, self.l_range),
        }
    }

    /// Samples with the scenario's noise level for `seed`.
    pub fn samples(&self, truth: &Truth, seed: u64) -> Result<SampleGrid> {
        let clean = self.clean_samples(truth)?;
        match self.snr_db {
            Some(snr) => add_noise(&clean, snr, seed),
            None => Ok(clean),
        }
    }

    /// Runs the pipeline on `grid`; `gm` is required in generalized mode.
    pub fn reconstruct(&self, grid: &SampleGrid, gm: Option<&GmCoefficients>) -> Result<RecoveryResult> {
        match self.mode {
            Mode::Conventional => {
                let repro = classical_for(grid, self.options.policy.max_order(self.n))?;
                run_pipeline(grid, self.n, Coefficients::Classical(&repro), &self.options)
            }
            Mode::Generalized => {
                let gm = gm.ok_or_else(|| Error::invalid("generalized mode needs fitted coefficients"))?;
                if gm.m != self.kernel.order() {
                    return Err(Error::invalid("coefficients were fitted for another kernel"));
                }
                run_pipeline(grid, self.n, Coefficients::Generalized(gm), &self.options)
            }
        }
    }

    /// Bundled coefficients for this scenario's kernel, when generalized.
    pub fn bundled_coefficients(&self) -> Result<Option<GmCoefficients>> {
        match self.mode {
            Mode::Conventional => Ok(None),
            Mode::Generalized => GmCoefficients::bundled(self.kernel.order())
                .map(Some)
                .ok_or_else(|| Error::invalid(format!("no bundled coefficients for order {}", self.kernel.order()))),
        }
    }

    /// Compares `recon` against the truth on the evaluation square.
    pub fn compare(&self, truth: &Truth, recon: &BivariatePolynomial) -> Result<Comparison> {
        let t = match truth {
            Truth::Polynomial(p) => Shape::Polynomial(p),
            Truth::Raster { evaluation, .. } => Shape::Raster(evaluation),
        };
        compare_shapes(t, Shape::Polynomial(recon), self.eval_half_width, EVAL_RESOLUTION as f64)
    }

    /// Pipeline run plus per-stage image metrics for one seed.
    pub fn run(&self, truth: &Truth, gm: Option<&GmCoefficients>, seed: u64) -> Result<ScenarioRun> {
        let grid = self.samples(truth, seed)?;
        let result = self.reconstruct(&grid, gm)?;
        self.score(truth, seed, result)
    }

    /// Per-stage image metrics of a finished reconstruction.
    pub fn score(&self, truth: &Truth, seed: u64, result: RecoveryResult) -> Result<ScenarioRun> {
        let ls = self.compare(truth, &result.ls.coefficients)?;
        let qp = result.qp.as_ref().map(|q| self.compare(truth, &q.coefficients)).transpose()?;
        let fin = self.compare(truth, &result.final_stage.coefficients)?;
        Ok(ScenarioRun {
            seed,
            psnr_ls: ls.psnr_db,
            psnr_qp: qp.map(|c| c.psnr_db),
            psnr_final: fin.psnr_db,
            final_comparison: fin,
            result,
        })
    }
}

/// Outcome of [`Scenario::run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub seed: u64,
    #[serde(with = "crate::io::nonfinite")]
    pub psnr_ls: f64,
    #[serde(with = "crate::io::nonfinite_opt")]
    pub psnr_qp: Option<f64>,
    #[serde(with = "crate::io::nonfinite")]
    pub psnr_final: f64,
    pub final_comparison: Comparison,
    pub result: RecoveryResult,
}

/// Median of a nonempty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
