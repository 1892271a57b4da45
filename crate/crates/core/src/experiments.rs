//! Synthetic additive quantile models and empirical learning rates.
//!
//! Responses are `Y = f*(X) + e` with `X` uniform on the unit cube and `e`
//! uniform on `[-2 a tau, 2 a (1 - tau)]`, so the conditional
//! `tau`-quantile of `Y` given `X = x` is exactly `f*(x)`. For this noise
//! the conditional excess risk of predicting `f*(x) + delta` is
//!
//! ```text
//! delta^2 / (4a)              for -2 a tau <= delta <= 2 a (1 - tau)
//! (1 - tau) delta - a (1 - tau)^2   above that range
//! -tau delta - a tau^2              below it
//! ```
//!
//! so the true excess risk only needs Monte Carlo over `x`.
//!
//! The module also carries the divergent series showing that a Gaussian
//! bump in one coordinate is not in the RKHS of the product kernel.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, Points};
use crate::error::{Error, Result};
use crate::kernels::{gram, rkhs_norm_sq, BlockLayout, KernelSpec};
use crate::loss::clip;
use crate::solver::{fit, predict_all, FitOptions, Model};

/// Closed-form function of one input block. Sinusoids and polynomials act
/// on the mean of the block's coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BlockTarget {
    /// `scale * exp(-|x - center|^2 / sigma^2)`.
    GaussianBump {
        center: Vec<f64>,
        sigma: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `amplitude * sin(2 pi frequency t + phase)`.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `sum_k coefficients[k] t^k`.
    Polynomial { coefficients: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

fn block_mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

impl BlockTarget {
    fn validate(&self, width: usize) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            BlockTarget::GaussianBump { center, sigma, scale } => {
                if center.len() != width {
                    return Err(Error::input(format!(
                        "bump centre has {} coordinates for a block of width {width}",
                        center.len()
                    )));
                }
                if !(*sigma > 0.0 && sigma.is_finite()) || !finite(center) || !scale.is_finite() {
                    return Err(Error::input("invalid Gaussian bump parameters"));
                }
            }
            BlockTarget::Sinusoid { amplitude, frequency, phase } => {
                if !finite(&[*amplitude, *frequency, *phase]) {
                    return Err(Error::input("invalid sinusoid parameters"));
                }
            }
            BlockTarget::Polynomial { coefficients } => {
                if coefficients.is_empty() || !finite(coefficients) {
                    return Err(Error::input("polynomial needs finite coefficients"));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            BlockTarget::GaussianBump { center, sigma, scale } => {
                let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                scale * (-d2 / (sigma * sigma)).exp()
            }
            BlockTarget::Sinusoid { amplitude, frequency, phase } => {
                amplitude * (2.0 * std::f64::consts::PI * frequency * block_mean(x) + phase).sin()
            }
            BlockTarget::Polynomial { coefficients } => {
                let t = block_mean(x);
                coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
        }
    }

    /// Upper bound on `|eval(x)|` over the unit cube.
    pub fn sup_bound(&self) -> f64 {
        match self {
            BlockTarget::GaussianBump { scale, .. } => scale.abs(),
            BlockTarget::Sinusoid { amplitude, .. } => amplitude.abs(),
            BlockTarget::Polynomial { coefficients } => coefficients.iter().map(|c| c.abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    /// Uniform of width `2 halfwidth`, shifted so its `tau`-quantile is 0.
    UniformSymmetric { halfwidth: f64 },
}

impl Noise {
    pub fn halfwidth(&self) -> f64 {
        match *self {
            Noise::UniformSymmetric { halfwidth } => halfwidth,
        }
    }

    /// Support `[-2 a tau, 2 a (1 - tau)]`.
    pub fn support(&self, tau: f64) -> (f64, f64) {
        let a = self.halfwidth();
        (-a - a * (2.0 * tau - 1.0), a - a * (2.0 * tau - 1.0))
    }
}

/// Expected shifted-loss risk at `f*(x) + delta` minus that at `f*(x)`,
/// given `x`.
pub fn conditional_excess(noise: &Noise, tau: f64, delta: f64) -> f64 {
    let a = noise.halfwidth();
    let (lo, hi) = noise.support(tau);
    if delta > hi {
        (1.0 - tau) * delta - a * (1.0 - tau) * (1.0 - tau)
    } else if delta < lo {
        -tau * delta - a * tau * tau
    } else {
        delta * delta / (4.0 * a)
    }
}

fn default_gap_tol() -> f64 {
    1e-6
}

fn default_max_epochs() -> usize {
    50_000
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub layout: BlockLayout,
    /// One function per block; `f*` is their sum.
    pub target: Vec<BlockTarget>,
    pub noise: Noise,
    pub tau: f64,
    pub kernel_a: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_b: Option<KernelSpec>,
    pub n_grid: Vec<usize>,
    /// `lambda_n = n^{-beta}` for `kernel_a`.
    pub beta: f64,
    /// Exponent for `kernel_b`; defaults to `beta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_b: Option<f64>,
    pub seeds: Vec<u64>,
    /// Number of fresh inputs for the Monte Carlo risk.
    pub risk_eval: usize,
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        ExperimentSpec::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.layout.total_dim();
        if self.target.len() != self.layout.num_blocks() {
            return Err(Error::input(format!(
                "{} target functions for {} blocks",
                self.target.len(),
                self.layout.num_blocks()
            )));
        }
        for (t, &w) in self.target.iter().zip(self.layout.dims()) {
            t.validate(w)?;
        }
        if !(self.noise.halfwidth() > 0.0 && self.noise.halfwidth().is_finite()) {
            return Err(Error::input("noise halfwidth must be positive"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::input(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        for k in self.kernels() {
            k.1.validate()?;
            k.1.check_dim(d)?;
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return Err(Error::input("n_grid must be non-empty with positive sizes"));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::input("n_grid must be strictly increasing"));
        }
        for b in std::iter::once(self.beta).chain(self.beta_b) {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::input(format!("schedule exponent must be positive, got {b}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::input("at least one seed required"));
        }
        if self.risk_eval == 0 {
            return Err(Error::input("risk_eval must be at least 1"));
        }
        if !(self.gap_tol > 0.0) || self.max_epochs == 0 || self.workers == 0 {
            return Err(Error::input("gap_tol, max_epochs and workers must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn target_value(&self, x: &[f64]) -> f64 {
        self.layout
            .ranges()
            .zip(&self.target)
            .map(|(r, t)| t.eval(&x[r]))
            .sum()
    }

    /// Bound on `|Y|`, used as the clipping level.
    pub fn response_bound(&self) -> f64 {
        let (lo, hi) = self.noise.support(self.tau);
        self.target.iter().map(BlockTarget::sup_bound).sum::<f64>() + lo.abs().max(hi.abs())
    }

    /// Labelled kernels in run order.
    pub fn kernels(&self) -> Vec<(&'static str, &KernelSpec, f64)> {
        let mut out = vec![("kernel_a", &self.kernel_a, self.beta)];
        if let Some(k) = &self.kernel_b {
            out.push(("kernel_b", k, self.beta_b.unwrap_or(self.beta)));
        }
        out
    }
}

fn uniform_points(dim: usize, n: usize, rng: &mut ChaCha8Rng) -> Points {
    let data = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    Points::new(dim, data).expect("finite coordinates")
}

pub fn generate(spec: &ExperimentSpec, n: usize, seed: u64) -> Result<DataSet> {
    if n == 0 {
        return Err(Error::input("sample size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_points(spec.dim(), n, &mut rng);
    let (lo, hi) = spec.noise.support(spec.tau);
    let y = x
        .rows()
        .map(|row| spec.target_value(row) + lo + (hi - lo) * rng.random::<f64>())
        .collect();
    DataSet::new(x, y, None)
}

/// Monte Carlo estimate of the excess shifted-loss risk of `predictor`
/// over `m` fresh uniform inputs. The estimate is a mean of nonnegative
/// terms.
pub fn true_excess_risk<F>(predictor: F, spec: &ExperimentSpec, m: usize, seed: u64) -> Result<f64>
where
    F: Fn(&Points) -> Result<Vec<f64>>,
{
    if m == 0 {
        return Err(Error::input("Monte Carlo size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_points(spec.dim(), m, &mut rng);
    let preds = predictor(&x)?;
    if preds.len() != m {
        return Err(Error::input("predictor returned the wrong number of values"));
    }
    let total: f64 = x
        .rows()
        .zip(&preds)
        .map(|(row, &t)| conditional_excess(&spec.noise, spec.tau, t - spec.target_value(row)))
        .sum();
    Ok(total / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcessPair {
    pub clipped: f64,
    pub raw: f64,
}

/// Excess risk of a fitted model with and without clipping at
/// [`ExperimentSpec::response_bound`], on one shared evaluation sample.
pub fn model_excess(model: &Model, spec: &ExperimentSpec, m: usize, seed: u64) -> Result<ExcessPair> {
    let bound = spec.response_bound();
    let raw = predict_all(model, &uniform_points(spec.dim(), m, &mut ChaCha8Rng::seed_from_u64(seed)))?;
    let clipped: Vec<f64> = raw.iter().map(|&t| clip(bound, t)).collect();
    Ok(ExcessPair {
        clipped: true_excess_risk(|_| Ok(clipped.clone()), spec, m, seed)?,
        raw: true_excess_risk(|_| Ok(raw.clone()), spec, m, seed)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Points dropped for nonpositive excess.
    pub dropped: usize,
}

/// Least squares of `log excess` on `log n`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, e)| *n > 0.0 && *e > 0.0 && e.is_finite())
        .map(|(n, e)| (n.ln(), e.ln()))
        .collect();
    let dropped = points.len() - usable.len();
    if dropped > 0 {
        eprintln!("note: {dropped} point(s) with nonpositive excess dropped from the slope fit");
    }
    if usable.len() < 3 {
        return Err(Error::input(format!(
            "slope fit needs at least 3 usable points, got {}",
            usable.len()
        )));
    }
    let k = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / k;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = usable.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::input("slope fit needs at least two distinct sample sizes"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = usable
        .iter()
        .map(|p| {
            let r = p.1 - intercept - slope * p.0;
            r * r
        })
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    if !slope.is_finite() {
        return Err(Error::numeric("slope fit is not finite"));
    }
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
        dropped,
    })
}

/// One (kernel, n, seed) fit.
#[derive(Debug, Clone, PartialEq)]
pub struct JobResult {
    pub kernel: String,
    pub n: usize,
    pub seed: u64,
    /// Excess risk of the clipped predictor.
    pub excess: f64,
    pub excess_raw: f64,
    pub lambda: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobFailure {
    pub kernel: String,
    pub n: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub kernel: String,
    pub n_grid: Vec<usize>,
    pub mean_excess: Vec<f64>,
    /// Standard deviation over seeds at each `n`.
    pub spread: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub results: Vec<JobResult>,
    pub failures: Vec<JobFailure>,
    pub fits: Vec<RateFit>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream `stream` of the job `(seed, n)`. Data and evaluation streams do
/// not depend on the kernel so both kernels see the same samples.
pub fn job_seed(seed: u64, n: usize, stream: u64) -> u64 {
    seed ^ splitmix(splitmix(n as u64) ^ stream)
}

const DATA_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;

fn kernel_stream(index: usize) -> u64 {
    2 + index as u64
}

fn run_job(
    spec: &ExperimentSpec,
    kernel_index: usize,
    n: usize,
    seed: u64,
) -> std::result::Result<JobResult, JobFailure> {
    let (label, kernel, beta) = spec.kernels()[kernel_index];
    let lambda = (n as f64).powf(-beta);
    let attempt = || -> Result<JobResult> {
        let data = generate(spec, n, job_seed(seed, n, DATA_STREAM))?;
        let opts = FitOptions {
            gap_tol: spec.gap_tol,
            max_epochs: spec.max_epochs,
            seed: job_seed(seed, n, kernel_stream(kernel_index)),
        };
        let model = fit(kernel, &data, lambda, spec.tau, &opts)?;
        let ex = model_excess(&model, spec, spec.risk_eval, job_seed(seed, n, EVAL_STREAM))?;
        Ok(JobResult {
            kernel: label.to_string(),
            n,
            seed,
            excess: ex.clipped,
            excess_raw: ex.raw,
            lambda,
            gap: model.gap(),
        })
    };
    attempt().map_err(|e| JobFailure {
        kernel: label.to_string(),
        n,
        seed,
        message: e.to_string(),
    })
}

/// Runs every (kernel, n, seed) job, on `spec.workers` threads, and fits
/// one slope per kernel to the seed-averaged clipped excess risks. Failed
/// jobs are reported and left out of the averages.
pub fn rate_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let kernels = spec.kernels();
    let mut jobs = Vec::new();
    for k in 0..kernels.len() {
        for &n in &spec.n_grid {
            for &seed in &spec.seeds {
                jobs.push((k, n, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::input(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, n, seed)| run_job(spec, k, n, seed))
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => {
                eprintln!(
                    "note: job {} n={} seed={} failed and is excluded: {}",
                    f.kernel, f.n, f.seed, f.message
                );
                failures.push(f);
            }
        }
    }

    let mut fits = Vec::new();
    for (label, _, _) in &kernels {
        let mut ns = Vec::new();
        let mut means = Vec::new();
        let mut spread = Vec::new();
        for &n in &spec.n_grid {
            let vals: Vec<f64> = results
                .iter()
                .filter(|r| r.kernel == *label && r.n == n)
                .map(|r| r.excess)
                .collect();
            if vals.is_empty() {
                continue;
            }
            let k = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / k;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
            ns.push(n);
            means.push(mean);
            spread.push(var.sqrt());
        }
        let pts: Vec<(f64, f64)> = ns.iter().zip(&means).map(|(&n, &e)| (n as f64, e)).collect();
        let sf = fit_slope(&pts)?;
        fits.push(RateFit {
            kernel: label.to_string(),
            n_grid: ns,
            mean_excess: means,
            spread,
            slope: sf.slope,
            intercept: sf.intercept,
            r2: sf.r2,
        });
    }
    Ok(ExperimentOutcome {
        results,
        failures,
        fits,
    })
}

pub fn write_results_csv<W: Write>(results: &[JobResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kernel", "n", "seed", "excess", "lambda", "gap"])?;
    for r in results {
        w.write_record([
            r.kernel.clone(),
            r.n.to_string(),
            r.seed.to_string(),
            r.excess.to_string(),
            r.lambda.to_string(),
            r.gap.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Unclipped excess risks, one row per job.
pub fn write_raw_csv<W: Write>(results: &[JobResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kernel", "n", "seed", "excess_raw"])?;
    for r in results {
        w.write_record([r.kernel.clone(), r.n.to_string(), r.seed.to_string(), r.excess_raw.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(fits: &[RateFit], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kernel", "slope", "intercept", "r2"])?;
    for f in fits {
        w.write_record([f.kernel.clone(), f.slope.to_string(), f.intercept.to_string(), f.r2.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.csv`, `summary.csv` and `raw_excess.csv` into `dir`.
pub fn write_outcome(outcome: &ExperimentOutcome, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let open = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
    write_results_csv(&outcome.results, open("results.csv")?)?;
    write_summary_csv(&outcome.fits, open("summary.csv")?)?;
    write_raw_csv(&outcome.results, open("raw_excess.csv")?)?;
    Ok(())
}

/// Partial sum `S_M = sum_{m=0}^M C(2m, m) 4^{-m}` and the lower bound
/// `1 + sum_{m=1}^M 2 sqrt(pi) / (e^2 sqrt(m))`.
pub fn example1_series(big_m: usize) -> (f64, f64) {
    let c = 2.0 * std::f64::consts::PI.sqrt() / std::f64::consts::E.powi(2);
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut lower = 1.0;
    for m in 1..=big_m {
        term *= (2 * m - 1) as f64 / (2 * m) as f64;
        sum += term;
        lower += c / (m as f64).sqrt();
    }
    (sum, lower)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub m: usize,
    pub partial_sum: f64,
    pub lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example1Report {
    pub sigma: f64,
    /// Norm of `k_1(., 0)` in the additive RKHS.
    pub additive_norm: f64,
    /// Largest deviation of `k_1(., 0)` from the bump `exp(-x_1^2 / sigma^2)`
    /// on a probe grid.
    pub bump_defect: f64,
    pub series: Vec<SeriesPoint>,
}

impl Example1Report {
    pub fn series_above_bound(&self) -> bool {
        self.series.iter().all(|p| p.partial_sum >= p.lower_bound)
    }

    pub fn series_increasing(&self) -> bool {
        self.series.windows(2).all(|w| w[1].partial_sum > w[0].partial_sum)
    }
}

/// Additive-norm side and series side of the two-dimensional Gaussian
/// example, with series points at `M = 0, 1, 2, 4, ...` and `grid_m`.
pub fn example1_membership(sigma: f64, grid_m: usize) -> Result<Example1Report> {
    let k1 = KernelSpec::gaussian(sigma)?;
    let additive = KernelSpec::additive(BlockLayout::unit(2)?, vec![k1.clone(), k1.clone()])?;
    // f = k_1(., 0) is the first-block part of the additive kernel section
    // at the origin; its additive norm is that of the one-term expansion
    let origin = Points::from_scalars(&[0.0])?;
    let additive_norm = rkhs_norm_sq(&[1.0], &gram(&k1, &origin)?)?.sqrt();

    let mut bump_defect: f64 = 0.0;
    for i in 0..=20 {
        for j in 0..=20 {
            let x = [i as f64 / 20.0 - 0.5, j as f64 / 10.0 - 1.0];
            let f = additive.eval(&x, &[0.0, 0.0])? - k1.eval(&x[1..], &[0.0])?;
            bump_defect = bump_defect.max((f - (-x[0] * x[0] / (sigma * sigma)).exp()).abs());
        }
    }

    let mut marks = vec![0];
    let mut m = 1;
    while m < grid_m {
        marks.push(m);
        m *= 2;
    }
    if grid_m > 0 {
        marks.push(grid_m);
    }
    let series = marks
        .into_iter()
        .map(|m| {
            let (s, lb) = example1_series(m);
            SeriesPoint {
                m,
                partial_sum: s,
                lower_bound: lb,
            }
        })
        .collect();
    Ok(Example1Report {
        sigma,
        additive_norm,
        bump_defect,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        let layout = BlockLayout::unit(2).unwrap();
        ExperimentSpec {
            layout: layout.clone(),
            target: vec![
                BlockTarget::Sinusoid {
                    amplitude: 0.5,
                    frequency: 1.0,
                    phase: 0.0,
                },
                BlockTarget::Polynomial {
                    coefficients: vec![0.0, 1.0, -1.0],
                },
            ],
            noise: Noise::UniformSymmetric { halfwidth: 0.5 },
            tau: 0.3,
            kernel_a: KernelSpec::additive_gaussian(layout.clone(), 0.5).unwrap(),
            kernel_b: Some(KernelSpec::product_gaussian(layout, 0.5).unwrap()),
            n_grid: vec![20, 40, 80],
            beta: 1.0,
            beta_b: None,
            seeds: vec![0, 1],
            risk_eval: 200,
            gap_tol: 1e-6,
            max_epochs: 50_000,
            workers: 1,
        }
    }

    /// Numerical integration of the shifted pinball risk over the noise.
    fn excess_by_quadrature(noise: &Noise, tau: f64, delta: f64) -> f64 {
        let (lo, hi) = noise.support(tau);
        let k = 200_000;
        let h = (hi - lo) / k as f64;
        let pin = |r: f64| if r > 0.0 { (1.0 - tau) * r } else { -tau * r };
        let mut s = 0.0;
        for i in 0..k {
            let e = lo + (i as f64 + 0.5) * h;
            s += pin(delta - e) - pin(-e);
        }
        s / k as f64
    }

    #[test]
    fn conditional_excess_matches_quadrature() {
        let noise = Noise::UniformSymmetric { halfwidth: 0.7 };
        for &tau in &[0.1, 0.5, 0.8] {
            for &delta in &[-3.0, -1.0, -0.2, 0.0, 0.3, 0.9, 2.5] {
                let exact = conditional_excess(&noise, tau, delta);
                let quad = excess_by_quadrature(&noise, tau, delta);
                assert!((exact - quad).abs() < 1e-9, "tau {tau} delta {delta}: {exact} vs {quad}");
                assert!(exact >= 0.0);
            }
        }
        // median, shift inside the noise range
        let noise = Noise::UniformSymmetric { halfwidth: 0.5 };
        assert!((conditional_excess(&noise, 0.5, 0.2) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn noise_support_has_quantile_at_zero() {
        for &tau in &[0.2, 0.5, 0.9] {
            let (lo, hi) = Noise::UniformSymmetric { halfwidth: 1.5 }.support(tau);
            assert!((hi - lo - 3.0).abs() < 1e-15);
            assert!((-lo / (hi - lo) - tau).abs() < 1e-15);
        }
    }

    #[test]
    fn generated_quantile_converges() {
        let spec = small_spec();
        let data = generate(&spec, 100_000, 3).unwrap();
        let below = data
            .inputs()
            .rows()
            .zip(data.responses())
            .filter(|(x, &y)| y <= spec.target_value(x))
            .count();
        assert!((below as f64 / 1e5 - spec.tau).abs() < 0.01);
        let again = generate(&spec, 100_000, 3).unwrap();
        assert_eq!(data, again);
    }

    #[test]
    fn excess_of_target_is_zero() {
        let spec = small_spec();
        let e = true_excess_risk(
            |x| Ok(x.rows().map(|r| spec.target_value(r)).collect()),
            &spec,
            500,
            1,
        )
        .unwrap();
        assert!(e.abs() < 1e-12);
        let shifted = true_excess_risk(
            |x| Ok(x.rows().map(|r| spec.target_value(r) + 0.1).collect()),
            &spec,
            500,
            1,
        )
        .unwrap();
        assert!((shifted - 0.01 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_never_hurts() {
        let spec = small_spec();
        let b = spec.response_bound();
        for delta in [-10.0, -2.0, 0.0, 1.0, 4.0, 30.0] {
            for fx in [-1.0, 0.0, 0.7] {
                let t = fx + delta;
                let raw = conditional_excess(&spec.noise, spec.tau, t - fx);
                let clipped = conditional_excess(&spec.noise, spec.tau, clip(b, t) - fx);
                assert!(clipped <= raw + 1e-12);
            }
        }
    }

    #[test]
    fn slope_examples() {
        let pts: Vec<(f64, f64)> = [100.0, 200.0, 400.0, 800.0].iter().map(|&n: &f64| (n, n.powf(-0.5))).collect();
        assert!((fit_slope(&pts).unwrap().slope + 0.5).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 30.0].iter().map(|&n| (n, 0.3)).collect();
        assert!(fit_slope(&pts).unwrap().slope.abs() < 1e-12);
        let pts: Vec<(f64, f64)> = [50.0, 70.0, 900.0, 1e4]
            .iter()
            .map(|&n: &f64| (n, 3.0 * n.powf(-2.0 / 3.0)))
            .collect();
        let f = fit_slope(&pts).unwrap();
        assert!((f.slope + 2.0 / 3.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(fit_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn series_examples() {
        assert_eq!(example1_series(0), (1.0, 1.0));
        assert_eq!(example1_series(1).0, 1.5);
        let (s, lb) = example1_series(10_000);
        let approx = 2.0 * (1e4 / std::f64::consts::PI).sqrt();
        assert!((s - approx).abs() / approx < 0.02);
        assert!(s >= lb);
        // direct summation with binomials computed in log space
        let direct: f64 = (0..=10_000u32)
            .map(|m| {
                let lg = |k: u32| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
                (lg(2 * m) - 2.0 * lg(m) - 2.0 * m as f64 * 2f64.ln()).exp()
            })
            .sum();
        assert!((s - direct).abs() / direct < 1e-9);
    }

    #[test]
    fn membership_report() {
        for sigma in [0.3, 1.0, 2.0] {
            let rep = example1_membership(sigma, 10_000).unwrap();
            assert_eq!(rep.additive_norm, 1.0);
            assert!(rep.bump_defect < 1e-15);
            assert!(rep.series_above_bound());
            assert!(rep.series_increasing());
            assert!(rep.series.iter().any(|p| p.partial_sum > 100.0));
        }
    }

    #[test]
    fn spec_json_round_trip_and_validation() {
        let spec = small_spec();
        let text = spec.to_json_string().unwrap();
        assert_eq!(ExperimentSpec::from_json_str(&text).unwrap(), spec);
        let mut bad = spec.clone();
        bad.n_grid = vec![40, 20, 80];
        assert!(bad.validate().is_err());
        let mut bad = spec.clone();
        bad.noise = Noise::UniformSymmetric { halfwidth: 0.0 };
        assert!(bad.validate().is_err());
        let mut bad = spec;
        bad.target.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn small_experiment_is_deterministic() {
        let spec = small_spec();
        let a = rate_experiment(&spec).unwrap();
        assert!(a.failures.is_empty());
        assert_eq!(a.results.len(), 2 * 3 * 2);
        assert_eq!(a.fits.len(), 2);
        for r in &a.results {
            assert!(r.excess >= 0.0);
            assert!(r.excess <= r.excess_raw + 1e-12);
        }
        let mut spec4 = spec.clone();
        spec4.workers = 3;
        let b = rate_experiment(&spec4).unwrap();
        let bytes = |o: &ExperimentOutcome| {
            let mut v = Vec::new();
            write_results_csv(&o.results, &mut v).unwrap();
            v
        };
        assert_eq!(bytes(&a), bytes(&b));
    }
}
