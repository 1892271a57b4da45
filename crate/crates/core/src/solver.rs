//! Regularized pinball-loss ERM over an RKHS,
//!
//! ```text
//! min_f  sum_i w_i L(y_i, f(x_i)) + lambda |f|_H^2 ,
//! ```
//!
//! solved in the representer form `f = sum_i alpha_i k(x_i, .)` by dual
//! coordinate ascent. Writing `L(y, t) = max_{u in [-tau, 1-tau]} u (t - y)`
//! gives the box-constrained concave dual
//!
//! ```text
//! D(u) = - sum_i w_i u_i y_i - 1/(4 lambda) sum_{i,l} w_i w_l u_i u_l K_il
//! ```
//!
//! with primal recovery `alpha_i = -w_i u_i / (2 lambda)`. Each coordinate
//! update is a clipped Newton step, and the exact duality gap is the
//! stopping rule. Minimizers of the shifted loss `L*` coincide with those of
//! `L`, so the same solution serves both objectives.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, Points};
use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::loss::PinballLoss;

/// Added to `K_ii` in coordinate denominators so duplicated inputs with
/// vanishing diagonals cannot divide by zero.
const DIAG_GUARD: f64 = 1e-12;
/// Epochs between exact recomputations of `K alpha`.
const REFRESH_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Stop when `gap <= gap_tol * (1 + |dual objective|)`.
    pub gap_tol: f64,
    pub max_epochs: usize,
    /// Seeds the per-epoch coordinate permutation.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            gap_tol: 1e-8,
            max_epochs: 10_000,
            seed: 0,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) {
            return Err(Error::input("gap tolerance must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::input("max_epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Primal and dual objective values at one point of the optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl GapReport {
    pub fn relative(&self) -> f64 {
        self.gap / (1.0 + self.dual.abs())
    }
}

/// Objective value with the original and with the shifted loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objectives {
    pub shifted: f64,
    pub unshifted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: KernelSpec,
    support: Points,
    dual: Vec<f64>,
    alpha: Vec<f64>,
    lambda: f64,
    tau: f64,
    gap: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    kernel: KernelSpec,
    dims: usize,
    support: Vec<f64>,
    alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dual: Option<Vec<f64>>,
    lambda: f64,
    tau: f64,
    gap: f64,
}

impl Model {
    /// Model induced by a dual vector `u` on `data`.
    pub fn from_dual(
        spec: KernelSpec,
        data: &DataSet,
        dual: Vec<f64>,
        lambda: f64,
        tau: f64,
    ) -> Result<Self> {
        check_problem(lambda, tau)?;
        if dual.len() != data.len() {
            return Err(Error::input("dual vector length differs from sample size"));
        }
        let alpha = dual
            .iter()
            .enumerate()
            .map(|(i, u)| -data.weight(i) * u / (2.0 * lambda))
            .collect();
        let mut model = Model {
            spec,
            support: data.inputs().clone(),
            dual,
            alpha,
            lambda,
            tau,
            gap: f64::NAN,
        };
        model.gap = duality_gap(&model, data)?;
        Ok(model)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn support(&self) -> &Points {
        &self.support
    }

    pub fn dual(&self) -> &[f64] {
        &self.dual
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Duality gap achieved at the end of training.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// `|f|_H = sqrt(alpha^T K alpha)`.
    pub fn rkhs_norm(&self) -> Result<f64> {
        let k = gram(&self.spec, &self.support)?;
        Ok(crate::kernels::rkhs_norm_sq(&self.alpha, &k)?.sqrt())
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        let file = ModelFile {
            kernel: self.spec.clone(),
            dims: self.support.dim(),
            support: self.support.as_flat().to_vec(),
            alpha: self.alpha.clone(),
            dual: Some(self.dual.clone()),
            lambda: self.lambda,
            tau: self.tau,
            gap: self.gap,
        };
        serde_json::to_writer_pretty(writer, &file)?;
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(reader)?;
        file.kernel.validate()?;
        let support = Points::new(file.dims, file.support)?;
        file.kernel.check_dim(support.dim())?;
        if file.alpha.len() != support.len() {
            return Err(Error::input("alpha length differs from support size"));
        }
        let dual = file.dual.unwrap_or_else(|| vec![f64::NAN; support.len()]);
        if dual.len() != support.len() {
            return Err(Error::input("dual length differs from support size"));
        }
        Ok(Model {
            spec: file.kernel,
            support,
            dual,
            alpha: file.alpha,
            lambda: file.lambda,
            tau: file.tau,
            gap: file.gap,
        })
    }
}

fn check_problem(lambda: f64, tau: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::input(format!("lambda must be positive, got {lambda}")));
    }
    PinballLoss::new(tau)?;
    Ok(())
}

pub fn fit(
    spec: &KernelSpec,
    data: &DataSet,
    lambda: f64,
    tau: f64,
    opts: &FitOptions,
) -> Result<Model> {
    fit_traced(spec, data, lambda, tau, opts, None)
}

/// As [`fit`], additionally recording the gap report at the end of every
/// epoch into `trace`.
pub fn fit_traced(
    spec: &KernelSpec,
    data: &DataSet,
    lambda: f64,
    tau: f64,
    opts: &FitOptions,
    trace: Option<&mut Vec<GapReport>>,
) -> Result<Model> {
    check_problem(lambda, tau)?;
    opts.validate()?;
    let k = gram(spec, data.inputs())?.into_entries();
    let (dual, alpha, gap) = coordinate_ascent(&k, data, lambda, tau, opts, trace)?;
    Ok(Model {
        spec: spec.clone(),
        support: data.inputs().clone(),
        dual,
        alpha,
        lambda,
        tau,
        gap,
    })
}

fn gap_report(
    loss: &PinballLoss,
    data: &DataSet,
    dual: &[f64],
    alpha: &[f64],
    f: &[f64],
    lambda: f64,
) -> GapReport {
    let ys = data.responses();
    let mut risk = 0.0;
    let mut linear = 0.0;
    let mut norm_sq = 0.0;
    for i in 0..ys.len() {
        let w = data.weight(i);
        risk += w * loss.loss(ys[i], f[i]);
        linear += w * dual[i] * ys[i];
        norm_sq += alpha[i] * f[i];
    }
    let norm_sq = norm_sq.max(0.0);
    let primal = risk + lambda * norm_sq;
    let dual_obj = -linear - lambda * norm_sq;
    GapReport {
        primal,
        dual: dual_obj,
        gap: primal - dual_obj,
    }
}

fn exact_predictions(k: &DMatrix<f64>, alpha: &[f64]) -> Vec<f64> {
    let n = alpha.len();
    let mut f = vec![0.0; n];
    for (l, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            let col = k.column(l);
            for i in 0..n {
                f[i] += a * col[i];
            }
        }
    }
    f
}

fn coordinate_ascent(
    k: &DMatrix<f64>,
    data: &DataSet,
    lambda: f64,
    tau: f64,
    opts: &FitOptions,
    mut trace: Option<&mut Vec<GapReport>>,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let loss = PinballLoss::new(tau)?;
    let (lo, hi) = loss.dual_box();
    let n = data.len();
    let ys = data.responses();
    let weights = data.weights();
    let mut u = vec![0.0; n];
    let mut alpha = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // the zero function may already be optimal (e.g. all residuals zero)
    let start = gap_report(&loss, data, &u, &alpha, &f, lambda);
    if start.gap <= opts.gap_tol * (1.0 + start.dual.abs()) {
        return Ok((u, alpha, start.gap));
    }

    let mut last_rel = f64::INFINITY;
    for epoch in 1..=opts.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let kii = k[(i, i)] + DIAG_GUARD;
            let step = 2.0 * lambda * (f[i] - ys[i]) / (w * kii);
            let new_u = (u[i] + step).clamp(lo, hi);
            let delta = new_u - u[i];
            if delta == 0.0 {
                continue;
            }
            u[i] = new_u;
            let da = -w * delta / (2.0 * lambda);
            alpha[i] += da;
            let col = k.column(i);
            for (fl, kl) in f.iter_mut().zip(col.iter()) {
                *fl += da * kl;
            }
        }
        if epoch % REFRESH_EVERY == 0 {
            f = exact_predictions(k, &alpha);
        }
        let mut report = gap_report(&loss, data, &u, &alpha, &f, lambda);
        if report.relative() <= opts.gap_tol {
            f = exact_predictions(k, &alpha);
            report = gap_report(&loss, data, &u, &alpha, &f, lambda);
        }
        if !report.gap.is_finite() {
            return Err(Error::numeric("duality gap became non-finite"));
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(report);
        }
        last_rel = report.relative();
        if last_rel <= opts.gap_tol {
            return Ok((u, alpha, report.gap));
        }
    }
    Err(Error::Convergence {
        epochs: opts.max_epochs,
        gap: last_rel,
    })
}

/// `sum_i alpha_i k(x_i, x)`.
pub fn predict(model: &Model, x: &[f64]) -> Result<f64> {
    if x.len() != model.support.dim() {
        return Err(Error::input(format!(
            "model expects dimension {}, got {}",
            model.support.dim(),
            x.len()
        )));
    }
    let v: f64 = model
        .support
        .rows()
        .zip(&model.alpha)
        .filter(|(_, a)| **a != 0.0)
        .map(|(xi, a)| a * model.spec.eval_unchecked(xi, x))
        .sum();
    if !v.is_finite() {
        return Err(Error::numeric("non-finite prediction"));
    }
    Ok(v)
}

pub fn predict_all(model: &Model, points: &Points) -> Result<Vec<f64>> {
    points.rows().map(|x| predict(model, x)).collect()
}

fn training_predictions(model: &Model, data: &DataSet) -> Result<Vec<f64>> {
    if data.inputs() != &model.support {
        return Err(Error::input("data inputs differ from the model's support points"));
    }
    let k = gram(&model.spec, &model.support)?.into_entries();
    Ok(exact_predictions(&k, &model.alpha))
}

/// Primal minus dual objective; zero at the optimum.
pub fn duality_gap(model: &Model, data: &DataSet) -> Result<f64> {
    Ok(gap_details(model, data)?.gap)
}

pub fn gap_details(model: &Model, data: &DataSet) -> Result<GapReport> {
    let f = training_predictions(model, data)?;
    let loss = PinballLoss::new(model.tau)?;
    Ok(gap_report(&loss, data, &model.dual, &model.alpha, &f, model.lambda))
}

/// Regularized objective with `L*` and with `L`; they differ by the
/// weighted risk of the zero function.
pub fn objective(model: &Model, data: &DataSet) -> Result<Objectives> {
    let f = training_predictions(model, data)?;
    let loss = PinballLoss::new(model.tau)?;
    let mut unshifted = 0.0;
    let mut shifted = 0.0;
    let mut norm_sq = 0.0;
    for (i, (&y, &fi)) in data.responses().iter().zip(&f).enumerate() {
        let w = data.weight(i);
        unshifted += w * loss.loss(y, fi);
        shifted += w * loss.shifted(y, fi);
        norm_sq += model.alpha[i] * fi;
    }
    let reg = model.lambda * norm_sq.max(0.0);
    Ok(Objectives {
        shifted: shifted + reg,
        unshifted: unshifted + reg,
    })
}
