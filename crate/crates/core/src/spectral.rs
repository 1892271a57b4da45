//! Integral operators `L_k f(x) = sum_p k(x, x_p) f(x_p) w_p` of finitely
//! supported measures.
//!
//! On a discrete measure the operator is an `m x m` matrix, so its
//! eigenpairs, fractional powers `L^r`, the regularized filter
//! `(L + lambda)^{-1} L`, and the approximation error `D(lambda)` can all be
//! computed exactly. Functions live in `L_2(mu)` and are stored both as
//! values on the support and as coefficients in the eigenbasis.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::{DataSet, Points};
use crate::error::{Error, Result};
use crate::kernels::{gram, BlockLayout, KernelSpec};
use crate::loss::PinballLoss;
use crate::solver::{self, FitOptions};

/// Relative eigenvalue floor below which eigenvalues count as zero.
const EIGEN_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Points,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Points, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("measure needs at least one support point"));
        }
        if weights.len() != points.len() {
            return Err(Error::input("one weight per support point required"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::input("measure weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("measure weights sum to {total}, expected 1")));
        }
        Ok(DiscreteMeasure { points, weights })
    }

    pub fn uniform(points: Points) -> Result<Self> {
        let m = points.len();
        DiscreteMeasure::new(points, vec![1.0 / m as f64; m])
    }

    /// Normalizes positive masses to a probability vector.
    pub fn from_masses(points: Points, masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::input("masses must have a positive sum"));
        }
        let mut w: Vec<f64> = masses.iter().map(|v| v / total).collect();
        let residue = 1.0 - w.iter().sum::<f64>();
        if let Some(first) = w.first_mut() {
            *first += residue;
        }
        DiscreteMeasure::new(points, w)
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Symmetrized operator matrix `W^{1/2} K W^{1/2}`; it shares its
/// eigenvalues with `L_k` restricted to the support.
pub fn operator_matrix(spec: &KernelSpec, mu: &DiscreteMeasure) -> Result<DMatrix<f64>> {
    let mut k = gram(spec, &mu.points)?.into_entries();
    let sqrt_w: Vec<f64> = mu.weights.iter().map(|w| w.sqrt()).collect();
    let m = mu.len();
    for q in 0..m {
        for p in 0..m {
            k[(p, q)] *= sqrt_w[p] * sqrt_w[q];
        }
    }
    Ok(k)
}

/// Normalized eigenpairs of `L_k` on a discrete measure.
#[derive(Debug, Clone)]
pub struct OperatorDecomposition {
    eigenvalues: Vec<f64>,
    /// Column `l` holds `psi_l(x_p)` for every support point `p`.
    eigenfunctions: DMatrix<f64>,
    weights: Vec<f64>,
}

/// Eigen-decomposes a symmetrized operator matrix for the measure with
/// the given weights.
pub fn decompose(matrix: &DMatrix<f64>, weights: &[f64]) -> Result<OperatorDecomposition> {
    let m = matrix.nrows();
    if m == 0 || matrix.ncols() != m || weights.len() != m {
        return Err(Error::input("operator matrix must be square and match the weights"));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("operator matrix has non-finite entries"));
    }
    let asym = (matrix - matrix.transpose()).amax();
    if asym > 1e-10 * (1.0 + matrix.amax()) {
        return Err(Error::input(format!("operator matrix not symmetric (deviation {asym:e})")));
    }
    let eig = SymmetricEigen::try_new(matrix.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::numeric("symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = EIGEN_REL_TOL * top;
    let mut eigenvalues = Vec::with_capacity(m);
    let mut eigenfunctions = DMatrix::zeros(m, m);
    for (col, &idx) in order.iter().enumerate() {
        let v = eig.eigenvalues[idx];
        if v < -1e-8 * top.max(1.0) {
            return Err(Error::numeric(format!("operator has negative eigenvalue {v:e}")));
        }
        eigenvalues.push(if v <= floor { 0.0 } else { v });
        for p in 0..m {
            eigenfunctions[(p, col)] = eig.eigenvectors[(p, idx)] / weights[p].sqrt();
        }
    }
    Ok(OperatorDecomposition {
        eigenvalues,
        eigenfunctions,
        weights: weights.to_vec(),
    })
}

impl OperatorDecomposition {
    pub fn of(spec: &KernelSpec, mu: &DiscreteMeasure) -> Result<Self> {
        decompose(&operator_matrix(spec, mu)?, mu.weights())
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn size(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Gram matrix of the eigenfunctions in `L_2(mu)`; the identity up to
    /// rounding.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.size();
        let mut worst: f64 = 0.0;
        for a in 0..m {
            for b in 0..m {
                let ip: f64 = (0..m)
                    .map(|p| {
                        self.weights[p] * self.eigenfunctions[(p, a)] * self.eigenfunctions[(p, b)]
                    })
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        worst
    }

    /// Rebuilds `W^{1/2} K W^{1/2}` from the eigenpairs.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let m = self.size();
        DMatrix::from_fn(m, m, |p, q| {
            let s = (self.weights[p] * self.weights[q]).sqrt();
            (0..m)
                .map(|l| self.eigenvalues[l] * self.eigenfunctions[(p, l)] * self.eigenfunctions[(q, l)])
                .sum::<f64>()
                * s
        })
    }

    /// `(L_k f)(x_p)` computed through the eigen-expansion.
    pub fn apply(&self, f: &BlockFunction) -> Result<BlockFunction> {
        power_apply(self, 1.0, f)
    }
}

/// A function in `L_2(mu)`, kept in sync as support values and
/// eigen-coefficients `c_l = <f, psi_l>`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFunction {
    values: Vec<f64>,
    coefficients: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl BlockFunction {
    pub fn from_values(decomp: &OperatorDecomposition, values: Vec<f64>) -> Result<Self> {
        let m = decomp.size();
        if values.len() != m {
            return Err(Error::input(format!("{} values for a {m}-point measure", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("function values must be finite"));
        }
        let coefficients = (0..m)
            .map(|l| {
                (0..m)
                    .map(|p| decomp.weights[p] * values[p] * decomp.eigenfunctions[(p, l)])
                    .sum()
            })
            .collect();
        Ok(BlockFunction {
            values,
            coefficients,
            eigenvalues: decomp.eigenvalues.clone(),
        })
    }

    pub fn from_coefficients(decomp: &OperatorDecomposition, coefficients: Vec<f64>) -> Result<Self> {
        let m = decomp.size();
        if coefficients.len() != m {
            return Err(Error::input("one coefficient per eigenfunction required"));
        }
        let values = (0..m)
            .map(|p| {
                (0..m)
                    .map(|l| coefficients[l] * decomp.eigenfunctions[(p, l)])
                    .sum()
            })
            .collect();
        Ok(BlockFunction {
            values,
            coefficients,
            eigenvalues: decomp.eigenvalues.clone(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// `|P f|^2` where `P` projects onto the span of eigenfunctions with
    /// nonzero eigenvalue.
    pub fn range_norm_sq(&self) -> f64 {
        self.coefficients
            .iter()
            .zip(&self.eigenvalues)
            .filter(|(_, &lam)| lam > 0.0)
            .map(|(c, _)| c * c)
            .sum()
    }

    /// `sum_l c_l^2 / lambda_l`, or `None` when `f` has mass on the
    /// operator's null space (and therefore is not in the RKHS).
    pub fn rkhs_norm_sq(&self) -> Option<f64> {
        let scale = self.l2_norm().max(1.0);
        let mut total = 0.0;
        for (c, &lam) in self.coefficients.iter().zip(&self.eigenvalues) {
            if lam > 0.0 {
                total += c * c / lam;
            } else if c.abs() > 1e-10 * scale {
                return None;
            }
        }
        Some(total)
    }

    fn filtered(&self, decomp: &OperatorDecomposition, filter: impl Fn(f64) -> f64) -> Result<Self> {
        let coeffs = self
            .coefficients
            .iter()
            .zip(&decomp.eigenvalues)
            .map(|(c, &lam)| if lam > 0.0 { c * filter(lam) } else { 0.0 })
            .collect();
        BlockFunction::from_coefficients(decomp, coeffs)
    }
}

fn check_same_measure(decomp: &OperatorDecomposition, g: &BlockFunction) -> Result<()> {
    if g.eigenvalues != decomp.eigenvalues {
        return Err(Error::input("function is expressed in a different eigenbasis"));
    }
    Ok(())
}

/// `L^r g = sum_l lambda_l^r c_l psi_l`; null-space components vanish.
pub fn power_apply(decomp: &OperatorDecomposition, r: f64, g: &BlockFunction) -> Result<BlockFunction> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::input(format!("operator power must be positive, got {r}")));
    }
    check_same_measure(decomp, g)?;
    g.filtered(decomp, |lam| lam.powf(r))
}

/// `f_lambda = (L + lambda)^{-1} L f*`.
pub fn intermediate(
    decomp: &OperatorDecomposition,
    fstar: &BlockFunction,
    lambda: f64,
) -> Result<BlockFunction> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::input(format!("lambda must be positive, got {lambda}")));
    }
    check_same_measure(decomp, fstar)?;
    fstar.filtered(decomp, |lam| lam / (lam + lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma2Report {
    /// `|f_lambda - f*|^2_{L_2} + lambda |f_lambda|^2_H`
    pub lhs: f64,
    /// `lambda^{2r} |g*|^2_{L_2}`
    pub rhs: f64,
}

impl Lemma2Report {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol
    }
}

/// Evaluates both sides of the regularized source-condition bound for
/// `f* = L^r g*`.
pub fn lemma2_check(
    decomp: &OperatorDecomposition,
    gstar: &BlockFunction,
    r: f64,
    lambda: f64,
) -> Result<Lemma2Report> {
    if !(r > 0.0 && r <= 0.5) {
        return Err(Error::input(format!("source exponent must lie in (0, 1/2], got {r}")));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::input(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    let fstar = power_apply(decomp, r, gstar)?;
    let flam = intermediate(decomp, &fstar, lambda)?;
    let diff: f64 = flam
        .coefficients
        .iter()
        .zip(&fstar.coefficients)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let h_norm = flam
        .rkhs_norm_sq()
        .ok_or_else(|| Error::numeric("intermediate function left the RKHS"))?;
    Ok(Lemma2Report {
        lhs: diff + lambda * h_norm,
        rhs: lambda.powf(2.0 * r) * gstar.l2_norm_sq(),
    })
}

/// One coordinate block of an additive approximation-error problem.
#[derive(Debug, Clone)]
pub struct BlockProblem {
    pub kernel: KernelSpec,
    pub measure: DiscreteMeasure,
    /// Source function `g*_j`, as values on the block support.
    pub gstar: Vec<f64>,
}

/// Additive problem on the product of the block measures. The target is
/// `f* = sum_j L_{k_j}^r g*_j`, and given `x` the response takes the values
/// `f*(x) - a`, `f*(x)`, `f*(x) + a` with probabilities `tau/2`, `1/2`,
/// `(1 - tau)/2`, which makes `f*(x)` the unique conditional `tau`-quantile.
#[derive(Debug, Clone)]
pub struct ApproxProblem {
    pub blocks: Vec<BlockProblem>,
    pub r: f64,
    pub tau: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxErrorReport {
    pub lambda: f64,
    /// Regularized excess risk of the solver's minimizer.
    pub d_measured: f64,
    /// `C_r lambda^r`
    pub d_bound: f64,
    pub c_r: f64,
}

impl ApproxErrorReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.d_measured <= self.d_bound + tol
    }
}

/// Joint distribution of an [`ApproxProblem`], materialized as a weighted
/// sample, with the target values at each atom.
pub struct MaterializedProblem {
    pub kernel: KernelSpec,
    pub data: DataSet,
    pub target: Vec<f64>,
    pub c_r: f64,
}

impl ApproxProblem {
    pub fn materialize(&self) -> Result<MaterializedProblem> {
        let loss = PinballLoss::new(self.tau)?;
        if self.blocks.is_empty() {
            return Err(Error::input("approximation problem needs at least one block"));
        }
        if !(self.r > 0.0 && self.r <= 0.5) {
            return Err(Error::input("source exponent must lie in (0, 1/2]"));
        }
        if !(self.spread > 0.0) {
            return Err(Error::input("response spread must be positive"));
        }
        let mut block_targets = Vec::new();
        let mut c_r = 0.0;
        for b in &self.blocks {
            let decomp = OperatorDecomposition::of(&b.kernel, &b.measure)?;
            let g = BlockFunction::from_values(&decomp, b.gstar.clone())?;
            let gn = g.l2_norm();
            c_r += loss.lipschitz() * gn + gn * gn;
            block_targets.push(power_apply(&decomp, self.r, &g)?.values().to_vec());
        }
        let layout = BlockLayout::new(self.blocks.iter().map(|b| b.measure.points().dim()).collect())?;
        let kernel = KernelSpec::additive(layout.clone(), self.blocks.iter().map(|b| b.kernel.clone()).collect())?;

        let sizes: Vec<usize> = self.blocks.iter().map(|b| b.measure.len()).collect();
        let total: usize = sizes.iter().product();
        let atoms = [
            (-self.spread, 0.5 * self.tau),
            (0.0, 0.5),
            (self.spread, 0.5 * (1.0 - self.tau)),
        ];
        let mut xs = Vec::with_capacity(total * atoms.len() * layout.total_dim());
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        let mut target = Vec::new();
        let mut idx = vec![0usize; sizes.len()];
        for _ in 0..total {
            let mut fx = 0.0;
            let mut px = 1.0;
            let mut point = Vec::with_capacity(layout.total_dim());
            for (j, b) in self.blocks.iter().enumerate() {
                point.extend_from_slice(b.measure.points().row(idx[j]));
                fx += block_targets[j][idx[j]];
                px *= b.measure.weights()[idx[j]];
            }
            for &(shift, prob) in &atoms {
                xs.extend_from_slice(&point);
                ys.push(fx + shift);
                ws.push(px * prob);
                target.push(fx);
            }
            // odometer over the product support
            for j in (0..idx.len()).rev() {
                idx[j] += 1;
                if idx[j] < sizes[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
        let data = DataSet::with_unnormalized_weights(Points::new(layout.total_dim(), xs)?, ys, ws)?;
        Ok(MaterializedProblem {
            kernel,
            data,
            target,
            c_r,
        })
    }
}

/// Measures `D(lambda) = min_f R_{L*,P}(f) + lambda |f|^2_H - R_{L*,P}(f*)`
/// with the weighted solver and compares it with `C_r lambda^r`.
pub fn approx_error(problem: &ApproxProblem, lambda: f64, opts: &FitOptions) -> Result<ApproxErrorReport> {
    let mat = problem.materialize()?;
    approx_error_materialized(&mat, problem.r, problem.tau, lambda, opts)
}

pub fn approx_error_materialized(
    mat: &MaterializedProblem,
    r: f64,
    tau: f64,
    lambda: f64,
    opts: &FitOptions,
) -> Result<ApproxErrorReport> {
    let loss = PinballLoss::new(tau)?;
    let model = solver::fit(&mat.kernel, &mat.data, lambda, tau, opts)?;
    let obj = solver::objective(&model, &mat.data)?;
    let target_risk: f64 = mat
        .data
        .responses()
        .iter()
        .zip(&mat.target)
        .enumerate()
        .map(|(i, (&y, &t))| mat.data.weight(i) * loss.shifted(y, t))
        .sum();
    Ok(ApproxErrorReport {
        lambda,
        d_measured: obj.shifted - target_risk,
        d_bound: mat.c_r * lambda.powf(r),
        c_r: mat.c_r,
    })
}
