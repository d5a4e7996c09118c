//! Kernel ridge regression: dual solve, prediction, scoring and selection of
//! the ridge parameter by k-fold cross-validation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::permutation;
use crate::error::{Error, Result};
use crate::kernels::{CrossKernel, KernelConfig, KernelMatrix};
use crate::spectral::{eigen_of, EigenSystem};

/// Residual bound relative to `|y|` that every accepted solve must meet.
pub const SOLVE_RESIDUAL: f64 = 1e-8;

/// `{0} ∪ {10^k : k = -12..=2}`.
pub fn default_lambda_grid() -> Vec<f64> {
    std::iter::once(0.0).chain((-12..=2).map(|k| 10f64.powi(k))).collect()
}

/// Affine map applied to targets before fitting and undone on prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub shift: f64,
    pub scale: f64,
}

impl TargetScaling {
    pub const IDENTITY: TargetScaling = TargetScaling { shift: 0.0, scale: 1.0 };

    /// Centre on the mean and divide by the (population) standard deviation.
    pub fn standardizing(y: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        TargetScaling {
            shift: mean,
            scale: if sd > 0.0 { sd } else { 1.0 },
        }
    }

    pub fn forward(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.shift) / self.scale).collect()
    }

    pub fn inverse(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v * self.scale + self.shift).collect()
    }
}

/// Dual coefficients of a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct KrrModel {
    pub alpha: DVector<f64>,
    pub lambda: f64,
    pub train_ids: Vec<String>,
    pub config: KernelConfig,
    pub scaling: TargetScaling,
}

fn residual_ok(a: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> bool {
    let r = a * x - y;
    r.norm() <= SOLVE_RESIDUAL * y.norm().max(f64::MIN_POSITIVE) && x.iter().all(|v| v.is_finite())
}

/// Smallest `|mu_k + lambda|` accepted by the eigenbasis solve.
fn singular_cutoff(eig: &EigenSystem) -> f64 {
    let scale = eig.mu.amax();
    eig.n() as f64 * f64::EPSILON * scale
}

/// `U diag(1/(mu+lambda)) U^T y`, or `None` when a shifted eigenvalue is
/// numerically zero.
pub(crate) fn eigen_solve(eig: &EigenSystem, y: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let cutoff = singular_cutoff(eig);
    if eig.mu.iter().any(|&m| (m + lambda).abs() <= cutoff) {
        return None;
    }
    let mut coeff = eig.u.tr_mul(y);
    for (c, &m) in coeff.iter_mut().zip(eig.mu.iter()) {
        *c /= m + lambda;
    }
    Some(&eig.u * coeff)
}

/// Solves `(K + lambda I) alpha = y`.
///
/// Uses a Cholesky factorisation and falls back to a symmetric eigen solve
/// when it fails or misses the residual bound; a singular system is an
/// error (use `lambda > 0`).
pub fn fit(k: &KernelMatrix, y: &[f64], lambda: f64) -> Result<KrrModel> {
    fit_scaled(k, y, lambda, TargetScaling::IDENTITY)
}

/// As [`fit`], with targets mapped through `scaling` first.
pub fn fit_scaled(k: &KernelMatrix, y: &[f64], lambda: f64, scaling: TargetScaling) -> Result<KrrModel> {
    let n = k.n();
    if y.len() != n {
        return Err(Error::Invalid(format!("{} targets for a {n}x{n} kernel", y.len())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Invalid(format!(
            "lambda must be a finite non-negative number, got {lambda}"
        )));
    }
    let yv = DVector::from_vec(scaling.forward(y));
    let mut a = k.values.clone();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let alpha = match a.clone().cholesky().map(|c| c.solve(&yv)) {
        Some(x) if residual_ok(&a, &x, &yv) => x,
        _ => {
            let eig = eigen_of(&k.values)?;
            match eigen_solve(&eig, &yv, lambda) {
                Some(x) if residual_ok(&a, &x, &yv) => x,
                _ => {
                    return Err(Error::Numerical(format!(
                        "kernel system is singular at lambda = {lambda:e}; use lambda > 0"
                    )))
                }
            }
        }
    };
    Ok(KrrModel {
        alpha,
        lambda,
        train_ids: k.ids.clone(),
        config: k.config.clone(),
        scaling,
    })
}

/// `prediction_j = sum_i alpha_i Kx[i][j]`.
pub fn predict(model: &KrrModel, kx: &CrossKernel) -> Result<Vec<f64>> {
    if kx.values.nrows() != model.alpha.len() {
        return Err(Error::Invalid(format!(
            "cross kernel has {} training rows, model has {}",
            kx.values.nrows(),
            model.alpha.len()
        )));
    }
    if kx.train_ids != model.train_ids {
        return Err(Error::Invalid(
            "cross kernel training ids differ from the model's".into(),
        ));
    }
    let raw = kx.values.tr_mul(&model.alpha);
    Ok(model.scaling.inverse(raw.as_slice()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub r2: f64,
    pub mae: f64,
}

/// Coefficient of determination and mean absolute error.
pub fn score(y_true: &[f64], y_pred: &[f64]) -> Result<Score> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Invalid("score inputs differ in length".into()));
    }
    if y_true.len() < 2 {
        return Err(Error::Invalid("score needs at least 2 points".into()));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Invalid("undefined R² for constant targets".into()));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    let mae = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs()).sum::<f64>() / n;
    Ok(Score {
        r2: 1.0 - ss_res / ss_tot,
        mae,
    })
}

/// Outcome of the cross-validated grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// `(lambda, mean validation R²)` in grid order; failed points carry `None`.
    pub cv: Vec<(f64, Option<f64>)>,
    pub seed: u64,
}

/// Contiguous blocks of a seeded permutation; the first `n % folds` blocks
/// get one extra point.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Invalid("need at least 2 folds".into()));
    }
    if n / folds < 2 {
        return Err(Error::Invalid(format!(
            "{n} points are too few for {folds} folds of >= 2"
        )));
    }
    let perm = permutation(n, seed);
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

fn split_fold(n: usize, val: &[usize]) -> Vec<usize> {
    let mut is_val = vec![false; n];
    for &v in val {
        is_val[v] = true;
    }
    (0..n).filter(|&i| !is_val[i]).collect()
}

/// Validation R² for every grid value given the eigensystem of the fold's
/// training block. `dim` is the block size; when it exceeds the number of
/// eigenpairs the remaining eigenvalues are exactly zero. `None` marks a
/// numerically singular shifted system.
fn grid_scores(
    eig: &EigenSystem,
    dim: usize,
    kvt: &DMatrix<f64>,
    yt: &DVector<f64>,
    yv: &[f64],
    grid: &[f64],
) -> Result<Vec<Option<f64>>> {
    let cutoff = dim as f64 * f64::EPSILON * eig.mu.amax();
    let has_null = dim > eig.n();
    let coeff = eig.u.tr_mul(yt);
    grid.iter()
        .map(|&lambda| {
            if (has_null && lambda <= cutoff) || eig.mu.iter().any(|&m| (m + lambda).abs() <= cutoff) {
                return Ok(None);
            }
            let scaled = DVector::from_fn(coeff.len(), |k, _| coeff[k] / (eig.mu[k] + lambda));
            // Null-space components of alpha never reach the validation rows.
            let pred = kvt * (&eig.u * scaled);
            if pred.iter().any(|v| !v.is_finite()) {
                return Ok(None);
            }
            score(yv, pred.as_slice()).map(|s| Some(s.r2))
        })
        .collect()
}

fn fold_scores(k: &DMatrix<f64>, y: &[f64], val: &[usize], grid: &[f64]) -> Result<Vec<Option<f64>>> {
    let train = split_fold(k.nrows(), val);
    let ktt = DMatrix::from_fn(train.len(), train.len(), |a, b| k[(train[a], train[b])]);
    let kvt = DMatrix::from_fn(val.len(), train.len(), |a, b| k[(val[a], train[b])]);
    let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
    let yv: Vec<f64> = val.iter().map(|&i| y[i]).collect();
    grid_scores(&eigen_of(&ktt)?, train.len(), &kvt, &yt, &yv, grid)
}

/// As [`fold_scores`] for the rank-`r` truncation `U_r diag(mu_r) U_r^T`
/// without forming it: with `A = U_r[T, :] = Q R`, the training block is
/// `Q (R M R^T) Q^T`, so only an `r x r` eigenproblem is solved.
fn truncated_fold_scores(
    eig: &EigenSystem,
    r: usize,
    y: &[f64],
    val: &[usize],
    grid: &[f64],
) -> Result<Vec<Option<f64>>> {
    let train = split_fold(eig.n(), val);
    let a = DMatrix::from_fn(train.len(), r, |i, k| eig.u[(train[i], k)]);
    let b = DMatrix::from_fn(val.len(), r, |i, k| eig.u[(val[i], k)] * eig.mu[k]);
    let kvt = &b * a.transpose();
    let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
    let yv: Vec<f64> = val.iter().map(|&i| y[i]).collect();
    if r >= train.len() {
        let ktt = DMatrix::from_fn(train.len(), train.len(), |i, j| {
            (0..r).map(|k| a[(i, k)] * eig.mu[k] * a[(j, k)]).sum::<f64>()
        });
        return grid_scores(&eigen_of(&ktt)?, train.len(), &kvt, &yt, &yv, grid);
    }
    let qr = a.qr();
    let (q, rr) = (qr.q(), qr.r());
    let mut rm = rr.clone();
    for (k, mut col) in rm.column_iter_mut().enumerate() {
        col *= eig.mu[k];
    }
    let small = &rm * rr.transpose();
    let small = (&small + small.transpose()) * 0.5;
    let inner = eigen_of(&small)?;
    let reduced = EigenSystem {
        u: q * &inner.u,
        mu: inner.mu,
    };
    grid_scores(&reduced, train.len(), &kvt, &yt, &yv, grid)
}

fn validate_grid(grid: &[f64], n: usize, targets: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Invalid("empty lambda grid".into()));
    }
    if let Some(l) = grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::Invalid(format!("invalid lambda {l}")));
    }
    if targets != n {
        return Err(Error::Invalid("target length does not match kernel".into()));
    }
    Ok(())
}

/// Grid search over `grid` with `folds`-fold CV, maximising mean validation
/// R². Ties (within 1e-12) go to the larger lambda.
pub fn tune_lambda(k: &KernelMatrix, y: &[f64], grid: &[f64], folds: usize, seed: u64) -> Result<LambdaSelection> {
    tune_lambda_matrix(&k.values, y, grid, folds, seed)
}

pub(crate) fn tune_lambda_matrix(
    k: &DMatrix<f64>,
    y: &[f64],
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<LambdaSelection> {
    validate_grid(grid, k.nrows(), y.len())?;
    let blocks = fold_indices(y.len(), folds, seed)?;
    let per_fold: Vec<Vec<Option<f64>>> = blocks
        .par_iter()
        .map(|val| fold_scores(k, y, val, grid))
        .collect::<Result<_>>()?;
    select(grid, &per_fold, seed)
}

/// [`tune_lambda`] on the rank-`r` truncation of the kernel behind `eig`.
pub(crate) fn tune_lambda_truncated(
    eig: &EigenSystem,
    r: usize,
    y: &[f64],
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<LambdaSelection> {
    validate_grid(grid, eig.n(), y.len())?;
    if r == 0 || r > eig.n() {
        return Err(Error::Invalid(format!("truncation rank {r} outside 1..={}", eig.n())));
    }
    let blocks = fold_indices(y.len(), folds, seed)?;
    let per_fold: Vec<Vec<Option<f64>>> = blocks
        .par_iter()
        .map(|val| truncated_fold_scores(eig, r, y, val, grid))
        .collect::<Result<_>>()?;
    select(grid, &per_fold, seed)
}

fn select(grid: &[f64], per_fold: &[Vec<Option<f64>>], seed: u64) -> Result<LambdaSelection> {
    let cv: Vec<(f64, Option<f64>)> = grid
        .iter()
        .enumerate()
        .map(|(g, &lambda)| {
            let scores: Option<Vec<f64>> = per_fold.iter().map(|f| f[g]).collect();
            (lambda, scores.map(|s| s.iter().sum::<f64>() / s.len() as f64))
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    for &(lambda, mean) in &cv {
        let Some(mean) = mean else { continue };
        best = match best {
            None => Some((lambda, mean)),
            Some((_, bm)) if mean > bm + 1e-12 => Some((lambda, mean)),
            Some((bl, bm)) if (mean - bm).abs() <= 1e-12 && lambda > bl => Some((lambda, mean.max(bm))),
            keep => keep,
        };
    }
    let (lambda, _) = best.ok_or_else(|| Error::Numerical("every lambda on the grid failed in CV".into()))?;
    Ok(LambdaSelection { lambda, cv, seed })
}

/// Serialized result of one tuned fit scored on held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub lambda: f64,
    pub r2: f64,
    pub mae: f64,
    /// `[lambda, mean_r2]` pairs; failed grid points are `null`.
    pub cv: Vec<(f64, Option<f64>)>,
    pub seed: u64,
}

impl FitReport {
    pub fn new(selection: LambdaSelection, score: Score) -> Self {
        FitReport {
            lambda: selection.lambda,
            r2: score.r2,
            mae: score.mae,
            cv: selection.cv,
            seed: selection.seed,
        }
    }
}
