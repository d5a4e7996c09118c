//! Eigendecomposition of kernel matrices, rank-`r` truncation, the projected
//! (approximated) truncated cross kernel, and spectrum richness metrics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_symmetric, CrossKernel, KernelMatrix, PSD_TOLERANCE};

/// Eigenvalues at or below this fraction of the largest are dropped before
/// the log-log power-law regression.
pub const ALPHA_FILTER: f64 = 1e-12;

/// First 1-based position of the truncated-spectrum window.
pub const WINDOW_START: usize = 4;

/// Eigenpairs sorted by non-increasing eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    /// Raw eigenvalues (may contain small negative values).
    pub mu: DVector<f64>,
    /// Orthonormal eigenvectors as columns, aligned with `mu`.
    pub u: DMatrix<f64>,
}

impl EigenSystem {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// Eigenvalues with negatives replaced by 0.
    pub fn clamped(&self) -> Vec<f64> {
        self.mu.iter().map(|&m| m.max(0.0)).collect()
    }

    /// Eigenvalues below `-PSD_TOLERANCE * mu_1`.
    pub fn significant_negatives(&self) -> usize {
        let top = self.mu.iter().copied().fold(0.0_f64, f64::max);
        self.mu.iter().filter(|&&m| m < -PSD_TOLERANCE * top).count()
    }

    /// First `r` eigenvector columns (`U_{<=r}`).
    pub fn leading(&self, r: usize) -> Result<DMatrix<f64>> {
        check_rank(r, self.n())?;
        Ok(self.u.columns(0, r).into_owned())
    }
}

fn check_rank(r: usize, n: usize) -> Result<()> {
    if r == 0 || r > n {
        return Err(Error::Invalid(format!("truncation rank {r} outside 1..={n}")));
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues sorted descending (stable
/// on ties). Logs a warning when the matrix is not numerically PSD.
pub fn eigendecompose(k: &KernelMatrix) -> Result<EigenSystem> {
    eigen_of(&k.values)
}

pub(crate) fn eigen_of(values: &DMatrix<f64>) -> Result<EigenSystem> {
    check_symmetric(values)?;
    let n = values.nrows();
    if n == 0 {
        return Err(Error::Invalid("empty matrix".into()));
    }
    let se = SymmetricEigen::new(values.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
    let mu = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    let mut u = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &se.eigenvectors.column(src));
    }
    let eig = EigenSystem { mu, u };
    let neg = eig.significant_negatives();
    if neg > 0 {
        log::warn!(
            "kernel matrix is not PSD: {neg} eigenvalue(s) below -{PSD_TOLERANCE:e} * mu_1 (min {:e})",
            eig.mu[n - 1]
        );
    }
    Ok(eig)
}

/// `K^(r) = sum_{k<=r} mu_k u_k u_k^T`.
pub fn truncated_gram(eig: &EigenSystem, r: usize) -> Result<DMatrix<f64>> {
    let ur = eig.leading(r)?;
    let mut scaled = ur.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= eig.mu[k];
    }
    Ok(&scaled * ur.transpose())
}

/// Approximated truncated kernel evaluated at test points:
/// `U_{<=r} U_{<=r}^T Kx`, column by column.
pub fn approx_truncated_cross(eig: &EigenSystem, r: usize, kx: &CrossKernel) -> Result<DMatrix<f64>> {
    if kx.values.nrows() != eig.n() {
        return Err(Error::Invalid(format!(
            "cross kernel has {} training rows, eigensystem has {}",
            kx.values.nrows(),
            eig.n()
        )));
    }
    let ur = eig.leading(r)?;
    let projected = ur.transpose() * &kx.values;
    Ok(ur * projected)
}

/// Negated OLS slope of `log mu_j` against `log j`, after dropping
/// `mu_j <= ALPHA_FILTER * max(mu)`. Indices are the 1-based positions in
/// the given (descending) spectrum.
pub fn power_law_alpha(mu: &[f64]) -> Result<f64> {
    let top = mu.iter().copied().fold(0.0_f64, f64::max);
    let points: Vec<(f64, f64)> = mu
        .iter()
        .enumerate()
        .filter(|&(_, &m)| top > 0.0 && m > ALPHA_FILTER * top)
        .map(|(j, &m)| (((j + 1) as f64).ln(), m.ln()))
        .collect();
    if points.len() < 2 {
        return Err(Error::Invalid(format!(
            "power-law fit needs at least 2 positive eigenvalues, got {}",
            points.len()
        )));
    }
    let m = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    Ok(-sxy / sxx)
}

/// Exponentiated spectral entropy, intrinsic dimension and stable rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichnessMetrics {
    pub sse: f64,
    pub id: f64,
    pub sr: f64,
}

/// SSE `exp(-sum p log p)` with `p = mu/sum(mu)`, ID `sum(mu)/mu_1`, SR
/// `sum(mu^2)/mu_1^2`, all on the spectrum with negatives clamped to 0.
pub fn spectral_metrics(mu: &[f64]) -> Result<RichnessMetrics> {
    let s: Vec<f64> = mu.iter().map(|&m| m.max(0.0)).collect();
    let top = s.iter().copied().fold(0.0_f64, f64::max);
    if top <= 0.0 || s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("spectrum has no positive eigenvalue".into()));
    }
    let total: f64 = s.iter().sum();
    let entropy: f64 = s
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    Ok(RichnessMetrics {
        sse: entropy.exp(),
        id: total / top,
        sr: s.iter().map(|v| v * v).sum::<f64>() / (top * top),
    })
}

/// The four richness metrics of one spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMetrics {
    pub alpha: f64,
    pub sse: f64,
    pub id: f64,
    pub sr: f64,
}

impl SpectrumMetrics {
    pub fn of(mu: &[f64]) -> Result<Self> {
        let clamped: Vec<f64> = mu.iter().map(|&m| m.max(0.0)).collect();
        let rich = spectral_metrics(&clamped)?;
        Ok(SpectrumMetrics {
            alpha: power_law_alpha(&clamped)?,
            sse: rich.sse,
            id: rich.id,
            sr: rich.sr,
        })
    }
}

/// 0-based slice bounds of the truncated window: positions 4..=floor(n/2).
pub fn truncation_window(n: usize) -> Result<std::ops::Range<usize>> {
    let end = n / 2;
    if end < WINDOW_START {
        return Err(Error::Invalid(format!(
            "truncated window is empty for n = {n} (needs n >= {})",
            2 * WINDOW_START
        )));
    }
    Ok(WINDOW_START - 1..end)
}

/// Metrics on `mu_4 ..= mu_{floor(n/2)}` of a descending spectrum, with the
/// window re-indexed from 1.
pub fn truncated_metrics(mu: &[f64]) -> Result<SpectrumMetrics> {
    let w = truncation_window(mu.len())?;
    SpectrumMetrics::of(&mu[w])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub n: usize,
    /// Number of strictly positive (clamped) eigenvalues.
    pub rank: usize,
    /// Eigenvalues below `-PSD_TOLERANCE * mu_1` before clamping.
    pub negative_eigenvalues: usize,
    pub min_eigenvalue: f64,
    pub full: SpectrumMetrics,
    pub truncated: SpectrumMetrics,
}

impl SpectrumReport {
    pub fn from_eigen(eig: &EigenSystem) -> Result<Self> {
        let raw: Vec<f64> = eig.mu.iter().copied().collect();
        let clamped = eig.clamped();
        Ok(SpectrumReport {
            n: raw.len(),
            rank: clamped.iter().filter(|&&m| m > 0.0).count(),
            negative_eigenvalues: eig.significant_negatives(),
            min_eigenvalue: raw.iter().copied().fold(f64::INFINITY, f64::min),
            full: SpectrumMetrics::of(&clamped)?,
            truncated: truncated_metrics(&clamped)?,
        })
    }
}

/// `index,eigenvalue` CSV with 1-based indices and raw eigenvalues.
pub fn spectrum_csv(mu: &[f64]) -> String {
    let mut out = String::from("index,eigenvalue\n");
    for (j, m) in mu.iter().enumerate() {
        let _ = writeln!(out, "{},{m:e}", j + 1);
    }
    out
}
