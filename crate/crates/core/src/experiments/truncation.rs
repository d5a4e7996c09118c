use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Protocol;
use crate::error::{Error, Result};
use crate::kernels::CrossKernel;
use crate::regression::{score, tune_lambda_truncated};
use crate::spectral::EigenSystem;

/// Eigen-components at or below this fraction of `mu_1` are left out of the
/// ridgeless truncated solve (pseudo-inverse).
pub const RIDGELESS_CUTOFF: f64 = 1e-10;

/// Truncation levels in percent of `n`.
pub fn default_levels() -> Vec<f64> {
    vec![
        0.1, 0.2, 0.5, 1.0, 2.0, 2.9, 3.8, 4.6, 5.5, 6.4, 7.2, 8.1, 9.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0,
        45.0, 50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 80.0, 85.0, 90.0, 95.0, 100.0,
    ]
}

/// Retained eigen-components for a level: `max(1, round(level * n / 100))`.
pub fn level_rank(level: f64, n: usize) -> usize {
    ((level * n as f64 / 100.0).round() as usize).clamp(1, n)
}

/// Training and test targets of one property for a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTargets {
    pub name: String,
    pub train: Vec<f64>,
    pub test: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub pct95: Option<f64>,
    pub pct99: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationSweepResult {
    pub regularized: bool,
    pub levels: Vec<f64>,
    pub ranks: Vec<usize>,
    /// Test R² per level; `None` marks a failed level.
    pub r2_per_level: BTreeMap<String, Vec<Option<f64>>>,
    /// Ridge parameter used at each level (all 0 when ridgeless).
    pub lambda_per_level: BTreeMap<String, Vec<Option<f64>>>,
    /// Smallest level reaching 95% / 99% of the best R² of the sweep.
    pub thresholds: BTreeMap<String, Thresholds>,
    /// Same, relative to `reference_r2` instead of the sweep maximum.
    pub thresholds_vs_reference: BTreeMap<String, Thresholds>,
    /// Untruncated regularized KRR R² supplied by the caller, if any.
    pub reference_r2: BTreeMap<String, f64>,
    pub failed_levels: BTreeMap<String, Vec<f64>>,
}

/// Smallest level whose R² is at least `fraction * target`.
pub fn threshold_level(levels: &[f64], r2: &[Option<f64>], fraction: f64, target: f64) -> Option<f64> {
    levels
        .iter()
        .zip(r2)
        .find(|(_, v)| v.is_some_and(|v| v >= fraction * target))
        .map(|(l, _)| *l)
}

fn thresholds_for(levels: &[f64], r2: &[Option<f64>], target: f64) -> Thresholds {
    Thresholds {
        pct95: threshold_level(levels, r2, 0.95, target),
        pct99: threshold_level(levels, r2, 0.99, target),
    }
}

/// Eigen-coefficients `c_k / (mu_k + lambda)` for `k < r`, zero where the
/// shifted eigenvalue is below the cutoff.
fn truncated_coefficients(eig: &EigenSystem, c: &DVector<f64>, r: usize, lambda: f64) -> DVector<f64> {
    let cutoff = RIDGELESS_CUTOFF * eig.mu[0].max(0.0);
    DVector::from_fn(r, |k, _| {
        let d = eig.mu[k] + lambda;
        if d > cutoff {
            c[k] / d
        } else {
            0.0
        }
    })
}

/// Truncated-KRR test R² over a list of truncation levels.
///
/// Predictions use the approximated truncated kernel `U_r U_r^T Kx`; with
/// `regularized` the ridge parameter is re-tuned at every level by CV on
/// `K^(r)`, otherwise it is pinned to 0. `reference_r2` (untruncated KRR R²
/// per property) is only used for the reference thresholds.
#[allow(clippy::too_many_arguments)]
pub fn truncation_sweep(
    eig: &EigenSystem,
    kx: &CrossKernel,
    targets: &[SweepTargets],
    levels: &[f64],
    regularized: bool,
    protocol: &Protocol,
    seed: u64,
    reference_r2: &BTreeMap<String, f64>,
) -> Result<TruncationSweepResult> {
    let n = eig.n();
    if levels.is_empty() {
        return Err(Error::Invalid("no truncation levels".into()));
    }
    if levels.iter().any(|&l| !(l > 0.0 && l <= 100.0)) || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(
            "levels must be strictly increasing within (0, 100]".into(),
        ));
    }
    if kx.values.nrows() != n {
        return Err(Error::Invalid("cross kernel does not match the eigensystem".into()));
    }
    for t in targets {
        if t.train.len() != n || t.test.len() != kx.values.ncols() {
            return Err(Error::Invalid(format!(
                "targets of {} do not match the kernels",
                t.name
            )));
        }
    }
    let ranks: Vec<usize> = levels.iter().map(|&l| level_rank(l, n)).collect();
    // U^T Kx once; rows beyond r are dropped per level.
    let projected: DMatrix<f64> = eig.u.tr_mul(&kx.values);

    let mut result = TruncationSweepResult {
        regularized,
        levels: levels.to_vec(),
        ranks: ranks.clone(),
        r2_per_level: BTreeMap::new(),
        lambda_per_level: BTreeMap::new(),
        thresholds: BTreeMap::new(),
        thresholds_vs_reference: BTreeMap::new(),
        reference_r2: reference_r2.clone(),
        failed_levels: BTreeMap::new(),
    };

    for t in targets {
        let y = DVector::from_column_slice(&t.train);
        let c = eig.u.tr_mul(&y);
        let per_level: Vec<(Option<f64>, Option<f64>)> = ranks
            .par_iter()
            .map(|&r| {
                let lambda = if regularized {
                    tune_lambda_truncated(eig, r, &t.train, &protocol.lambda_grid, protocol.folds, seed)
                        .ok()
                        .map(|s| s.lambda)
                } else {
                    Some(0.0)
                };
                let Some(lambda) = lambda else {
                    return (None, None);
                };
                let beta = truncated_coefficients(eig, &c, r, lambda);
                let pred = projected.rows(0, r).tr_mul(&beta);
                if pred.iter().any(|v| !v.is_finite()) {
                    return (None, Some(lambda));
                }
                (score(&t.test, pred.as_slice()).ok().map(|s| s.r2), Some(lambda))
            })
            .collect();
        let r2: Vec<Option<f64>> = per_level.iter().map(|p| p.0).collect();
        let failed: Vec<f64> = levels
            .iter()
            .zip(&r2)
            .filter(|(_, v)| v.is_none())
            .map(|(l, _)| *l)
            .collect();
        if !failed.is_empty() {
            log::warn!("{}: truncation levels {failed:?} failed", t.name);
        }
        let best = r2.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            result
                .thresholds
                .insert(t.name.clone(), thresholds_for(levels, &r2, best));
        }
        if let Some(&reference) = reference_r2.get(&t.name) {
            result
                .thresholds_vs_reference
                .insert(t.name.clone(), thresholds_for(levels, &r2, reference));
        }
        result.failed_levels.insert(t.name.clone(), failed);
        result
            .lambda_per_level
            .insert(t.name.clone(), per_level.iter().map(|p| p.1).collect());
        result.r2_per_level.insert(t.name.clone(), r2);
    }
    Ok(result)
}
