//! Experiment drivers: per-property evaluation over repeated splits,
//! truncation sweeps, learning curves and correlation of spectrum metrics
//! with predictive performance.

mod correlation;
mod evaluate;
mod learning_curve;
mod truncation;

pub use correlation::{
    correlate_metrics, fisher_interval, pearson_ci, scatter_csv, CorrelationReport, GroupCorrelation,
    MetricCorrelation, MetricRow, PearsonCi, SkippedGroup, MIN_GROUP_ROWS,
};
pub use evaluate::{
    evaluate, evaluate_trial, EvaluationReport, EvaluationSetup, PropertySummary, PropertyTargets, TrialOutcome,
};
pub use learning_curve::{learning_curve, LearningCurveResult, LearningCurveSetup};
pub use truncation::{
    default_levels, level_rank, threshold_level, truncation_sweep, SweepTargets, Thresholds, TruncationSweepResult,
};

use serde::{Deserialize, Serialize};

use crate::regression::default_lambda_grid;

/// Ridge-parameter search shared by every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    /// Standardize targets before fitting (undone before scoring).
    pub standardize: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            lambda_grid: default_lambda_grid(),
            folds: 5,
            standardize: false,
        }
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
