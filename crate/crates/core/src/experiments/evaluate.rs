use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean, sample_std, Protocol};
use crate::dataset::{make_split, Dataset, TargetTable};
use crate::error::{Error, Result};
use crate::kernels::{cross, gram, CrossKernel, KernelConfig, KernelMatrix};
use crate::regression::{fit_scaled, predict, score, tune_lambda, FitReport, TargetScaling};

/// Training and test targets of one property, aligned with a Gram/cross pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyTargets {
    pub name: String,
    pub train: Vec<f64>,
    pub test: Vec<f64>,
}

impl PropertyTargets {
    pub fn gather(table: &TargetTable, name: &str, train_ids: &[String], test_ids: &[String]) -> Result<Self> {
        Ok(PropertyTargets {
            name: name.to_string(),
            train: table.values(name, train_ids)?,
            test: table.values(name, test_ids)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    /// One report per property, in property order.
    pub fits: Vec<(String, FitReport)>,
    pub avg_r2: f64,
}

/// Tune, fit and score every property on one train/test pair.
pub fn evaluate_trial(
    k: &KernelMatrix,
    kx: &CrossKernel,
    targets: &[PropertyTargets],
    protocol: &Protocol,
    seed: u64,
) -> Result<TrialOutcome> {
    if targets.is_empty() {
        return Err(Error::Invalid("no properties to evaluate".into()));
    }
    let fits = targets
        .par_iter()
        .map(|t| {
            if t.train.len() != k.n() || t.test.len() != kx.values.ncols() {
                return Err(Error::Invalid(format!(
                    "targets of {} do not match the kernels",
                    t.name
                )));
            }
            let scaling = if protocol.standardize {
                TargetScaling::standardizing(&t.train)
            } else {
                TargetScaling::IDENTITY
            };
            let y = scaling.forward(&t.train);
            let selection = tune_lambda(k, &y, &protocol.lambda_grid, protocol.folds, seed)?;
            let model = fit_scaled(k, &t.train, selection.lambda, scaling)?;
            let pred = predict(&model, kx)?;
            let s = score(&t.test, &pred)?;
            Ok((t.name.clone(), FitReport::new(selection, s)))
        })
        .collect::<Result<Vec<_>>>()?;
    let avg_r2 = mean(&fits.iter().map(|f| f.1.r2).collect::<Vec<_>>());
    Ok(TrialOutcome { seed, fits, avg_r2 })
}

/// Inputs of a repeated-split evaluation.
#[derive(Debug, Clone)]
pub struct EvaluationSetup<'a> {
    pub dataset: &'a Dataset,
    pub kernel: &'a KernelConfig,
    pub targets: &'a TargetTable,
    pub properties: &'a [String],
    pub n_train: usize,
    pub n_test: usize,
    /// One trial per seed; each trial draws a fresh train and test set.
    pub seeds: &'a [u64],
    pub protocol: &'a Protocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertySummary {
    pub property: String,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub kernel: KernelConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub properties: Vec<PropertySummary>,
    /// Mean over trials of the across-property average R².
    pub avg_r2_mean: f64,
    pub avg_r2_std: f64,
    pub trials: Vec<TrialOutcome>,
}

/// Per-property KRR evaluation repeated over `seeds`, reporting means and
/// sample standard deviations across trials.
pub fn evaluate(setup: &EvaluationSetup<'_>) -> Result<EvaluationReport> {
    if setup.seeds.is_empty() {
        return Err(Error::Invalid("need at least one trial seed".into()));
    }
    for p in setup.properties {
        if !setup.targets.has_property(p) {
            return Err(Error::Config(format!("property {p:?} not in target table")));
        }
    }
    let mut trials = Vec::with_capacity(setup.seeds.len());
    for &seed in setup.seeds {
        let split = make_split(setup.dataset.ids(), setup.n_train, setup.n_test, seed)?;
        let train = setup.dataset.select(&split.train_ids)?;
        let test = setup.dataset.select(&split.test_ids)?;
        let k = gram(&train, setup.kernel)?;
        let kx = cross(&train, &test, setup.kernel)?;
        let targets = setup
            .properties
            .iter()
            .map(|p| PropertyTargets::gather(setup.targets, p, &split.train_ids, &split.test_ids))
            .collect::<Result<Vec<_>>>()?;
        trials.push(evaluate_trial(&k, &kx, &targets, setup.protocol, seed)?);
    }
    Ok(summarize(setup, trials))
}

fn summarize(setup: &EvaluationSetup<'_>, trials: Vec<TrialOutcome>) -> EvaluationReport {
    let properties = setup
        .properties
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let r2: Vec<f64> = trials.iter().map(|t| t.fits[p].1.r2).collect();
            let mae: Vec<f64> = trials.iter().map(|t| t.fits[p].1.mae).collect();
            PropertySummary {
                property: name.clone(),
                r2_mean: mean(&r2),
                r2_std: sample_std(&r2),
                mae_mean: mean(&mae),
                mae_std: sample_std(&mae),
            }
        })
        .collect();
    let avg: Vec<f64> = trials.iter().map(|t| t.avg_r2).collect();
    EvaluationReport {
        kernel: setup.kernel.clone(),
        n_train: setup.n_train,
        n_test: setup.n_test,
        seeds: setup.seeds.to_vec(),
        properties,
        avg_r2_mean: mean(&avg),
        avg_r2_std: sample_std(&avg),
        trials,
    }
}
