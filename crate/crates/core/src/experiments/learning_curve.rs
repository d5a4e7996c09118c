use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{evaluate_trial, mean, sample_std, PropertyTargets, Protocol};
use crate::dataset::{make_split, Dataset, TargetTable};
use crate::error::{Error, Result};
use crate::kernels::{cross, gram, KernelConfig};

#[derive(Debug, Clone)]
pub struct LearningCurveSetup<'a> {
    pub dataset: &'a Dataset,
    pub kernel: &'a KernelConfig,
    pub targets: &'a TargetTable,
    pub properties: &'a [String],
    pub sizes: &'a [usize],
    pub test_size: usize,
    pub seeds: &'a [u64],
    pub protocol: &'a Protocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveResult {
    pub kernel: String,
    pub train_sizes: Vec<usize>,
    pub test_size: usize,
    pub seeds: Vec<u64>,
    /// Mean test MAE over seeds, per property and size.
    pub mae_per_size: BTreeMap<String, Vec<f64>>,
    pub mae_std: BTreeMap<String, Vec<f64>>,
}

impl LearningCurveResult {
    /// `property,train_size,mae_mean,mae_std` in property then size order.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("property,train_size,mae_mean,mae_std\n");
        for (p, maes) in &self.mae_per_size {
            for (i, size) in self.train_sizes.iter().enumerate() {
                out.push_str(&format!("{p},{size},{},{}\n", maes[i], self.mae_std[p][i]));
            }
        }
        out
    }
}

/// Test MAE as a function of training-set size. For a given seed and size
/// the split is the one `evaluate` would draw for `n_train = size`.
pub fn learning_curve(setup: &LearningCurveSetup<'_>) -> Result<LearningCurveResult> {
    let sizes = setup.sizes;
    if sizes.is_empty() {
        return Err(Error::Invalid("learning curve needs at least one training size".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("training sizes must be strictly increasing".into()));
    }
    if setup.seeds.is_empty() {
        return Err(Error::Invalid("need at least one trial seed".into()));
    }
    let largest = sizes[sizes.len() - 1];
    if largest + setup.test_size > setup.dataset.len() {
        return Err(Error::Invalid(format!(
            "insufficient data: {largest} training + {} test molecules requested, {} available",
            setup.test_size,
            setup.dataset.len()
        )));
    }
    for p in setup.properties {
        if !setup.targets.has_property(p) {
            return Err(Error::Config(format!("property {p:?} not in target table")));
        }
    }
    // maes[property][size][seed]
    let mut maes = vec![vec![Vec::with_capacity(setup.seeds.len()); sizes.len()]; setup.properties.len()];
    for (s, &size) in sizes.iter().enumerate() {
        for &seed in setup.seeds {
            let split = make_split(setup.dataset.ids(), size, setup.test_size, seed)?;
            let train = setup.dataset.select(&split.train_ids)?;
            let test = setup.dataset.select(&split.test_ids)?;
            let k = gram(&train, setup.kernel)?;
            let kx = cross(&train, &test, setup.kernel)?;
            let targets = setup
                .properties
                .iter()
                .map(|p| PropertyTargets::gather(setup.targets, p, &split.train_ids, &split.test_ids))
                .collect::<Result<Vec<_>>>()?;
            let trial = evaluate_trial(&k, &kx, &targets, setup.protocol, seed)?;
            for (p, (_, fit)) in trial.fits.iter().enumerate() {
                maes[p][s].push(fit.mae);
            }
        }
    }
    let mut mae_per_size = BTreeMap::new();
    let mut mae_std = BTreeMap::new();
    for (p, name) in setup.properties.iter().enumerate() {
        mae_per_size.insert(name.clone(), maes[p].iter().map(|v| mean(v)).collect());
        mae_std.insert(name.clone(), maes[p].iter().map(|v| sample_std(v)).collect());
    }
    Ok(LearningCurveResult {
        kernel: setup.kernel.label(),
        train_sizes: sizes.to_vec(),
        test_size: setup.test_size,
        seeds: setup.seeds.to_vec(),
        mae_per_size,
        mae_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureDataset;
    use crate::experiments::{evaluate, EvaluationSetup};
    use crate::kernels::KernelFamily;

    fn data(n: usize) -> (Dataset, TargetTable) {
        let ids: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - r[1]).collect();
        let ds = Dataset::Feature(FeatureDataset::new(ids.clone(), rows).unwrap());
        (ds, TargetTable::new(ids, vec!["y".into()], vec![y]).unwrap())
    }

    #[test]
    fn empty_and_oversized_requests_error() {
        let (ds, t) = data(30);
        let cfg = KernelConfig::new(KernelFamily::Linear);
        let protocol = Protocol::default();
        let props = ["y".to_string()];
        let mut setup = LearningCurveSetup {
            dataset: &ds,
            kernel: &cfg,
            targets: &t,
            properties: &props,
            sizes: &[],
            test_size: 10,
            seeds: &[0],
            protocol: &protocol,
        };
        assert!(learning_curve(&setup).is_err());
        setup.sizes = &[10, 25];
        assert!(learning_curve(&setup).is_err());
        setup.sizes = &[15, 10];
        assert!(learning_curve(&setup).is_err());
    }

    #[test]
    fn single_size_matches_evaluate() {
        let (ds, t) = data(40);
        let cfg = KernelConfig::new(KernelFamily::Gaussian).with_length_scale(1.0);
        let protocol = Protocol {
            lambda_grid: vec![1e-6, 1e-3, 1e-1],
            ..Protocol::default()
        };
        let props = ["y".to_string()];
        let lc = learning_curve(&LearningCurveSetup {
            dataset: &ds,
            kernel: &cfg,
            targets: &t,
            properties: &props,
            sizes: &[30],
            test_size: 10,
            seeds: &[3, 4],
            protocol: &protocol,
        })
        .unwrap();
        let ev = evaluate(&EvaluationSetup {
            dataset: &ds,
            kernel: &cfg,
            targets: &t,
            properties: &props,
            n_train: 30,
            n_test: 10,
            seeds: &[3, 4],
            protocol: &protocol,
        })
        .unwrap();
        assert_eq!(lc.mae_per_size["y"][0], ev.properties[0].mae_mean);
        assert!(lc
            .table_csv()
            .starts_with("property,train_size,mae_mean,mae_std\ny,30,"));
    }
}
