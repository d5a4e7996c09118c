#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use molkernel::dataset::{make_split, BitVector, Dataset, FeatureDataset, FingerprintDataset, TargetTable};
use molkernel::experiments::{evaluate_trial, truncation_sweep, PropertyTargets, Protocol, SweepTargets};
use molkernel::kernels::{cross, gram, KernelConfig, KernelFamily};
use molkernel::spectral::eigendecompose;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `K = A A^T / p + shift I` over `n` training points and the matching
/// `n x m` cross kernel `A B^T / p`.
pub fn random_spd(n: usize, m: usize, shift: f64, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut r = rng(seed);
    let p = n.max(8);
    let a = gaussian_matrix(n, p, &mut r);
    let b = gaussian_matrix(m, p, &mut r);
    let mut k = &a * a.transpose() / p as f64;
    for i in 0..n {
        k[(i, i)] += shift;
    }
    let k = (&k + k.transpose()) * 0.5;
    (k, &a * b.transpose() / p as f64)
}

pub fn random_bools(d: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..d).map(|_| rng.random_bool(density)).collect()
}

pub fn fingerprint_dataset(rows: &[Vec<bool>]) -> FingerprintDataset {
    FingerprintDataset {
        ids: (0..rows.len()).map(|i| format!("mol{i}")).collect(),
        rows: rows.iter().map(|r| BitVector::from_bits(r)).collect(),
        d: rows[0].len(),
        metadata: vec![],
    }
}

fn div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Fingerprint similarity computed directly from boolean vectors, with
/// each formula written as printed (`|x|` the L1 norm, `x'` the bit flip,
/// `d0` the common zeros, `d` the length).
pub fn fingerprint_oracle(family: KernelFamily, x1: &[bool], x2: &[bool]) -> f64 {
    let f = |b: bool| if b { 1.0 } else { 0.0 };
    let d = x1.len() as f64;
    let inner: f64 = x1.iter().zip(x2).map(|(a, b)| f(*a) * f(*b)).sum();
    let l1 = |x: &[bool]| x.iter().map(|b| f(*b)).sum::<f64>();
    let sq = |x: &[bool]| x.iter().map(|b| f(*b) * f(*b)).sum::<f64>();
    let n1 = l1(x1);
    let n2 = l1(x2);
    let flipped: f64 = x1.iter().zip(x2).map(|(a, b)| f(!*a) * f(!*b)).sum();
    let d0 = x1.iter().zip(x2).filter(|(a, b)| !**a && !**b).count() as f64;
    let diff: f64 = x1.iter().zip(x2).map(|(a, b)| (f(*a) - f(*b)).abs()).sum();
    match family {
        KernelFamily::Tanimoto => div(inner, sq(x1) + sq(x2) - inner),
        KernelFamily::Dice => div(2.0 * inner, n1 + n2),
        KernelFamily::Otsuka => div(inner, (n1 + n2).sqrt()),
        KernelFamily::Sogenfrei => div(inner * inner, n1 + n2),
        KernelFamily::BraunBlanquet => div(inner, n1.max(n2)),
        KernelFamily::Faith => (2.0 * inner + d0) / (2.0 * d),
        KernelFamily::Forbes => div(d * inner, n1 + n2),
        KernelFamily::InnerProduct => inner,
        KernelFamily::Intersection => inner + flipped,
        KernelFamily::MinMax => div(n1 + n2 - diff, n1 + n2 + diff),
        KernelFamily::Rand => (inner + d) / d,
        KernelFamily::RogersTanimoto => inner + div(d0, 2.0 * n1) + 2.0 * n2 - 3.0 * inner + d0,
        KernelFamily::RusselRao => inner / d,
        KernelFamily::SokalSneath => div(inner, 2.0 * n1) + 2.0 * n2 - 3.0 * inner,
        other => panic!("{other} is not a fingerprint family"),
    }
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_molkernel")
}

pub fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn molkernel")
}

/// Every file below `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Small fixture set: fingerprints, 3-D features and a target table whose
/// properties depend smoothly on the features.
pub struct Fixture {
    pub dir: PathBuf,
    pub n: usize,
}

pub fn write_fixture(dir: &Path, n: usize, seed: u64) -> Fixture {
    let mut r = rng(seed);
    let mut fp = String::from("# source=synthetic\n# d=64\n");
    let mut feats = String::from("id,f0,f1,f2\n");
    let mut targets = String::from("id,a,b\n");
    for i in 0..n {
        let bits: String = (0..64).map(|_| if r.random_bool(0.3) { '1' } else { '0' }).collect();
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let ones = bits.bytes().filter(|&c| c == b'1').count() as f64;
        fp.push_str(&format!("m{i} {bits}\n"));
        feats.push_str(&format!("m{i},{},{},{}\n", x[0], x[1], x[2]));
        let a = x[0].sin() + 0.5 * x[1] * x[2] + 0.01 * ones;
        let b = x[0] - x[1] + 0.1 * (ones / 64.0);
        targets.push_str(&format!("m{i},{a},{b}\n"));
    }
    fs::write(dir.join("fp.txt"), fp).unwrap();
    fs::write(dir.join("feat.csv"), feats).unwrap();
    fs::write(dir.join("targets.csv"), targets).unwrap();
    Fixture {
        dir: dir.to_path_buf(),
        n,
    }
}

/// Writes a config for one representation/kernel pair and returns its path.
pub fn write_config(fx: &Fixture, name: &str, rep: &str, kind: &str, kernel: &str) -> PathBuf {
    let text = format!(
        r#"targets = "targets.csv"
properties = ["a", "b"]

[representation]
path = "{rep}"
kind = "{kind}"
name = "{name}"

[kernel]
{kernel}

[split]
n_train = 40
n_test = 15
seeds = [1, 2]

[krr]
lambda_grid = [1e-6, 1e-3, 1e-1]
folds = 4

[truncate]
levels = [5, 10, 50, 100]

[learning_curve]
sizes = [10, 20, 40]
test_size = 15
"#
    );
    let path = fx.dir.join(format!("{name}.toml"));
    fs::write(&path, text).unwrap();
    path
}

/// Outcome of the reduced-scale replication pipeline.
#[derive(Debug, Clone)]
pub struct DeskScaleOutcome {
    /// 95% threshold (percent of n) of the regularized sweep on the focus property.
    pub pct95: Option<f64>,
    /// Test R² of full regularized KRR per property.
    pub full_r2: BTreeMap<String, f64>,
    /// Largest pairwise R² difference among the thermodynamic properties.
    pub max_pair_gap: f64,
    /// Max R² of the ridgeless sweep on the focus property.
    pub ridgeless_max: f64,
}

/// Gaussian-kernel KRR on one split: full regularized fits for every
/// property, then regularized and ridgeless truncation sweeps on `focus`.
#[allow(clippy::too_many_arguments)]
pub fn desk_scale_pipeline(
    dataset: &Dataset,
    targets: &TargetTable,
    properties: &[String],
    focus: &str,
    kernel: &KernelConfig,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> molkernel::Result<DeskScaleOutcome> {
    let split = make_split(dataset.ids(), n_train, n_test, seed)?;
    let train = dataset.select(&split.train_ids)?;
    let test = dataset.select(&split.test_ids)?;
    let k = gram(&train, kernel)?;
    let kx = cross(&train, &test, kernel)?;
    let protocol = Protocol::default();
    let props = properties
        .iter()
        .map(|p| PropertyTargets::gather(targets, p, &split.train_ids, &split.test_ids))
        .collect::<molkernel::Result<Vec<_>>>()?;
    let full = evaluate_trial(&k, &kx, &props, &protocol, seed)?;
    let full_r2: BTreeMap<String, f64> = full.fits.iter().map(|(p, f)| (p.clone(), f.r2)).collect();
    let mut max_pair_gap: f64 = 0.0;
    for a in full_r2.values() {
        for b in full_r2.values() {
            max_pair_gap = max_pair_gap.max((a - b).abs());
        }
    }
    let eig = eigendecompose(&k)?;
    let focus_targets = [SweepTargets {
        name: focus.to_string(),
        train: targets.values(focus, &split.train_ids)?,
        test: targets.values(focus, &split.test_ids)?,
    }];
    let levels = molkernel::experiments::default_levels();
    let reg = truncation_sweep(&eig, &kx, &focus_targets, &levels, true, &protocol, seed, &full_r2)?;
    let ridgeless = truncation_sweep(&eig, &kx, &focus_targets, &levels, false, &protocol, seed, &full_r2)?;
    let ridgeless_max = ridgeless.r2_per_level[focus]
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DeskScaleOutcome {
        pct95: reg.thresholds.get(focus).and_then(|t| t.pct95),
        full_r2,
        max_pair_gap,
        ridgeless_max,
    })
}

/// Synthetic stand-in for a global 3-D descriptor set: smooth features with
/// four strongly related "energy" targets.
pub fn synthetic_energies(n: usize, seed: u64) -> (Dataset, TargetTable) {
    let mut r = rng(seed);
    let d = 6;
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let base: Vec<f64> = rows
        .iter()
        .map(|x| 3.0 * x[0] - 2.0 * x[1] + x[2] + 0.5 * x[3] * x[4] - 0.3 * x[5] * x[5])
        .collect();
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            base.iter()
                .map(|v| v * (1.0 + 0.001 * k as f64) + 0.01 * k as f64)
                .collect()
        })
        .collect();
    let props = ["U0", "U", "H", "G"].iter().map(|s| s.to_string()).collect();
    (
        Dataset::Feature(FeatureDataset::new(ids.clone(), rows).unwrap()),
        TargetTable::new(ids, props, cols).unwrap(),
    )
}
