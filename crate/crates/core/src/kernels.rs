//! Molecular kernels and Gram / cross-kernel construction.
//!
//! Fingerprint kernels work on binary vectors and are expressed through four
//! counts: the overlap `<x1,x2>`, the two L1 norms and the number of common
//! zeros `d0`. Isotropic kernels (Gaussian, Laplacian, linear) work on real
//! feature vectors, and with `local = true` on per-atom descriptors summed
//! over same-species atom pairs.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Atom, BitVector, Dataset, LocalEnvDataset};
use crate::error::{Error, Result};

/// Relative tolerance below which a negative eigenvalue is treated as rounding.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    Tanimoto,
    Dice,
    Otsuka,
    Sogenfrei,
    BraunBlanquet,
    Faith,
    Forbes,
    InnerProduct,
    Intersection,
    MinMax,
    Rand,
    RogersTanimoto,
    RusselRao,
    SokalSneath,
    Gaussian,
    Laplacian,
    Linear,
}

impl KernelFamily {
    pub const FINGERPRINT: [KernelFamily; 14] = [
        KernelFamily::Tanimoto,
        KernelFamily::Dice,
        KernelFamily::Otsuka,
        KernelFamily::Sogenfrei,
        KernelFamily::BraunBlanquet,
        KernelFamily::Faith,
        KernelFamily::Forbes,
        KernelFamily::InnerProduct,
        KernelFamily::Intersection,
        KernelFamily::MinMax,
        KernelFamily::Rand,
        KernelFamily::RogersTanimoto,
        KernelFamily::RusselRao,
        KernelFamily::SokalSneath,
    ];

    pub fn is_fingerprint(self) -> bool {
        !matches!(
            self,
            KernelFamily::Gaussian | KernelFamily::Laplacian | KernelFamily::Linear
        )
    }

    pub fn needs_length_scale(self) -> bool {
        matches!(self, KernelFamily::Gaussian | KernelFamily::Laplacian)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Tanimoto => "tanimoto",
            KernelFamily::Dice => "dice",
            KernelFamily::Otsuka => "otsuka",
            KernelFamily::Sogenfrei => "sogenfrei",
            KernelFamily::BraunBlanquet => "braun-blanquet",
            KernelFamily::Faith => "faith",
            KernelFamily::Forbes => "forbes",
            KernelFamily::InnerProduct => "inner-product",
            KernelFamily::Intersection => "intersection",
            KernelFamily::MinMax => "min-max",
            KernelFamily::Rand => "rand",
            KernelFamily::RogersTanimoto => "rogers-tanimoto",
            KernelFamily::RusselRao => "russel-rao",
            KernelFamily::SokalSneath => "sokal-sneath",
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Laplacian => "laplacian",
            KernelFamily::Linear => "linear",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let all = KernelFamily::FINGERPRINT.iter().copied().chain([
            KernelFamily::Gaussian,
            KernelFamily::Laplacian,
            KernelFamily::Linear,
        ]);
        for fam in all {
            if fam.name().replace('-', "") == key {
                return Ok(fam);
            }
        }
        Err(Error::Config(format!("unknown kernel family {s:?}")))
    }
}

fn default_sigma() -> f64 {
    1.0
}

fn default_length_scale() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    /// Fingerprint amplitude; every fingerprint kernel is scaled by its square.
    #[serde(default = "default_sigma")]
    pub sigma_f: f64,
    /// Length scale of the Gaussian and Laplacian kernels.
    #[serde(default = "default_length_scale")]
    pub sigma_l: f64,
    /// Sum over same-species atom pairs of a local-environment dataset.
    #[serde(default)]
    pub local: bool,
    /// Use the textbook Otsuka (`<x1,x2>/sqrt(|x1||x2|)`) and Sogenfrei
    /// (`<x1,x2>^2/(|x1||x2|)`) forms instead of the sum-denominator ones.
    #[serde(default)]
    pub classical: bool,
}

impl KernelConfig {
    pub fn new(family: KernelFamily) -> Self {
        KernelConfig {
            family,
            sigma_f: 1.0,
            sigma_l: default_length_scale(),
            local: false,
            classical: false,
        }
    }

    pub fn with_length_scale(mut self, sigma_l: f64) -> Self {
        self.sigma_l = sigma_l;
        self
    }

    pub fn with_sigma_f(mut self, sigma_f: f64) -> Self {
        self.sigma_f = sigma_f;
        self
    }

    pub fn local(mut self) -> Self {
        self.local = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f > 0.0 && self.sigma_f.is_finite()) {
            return Err(Error::Config("sigma_f must be positive".into()));
        }
        if self.family.needs_length_scale() && !(self.sigma_l > 0.0 && self.sigma_l.is_finite()) {
            return Err(Error::Config("sigma_l must be positive".into()));
        }
        if self.local && !self.family.needs_length_scale() {
            return Err(Error::Config(format!(
                "local kernels need a gaussian or laplacian family, got {}",
                self.family
            )));
        }
        Ok(())
    }

    /// Stable textual form used for the Gram cache digest.
    pub fn canonical(&self) -> String {
        format!(
            "family={};sigma_f={:e};sigma_l={:e};local={};classical={}",
            self.family, self.sigma_f, self.sigma_l, self.local, self.classical
        )
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.canonical().as_bytes());
        h.finalize().into()
    }

    /// Short label such as `gaussian` or `local-laplacian`.
    pub fn label(&self) -> String {
        if self.local {
            format!("local-{}", self.family)
        } else {
            self.family.to_string()
        }
    }
}

/// Counts shared by every fingerprint formula.
#[derive(Debug, Clone, Copy)]
struct Overlap {
    both: f64,
    a: f64,
    b: f64,
    /// Positions zero in both vectors.
    zeros: f64,
    d: f64,
}

impl Overlap {
    fn new(x1: &BitVector, x2: &BitVector) -> Self {
        let both = x1.and_count(x2) as f64;
        let a = x1.count_ones() as f64;
        let b = x2.count_ones() as f64;
        let d = x1.len() as f64;
        Overlap {
            both,
            a,
            b,
            zeros: d - a - b + both,
            d,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn similarity(family: KernelFamily, classical: bool, o: Overlap) -> f64 {
    let Overlap { both, a, b, zeros, d } = o;
    match family {
        KernelFamily::Tanimoto => ratio(both, a + b - both),
        KernelFamily::Dice => ratio(2.0 * both, a + b),
        KernelFamily::Otsuka if classical => ratio(both, (a * b).sqrt()),
        KernelFamily::Otsuka => ratio(both, (a + b).sqrt()),
        KernelFamily::Sogenfrei if classical => ratio(both * both, a * b),
        KernelFamily::Sogenfrei => ratio(both * both, a + b),
        KernelFamily::BraunBlanquet => ratio(both, a.max(b)),
        KernelFamily::Faith => (2.0 * both + zeros) / (2.0 * d),
        KernelFamily::Forbes => ratio(d * both, a + b),
        KernelFamily::InnerProduct => both,
        // The bit-flipped overlap is the common-zero count.
        KernelFamily::Intersection => both + zeros,
        KernelFamily::MinMax => {
            let diff = a + b - 2.0 * both;
            ratio(a + b - diff, a + b + diff)
        }
        KernelFamily::Rand => (both + d) / d,
        KernelFamily::RogersTanimoto => both + ratio(zeros, 2.0 * a) + 2.0 * b - 3.0 * both + zeros,
        KernelFamily::RusselRao => both / d,
        KernelFamily::SokalSneath => ratio(both, 2.0 * a) + 2.0 * b - 3.0 * both,
        KernelFamily::Gaussian | KernelFamily::Laplacian | KernelFamily::Linear => {
            unreachable!("not a fingerprint family")
        }
    }
}

/// `sigma_f^2 * s(x1, x2)` for a fingerprint family `s`.
///
/// Zero denominators (all-zero inputs) yield 0. Rogers-Tanimoto and
/// Sokal-Sneath are not symmetric in their arguments.
pub fn fingerprint_kernel(x1: &BitVector, x2: &BitVector, config: &KernelConfig) -> Result<f64> {
    if !config.family.is_fingerprint() {
        return Err(Error::Invalid(format!("{} is not a fingerprint kernel", config.family)));
    }
    if x1.len() != x2.len() {
        return Err(Error::Invalid(format!(
            "fingerprint lengths differ: {} vs {}",
            x1.len(),
            x2.len()
        )));
    }
    Ok(fingerprint_unchecked(x1, x2, config))
}

fn fingerprint_unchecked(x1: &BitVector, x2: &BitVector, config: &KernelConfig) -> f64 {
    config.sigma_f * config.sigma_f * similarity(config.family, config.classical, Overlap::new(x1, x2))
}

fn iso_unchecked(v1: &[f64], v2: &[f64], config: &KernelConfig) -> f64 {
    match config.family {
        KernelFamily::Gaussian => {
            let sq: f64 = v1.iter().zip(v2).map(|(a, b)| (a - b) * (a - b)).sum();
            (-sq / (2.0 * config.sigma_l * config.sigma_l)).exp()
        }
        KernelFamily::Laplacian => {
            let l1: f64 = v1.iter().zip(v2).map(|(a, b)| (a - b).abs()).sum();
            (-l1 / config.sigma_l).exp()
        }
        KernelFamily::Linear => v1.iter().zip(v2).map(|(a, b)| a * b).sum(),
        _ => unreachable!("not an isotropic family"),
    }
}

/// Gaussian `exp(-|v1-v2|_2^2 / (2 sigma_l^2))`, Laplacian
/// `exp(-|v1-v2|_1 / sigma_l)` or linear `<v1, v2>`.
pub fn iso_kernel(v1: &[f64], v2: &[f64], config: &KernelConfig) -> Result<f64> {
    if config.family.is_fingerprint() {
        return Err(Error::Invalid(format!("{} is not an isotropic kernel", config.family)));
    }
    if v1.len() != v2.len() {
        return Err(Error::Invalid(format!(
            "vector lengths differ: {} vs {}",
            v1.len(),
            v2.len()
        )));
    }
    Ok(iso_unchecked(v1, v2, config))
}

/// Atoms of one molecule grouped by atomic number, sorted by Z.
#[derive(Debug, Clone)]
struct SpeciesGroups {
    groups: Vec<(u32, Vec<Vec<f64>>)>,
}

impl SpeciesGroups {
    fn new(atoms: &[Atom]) -> Self {
        let mut groups: Vec<(u32, Vec<Vec<f64>>)> = Vec::new();
        for a in atoms {
            match groups.binary_search_by_key(&a.z, |g| g.0) {
                Ok(k) => groups[k].1.push(a.descriptor.clone()),
                Err(k) => groups.insert(k, (a.z, vec![a.descriptor.clone()])),
            }
        }
        SpeciesGroups { groups }
    }

    fn kernel(&self, other: &SpeciesGroups, config: &KernelConfig) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut total = 0.0;
        while i < self.groups.len() && j < other.groups.len() {
            let (za, ref va) = self.groups[i];
            let (zb, ref vb) = other.groups[j];
            match za.cmp(&zb) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    for a in va {
                        for b in vb {
                            total += iso_unchecked(a, b, config);
                        }
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        total
    }
}

/// Double sum over atom pairs with equal atomic number of the isotropic
/// kernel between their descriptors. No normalisation by atom counts.
pub fn local_kernel(mol_i: &[Atom], mol_j: &[Atom], config: &KernelConfig) -> Result<f64> {
    if !config.local || !config.family.needs_length_scale() {
        return Err(Error::Invalid(
            "local_kernel needs a local gaussian/laplacian config".into(),
        ));
    }
    let len_i = mol_i.first().map(|a| a.descriptor.len());
    let len_j = mol_j.first().map(|a| a.descriptor.len());
    let all_same = |m: &[Atom], l: Option<usize>| m.iter().all(|a| Some(a.descriptor.len()) == l);
    if !all_same(mol_i, len_i) || !all_same(mol_j, len_j) || (len_i.is_some() && len_j.is_some() && len_i != len_j) {
        return Err(Error::Invalid("descriptor length mismatch between molecules".into()));
    }
    Ok(SpeciesGroups::new(mol_i).kernel(&SpeciesGroups::new(mol_j), config))
}

/// Symmetric `n x n` Gram matrix over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: DMatrix<f64>,
    pub config: KernelConfig,
    pub ids: Vec<String>,
}

impl KernelMatrix {
    /// Wraps a precomputed symmetric matrix.
    pub fn from_matrix(values: DMatrix<f64>, config: KernelConfig, ids: Vec<String>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n || ids.len() != n {
            return Err(Error::Invalid("kernel matrix must be square and match ids".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("kernel matrix has non-finite entries".into()));
        }
        check_symmetric(&values)?;
        Ok(KernelMatrix { values, config, ids })
    }

    /// Unlabelled kernel matrix, for synthetic inputs.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| i.to_string()).collect();
        Self::from_matrix(values, KernelConfig::new(KernelFamily::Linear), ids)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Principal submatrix on `indices` (rows and columns in that order).
    pub fn submatrix(&self, indices: &[usize]) -> KernelMatrix {
        let m = indices.len();
        let values = DMatrix::from_fn(m, m, |i, j| self.values[(indices[i], indices[j])]);
        KernelMatrix {
            values,
            config: self.config.clone(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Invalid("matrix is not square".into()));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// `n_train x n_test` kernel block between two datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossKernel {
    pub values: DMatrix<f64>,
    pub config: KernelConfig,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl CrossKernel {
    pub fn from_values(values: DMatrix<f64>) -> Self {
        CrossKernel {
            train_ids: (0..values.nrows()).map(|i| i.to_string()).collect(),
            test_ids: (0..values.ncols()).map(|i| i.to_string()).collect(),
            values,
            config: KernelConfig::new(KernelFamily::Linear),
        }
    }
}

/// Pairwise evaluator prepared once per dataset.
enum Prepared<'a> {
    Bits(&'a [BitVector]),
    Dense { values: Vec<f64>, d: usize },
    Local(Vec<SpeciesGroups>),
}

impl<'a> Prepared<'a> {
    fn new(ds: &'a Dataset, config: &KernelConfig) -> Result<Self> {
        config.validate()?;
        let fam = config.family;
        match ds {
            Dataset::Fingerprint(f) if fam.is_fingerprint() => Ok(Prepared::Bits(&f.rows)),
            Dataset::Fingerprint(f) if !config.local => Ok(Prepared::Dense {
                values: f.rows.iter().flat_map(BitVector::to_f64).collect(),
                d: f.d,
            }),
            Dataset::Feature(f) if !fam.is_fingerprint() && !config.local => Ok(Prepared::Dense {
                values: f.values.clone(),
                d: f.d,
            }),
            Dataset::Local(l) if config.local => Ok(Prepared::Local(local_groups(l))),
            _ => Err(Error::Config(format!(
                "kernel {} (local={}) cannot be used with a {:?} dataset",
                fam,
                config.local,
                ds.kind()
            ))),
        }
    }

    fn n(&self) -> usize {
        match self {
            Prepared::Bits(b) => b.len(),
            Prepared::Dense { values, d } => values.len() / d,
            Prepared::Local(g) => g.len(),
        }
    }

    fn dim_matches(&self, other: &Prepared<'_>) -> bool {
        match (self, other) {
            (Prepared::Bits(a), Prepared::Bits(b)) => a[0].len() == b[0].len(),
            (Prepared::Dense { d: a, .. }, Prepared::Dense { d: b, .. }) => a == b,
            (Prepared::Local(_), Prepared::Local(_)) => true,
            _ => false,
        }
    }

    fn eval(&self, i: usize, other: &Prepared<'_>, j: usize, config: &KernelConfig) -> f64 {
        match (self, other) {
            (Prepared::Bits(a), Prepared::Bits(b)) => fingerprint_unchecked(&a[i], &b[j], config),
            (Prepared::Dense { values: a, d }, Prepared::Dense { values: b, .. }) => {
                iso_unchecked(&a[i * d..(i + 1) * d], &b[j * d..(j + 1) * d], config)
            }
            (Prepared::Local(a), Prepared::Local(b)) => a[i].kernel(&b[j], config),
            _ => unreachable!(),
        }
    }
}

fn local_groups(ds: &LocalEnvDataset) -> Vec<SpeciesGroups> {
    ds.molecules.iter().map(|m| SpeciesGroups::new(m)).collect()
}

/// Gram matrix `K[i][j] = k(M_i, M_j)`. The upper triangle is evaluated
/// (rows in parallel) and mirrored, so the result is exactly symmetric.
pub fn gram(dataset: &Dataset, config: &KernelConfig) -> Result<KernelMatrix> {
    let prep = Prepared::new(dataset, config)?;
    let n = prep.n();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| prep.eval(i, &prep, j, config)).collect())
        .collect();
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("kernel produced non-finite entries".into()));
    }
    Ok(KernelMatrix {
        values,
        config: config.clone(),
        ids: dataset.ids().to_vec(),
    })
}

/// Cross kernel `Kx[i][j] = k(train_i, test_j)`.
pub fn cross(train: &Dataset, test: &Dataset, config: &KernelConfig) -> Result<CrossKernel> {
    let a = Prepared::new(train, config)?;
    let b = Prepared::new(test, config)?;
    if !a.dim_matches(&b) || train.dim() != test.dim() {
        return Err(Error::Invalid(format!(
            "train/test dimension mismatch: {} vs {}",
            train.dim(),
            test.dim()
        )));
    }
    let (n, m) = (a.n(), b.n());
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| (0..n).map(|i| a.eval(i, &b, j, config)).collect())
        .collect();
    let values = DMatrix::from_fn(n, m, |i, j| cols[j][i]);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("kernel produced non-finite entries".into()));
    }
    Ok(CrossKernel {
        values,
        config: config.clone(),
        train_ids: train.ids().to_vec(),
        test_ids: test.ids().to_vec(),
    })
}

const CACHE_MAGIC: &[u8; 4] = b"KSGM";

/// Binary Gram cache: `"KSGM"`, little-endian `u32 n`, the 32-byte SHA-256
/// of [`KernelConfig::canonical`], then the upper triangle row-major as
/// `n(n+1)/2` little-endian doubles.
pub fn encode_gram_cache(k: &KernelMatrix) -> Vec<u8> {
    let n = k.n();
    let mut out = Vec::with_capacity(40 + 4 * n * (n + 1));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&k.config.digest());
    for i in 0..n {
        for j in i..n {
            out.extend_from_slice(&k.values[(i, j)].to_le_bytes());
        }
    }
    out
}

/// Parses a cache produced by [`encode_gram_cache`]. When `expected` is
/// given, its digest must match the stored one.
pub fn decode_gram_cache(bytes: &[u8], expected: Option<&KernelConfig>) -> Result<DMatrix<f64>> {
    let bad = |msg: &str| Error::Invalid(format!("gram cache: {msg}"));
    if bytes.len() < 40 || &bytes[..4] != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if let Some(cfg) = expected {
        if bytes[8..40] != cfg.digest() {
            return Err(bad("config digest mismatch"));
        }
    }
    let body = &bytes[40..];
    if body.len() != 4 * n * (n + 1) {
        return Err(bad("truncated body"));
    }
    let mut values = DMatrix::zeros(n, n);
    let mut chunks = body.chunks_exact(8);
    for i in 0..n {
        for j in i..n {
            let v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(values)
}

pub fn write_gram_cache(path: &Path, k: &KernelMatrix) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_gram_cache(k)).map_err(|e| Error::io(path, e))
}

pub fn read_gram_cache(path: &Path, expected: Option<&KernelConfig>) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_gram_cache(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureDataset, FingerprintDataset};

    fn bv(bits: &[u8]) -> BitVector {
        BitVector::from_bits(&bits.iter().map(|&b| b == 1).collect::<Vec<_>>())
    }

    fn cfg(f: KernelFamily) -> KernelConfig {
        KernelConfig::new(f)
    }

    fn k(f: KernelFamily, a: &[u8], b: &[u8]) -> f64 {
        fingerprint_kernel(&bv(a), &bv(b), &cfg(f)).unwrap()
    }

    #[test]
    fn printed_formula_examples() {
        assert_eq!(k(KernelFamily::Tanimoto, &[1, 0, 1, 1], &[1, 0, 1, 1]), 1.0);
        assert!((k(KernelFamily::Tanimoto, &[1, 1, 0], &[1, 0, 1]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(k(KernelFamily::Dice, &[1, 1, 0], &[1, 0, 1]), 0.5);
        assert_eq!(k(KernelFamily::MinMax, &[0, 1, 1], &[0, 1, 1]), 1.0);
        assert_eq!(k(KernelFamily::MinMax, &[1, 0], &[0, 1]), 0.0);
    }

    #[test]
    fn classical_forms_differ() {
        let (a, b) = (bv(&[1, 1, 0, 0]), bv(&[1, 0, 1, 1]));
        let mut c = cfg(KernelFamily::Otsuka);
        assert!((fingerprint_kernel(&a, &b, &c).unwrap() - 1.0 / 5f64.sqrt()).abs() < 1e-15);
        c.classical = true;
        assert!((fingerprint_kernel(&a, &b, &c).unwrap() - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        let mut c = cfg(KernelFamily::Sogenfrei);
        assert!((fingerprint_kernel(&a, &b, &c).unwrap() - 0.2).abs() < 1e-15);
        c.classical = true;
        assert!((fingerprint_kernel(&a, &b, &c).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn all_zero_inputs_give_zero() {
        for f in [
            KernelFamily::Tanimoto,
            KernelFamily::Dice,
            KernelFamily::Otsuka,
            KernelFamily::Sogenfrei,
            KernelFamily::BraunBlanquet,
            KernelFamily::MinMax,
            KernelFamily::Forbes,
        ] {
            assert_eq!(k(f, &[0, 0, 0], &[0, 0, 0]), 0.0, "{f}");
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(fingerprint_kernel(&bv(&[1, 0]), &bv(&[1]), &cfg(KernelFamily::Dice)).is_err());
        assert!(iso_kernel(&[1.0], &[1.0, 2.0], &cfg(KernelFamily::Linear)).is_err());
    }

    #[test]
    fn iso_examples() {
        let g = cfg(KernelFamily::Gaussian).with_length_scale(100.0);
        assert_eq!(iso_kernel(&[0.3, -2.0], &[0.3, -2.0], &g).unwrap(), 1.0);
        let l = cfg(KernelFamily::Laplacian).with_length_scale(1.0);
        assert!((iso_kernel(&[0.0], &[1.0], &l).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(
            iso_kernel(&[1.0, 2.0], &[3.0, 4.0], &cfg(KernelFamily::Linear)).unwrap(),
            11.0
        );
    }

    fn atom(z: u32, v: &[f64]) -> Atom {
        Atom {
            z,
            descriptor: v.to_vec(),
        }
    }

    #[test]
    fn local_examples() {
        let lap = cfg(KernelFamily::Laplacian).with_length_scale(1.0).local();
        let gau = cfg(KernelFamily::Gaussian).local();
        assert_eq!(
            local_kernel(&[atom(6, &[0.0])], &[atom(1, &[0.0]), atom(8, &[0.0])], &gau).unwrap(),
            0.0
        );
        assert_eq!(
            local_kernel(&[atom(6, &[0.0, 0.0])], &[atom(6, &[0.0, 0.0])], &gau).unwrap(),
            1.0
        );
        let v = local_kernel(&[atom(6, &[0.0]), atom(1, &[1.0])], &[atom(6, &[1.0])], &lap).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert!(local_kernel(&[atom(6, &[0.0])], &[atom(6, &[0.0, 1.0])], &gau).is_err());
        assert!(local_kernel(&[atom(6, &[0.0])], &[atom(6, &[0.0])], &cfg(KernelFamily::Gaussian)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(KernelFamily::Tanimoto).local().validate().is_err());
        assert!(cfg(KernelFamily::Tanimoto).with_sigma_f(0.0).validate().is_err());
        assert!(cfg(KernelFamily::Gaussian).with_length_scale(-1.0).validate().is_err());
        assert!(cfg(KernelFamily::Linear).with_length_scale(-1.0).validate().is_ok());
        assert_eq!("Min-Max".parse::<KernelFamily>().unwrap(), KernelFamily::MinMax);
        assert_eq!(
            "braun_blanquet".parse::<KernelFamily>().unwrap(),
            KernelFamily::BraunBlanquet
        );
        assert!("cosine".parse::<KernelFamily>().is_err());
    }

    #[test]
    fn gram_degenerate_and_mismatch() {
        let fp = Dataset::Fingerprint(FingerprintDataset {
            ids: vec!["a".into()],
            rows: vec![bv(&[1, 0, 1])],
            d: 3,
            metadata: vec![],
        });
        let g = gram(&fp, &cfg(KernelFamily::Tanimoto)).unwrap();
        assert_eq!(g.values.shape(), (1, 1));
        assert_eq!(g.values[(0, 0)], 1.0);

        let feat = Dataset::Feature(FeatureDataset::new(vec!["a".into()], vec![vec![1.0]]).unwrap());
        assert!(matches!(
            gram(&feat, &cfg(KernelFamily::Tanimoto)),
            Err(Error::Config(_))
        ));
        assert!(gram(&feat, &cfg(KernelFamily::Gaussian).local()).is_err());
        assert!(cross(&fp, &feat, &cfg(KernelFamily::Linear)).is_err());
    }

    #[test]
    fn cache_roundtrip_and_digest_check() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let k = KernelMatrix::from_values(m.clone()).unwrap();
        let bytes = encode_gram_cache(&k);
        assert_eq!(bytes.len(), 40 + 3 * 8);
        assert_eq!(&bytes[..4], b"KSGM");
        assert_eq!(decode_gram_cache(&bytes, Some(&k.config)).unwrap(), m);
        assert!(decode_gram_cache(&bytes, Some(&cfg(KernelFamily::Dice))).is_err());
        assert!(decode_gram_cache(&bytes[..30], None).is_err());
    }

    #[test]
    fn from_matrix_rejects_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(KernelMatrix::from_values(m).is_err());
    }
}
