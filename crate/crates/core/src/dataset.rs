//! On-disk representations, targets and train/test splits.
//!
//! Formats:
//!
//! * fingerprints: UTF-8 text, `#` comments, a mandatory `# d=<int>` header,
//!   then `<id> <bitstring>` lines;
//! * features: CSV with header `id,f0,...,f{d-1}`;
//! * local environments: JSON lines `{"id": .., "atoms": [{"Z": .., "v": [..]}, ..]}`;
//! * targets: CSV `id,<prop1>,<prop2>,...`;
//! * splits: JSON `{"seed": .., "train": [..], "test": [..]}`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Packed binary fingerprint of fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
    ones: u32,
}

impl BitVector {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1u64 << (i % 64);
            }
        }
        let ones = words.iter().map(|w| w.count_ones()).sum();
        BitVector {
            words,
            len: bits.len(),
            ones,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of set bits (the L1 norm of a binary vector).
    pub fn count_ones(&self) -> u32 {
        self.ones
    }

    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    /// Number of positions set in both vectors. Panics on length mismatch.
    pub fn and_count(&self, other: &BitVector) -> u32 {
        assert_eq!(self.len, other.len, "fingerprint length mismatch");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones())
            .sum()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len).map(|i| if self.get(i) { 1.0 } else { 0.0 }).collect()
    }

    fn to_bitstring(&self) -> String {
        (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDataset {
    pub ids: Vec<String>,
    pub rows: Vec<BitVector>,
    pub d: usize,
    /// Comment lines other than the `d=` header, without the leading `#`.
    pub metadata: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub ids: Vec<String>,
    /// Row-major `n x d` values.
    pub values: Vec<f64>,
    pub d: usize,
}

impl FeatureDataset {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || d == 0 {
            return Err(Error::Invalid("feature dataset needs n >= 1 and d >= 1".into()));
        }
        if ids.len() != rows.len() {
            return Err(Error::Invalid("ids and rows differ in length".into()));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Invalid("rows differ in length".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite value".into()));
        }
        check_unique(&ids)?;
        Ok(FeatureDataset {
            ids,
            values: rows.into_iter().flatten().collect(),
            d,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub z: u32,
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalEnvDataset {
    pub ids: Vec<String>,
    pub molecules: Vec<Vec<Atom>>,
    pub d_loc: usize,
}

/// Any of the three representation kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Fingerprint(FingerprintDataset),
    Feature(FeatureDataset),
    Local(LocalEnvDataset),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationKind {
    Fingerprint,
    Feature,
    Local,
}

impl Dataset {
    pub fn kind(&self) -> RepresentationKind {
        match self {
            Dataset::Fingerprint(_) => RepresentationKind::Fingerprint,
            Dataset::Feature(_) => RepresentationKind::Feature,
            Dataset::Local(_) => RepresentationKind::Local,
        }
    }

    pub fn ids(&self) -> &[String] {
        match self {
            Dataset::Fingerprint(d) => &d.ids,
            Dataset::Feature(d) => &d.ids,
            Dataset::Local(d) => &d.ids,
        }
    }

    pub fn len(&self) -> usize {
        self.ids().len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids().is_empty()
    }

    /// Width of a row (fingerprint length, feature count, or per-atom descriptor length).
    pub fn dim(&self) -> usize {
        match self {
            Dataset::Fingerprint(d) => d.d,
            Dataset::Feature(d) => d.d,
            Dataset::Local(d) => d.d_loc,
        }
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let ids = indices.iter().map(|&i| self.ids()[i].clone()).collect();
        match self {
            Dataset::Fingerprint(d) => Dataset::Fingerprint(FingerprintDataset {
                ids,
                rows: indices.iter().map(|&i| d.rows[i].clone()).collect(),
                d: d.d,
                metadata: d.metadata.clone(),
            }),
            Dataset::Feature(d) => Dataset::Feature(FeatureDataset {
                ids,
                values: indices.iter().flat_map(|&i| d.row(i).to_vec()).collect(),
                d: d.d,
            }),
            Dataset::Local(d) => Dataset::Local(LocalEnvDataset {
                ids,
                molecules: indices.iter().map(|&i| d.molecules[i].clone()).collect(),
                d_loc: d.d_loc,
            }),
        }
    }

    /// Rows whose ids are listed, in list order.
    pub fn select(&self, ids: &[String]) -> Result<Dataset> {
        let index: HashMap<&str, usize> = self.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let idx = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Invalid(format!("unknown molecule id {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset(&idx))
    }

    pub fn read(path: &Path, kind: RepresentationKind) -> Result<Dataset> {
        Ok(match kind {
            RepresentationKind::Fingerprint => Dataset::Fingerprint(read_fingerprints(path)?),
            RepresentationKind::Feature => Dataset::Feature(read_features(path)?),
            RepresentationKind::Local => Dataset::Local(read_local_envs(path)?),
        })
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Invalid(format!("duplicate id {id:?}")));
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_fingerprints(path: &Path) -> Result<FingerprintDataset> {
    parse_fingerprints(&read_text(path)?, path)
}

pub fn parse_fingerprints(text: &str, path: &Path) -> Result<FingerprintDataset> {
    let mut d: Option<usize> = None;
    let mut metadata = Vec::new();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();

    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("d=") {
                if d.is_some() {
                    return Err(Error::parse(path, lineno, "repeated d= header"));
                }
                let v: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad d= header {v:?}")))?;
                if v == 0 {
                    return Err(Error::parse(path, lineno, "d must be positive"));
                }
                d = Some(v);
            } else {
                metadata.push(comment.to_string());
            }
            continue;
        }
        let width = d.ok_or_else(|| Error::parse(path, lineno, "data line before `# d=` header"))?;
        let mut tokens = line.split_whitespace();
        let (Some(id), Some(bits), None) = (tokens.next(), tokens.next(), tokens.next()) else {
            return Err(Error::parse(path, lineno, "expected `<id> <bitstring>`"));
        };
        if bits.len() != width {
            return Err(Error::parse(
                path,
                lineno,
                format!("bitstring has length {}, expected {width}", bits.len()),
            ));
        }
        let parsed = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::parse(path, lineno, format!("non-binary symbol {other:?}"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(path, lineno, format!("duplicate id {id:?}")));
        }
        ids.push(id.to_string());
        rows.push(BitVector::from_bits(&parsed));
    }

    let d = d.ok_or_else(|| Error::parse(path, 0, "missing `# d=<int>` header"))?;
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "no rows"));
    }
    Ok(FingerprintDataset { ids, rows, d, metadata })
}

pub fn format_fingerprints(ds: &FingerprintDataset) -> String {
    let mut out = String::new();
    for m in &ds.metadata {
        let _ = writeln!(out, "# {m}");
    }
    let _ = writeln!(out, "# d={}", ds.d);
    for (id, row) in ds.ids.iter().zip(&ds.rows) {
        let _ = writeln!(out, "{id} {}", row.to_bitstring());
    }
    out
}

pub fn write_fingerprints(path: &Path, ds: &FingerprintDataset) -> Result<()> {
    write_text(path, &format_fingerprints(ds))
}

fn parse_float(s: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite value {s:?}")));
    }
    Ok(v)
}

/// Header, ids and numeric rows of an id-keyed CSV.
type NumericCsv = (Vec<String>, Vec<String>, Vec<Vec<f64>>);

/// Reads a headed CSV whose first column is `id`, returning the header and
/// numeric rows. Line numbers in errors are 1-based file lines.
fn read_numeric_csv(text: &str, path: &Path) -> Result<NumericCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("id") || header.len() < 2 {
        return Err(Error::parse(path, 1, "header must be `id,<col>,...`"));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} columns, found {}", header.len(), record.len()),
            ));
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::parse(path, line, format!("duplicate id {id:?}")));
        }
        let values = record
            .iter()
            .skip(1)
            .map(|s| parse_float(s, path, line))
            .collect::<Result<Vec<_>>>()?;
        ids.push(id);
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "no rows"));
    }
    Ok((header, ids, rows))
}

pub fn read_features(path: &Path) -> Result<FeatureDataset> {
    parse_features(&read_text(path)?, path)
}

pub fn parse_features(text: &str, path: &Path) -> Result<FeatureDataset> {
    let (_, ids, rows) = read_numeric_csv(text, path)?;
    FeatureDataset::new(ids, rows)
}

pub fn format_features(ds: &FeatureDataset) -> String {
    let mut out = String::from("id");
    for j in 0..ds.d {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for (i, id) in ds.ids.iter().enumerate() {
        out.push_str(id);
        for v in ds.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_features(path: &Path, ds: &FeatureDataset) -> Result<()> {
    write_text(path, &format_features(ds))
}

#[derive(Deserialize)]
struct RawAtom {
    #[serde(rename = "Z")]
    z: Option<i64>,
    v: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawMolecule {
    id: String,
    atoms: Vec<RawAtom>,
}

#[derive(Serialize)]
struct OutAtom<'a> {
    #[serde(rename = "Z")]
    z: u32,
    v: &'a [f64],
}

#[derive(Serialize)]
struct OutMolecule<'a> {
    id: &'a str,
    atoms: Vec<OutAtom<'a>>,
}

pub fn read_local_envs(path: &Path) -> Result<LocalEnvDataset> {
    parse_local_envs(&read_text(path)?, path)
}

pub fn parse_local_envs(text: &str, path: &Path) -> Result<LocalEnvDataset> {
    let mut ids = Vec::new();
    let mut molecules = Vec::new();
    let mut d_loc: Option<usize> = None;
    let mut seen = HashSet::new();

    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        let raw: RawMolecule = serde_json::from_str(line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let err = |msg: String| Error::parse(path, lineno, format!("molecule {:?}: {msg}", raw.id));
        if raw.atoms.is_empty() {
            return Err(err("no atoms".into()));
        }
        let mut atoms = Vec::with_capacity(raw.atoms.len());
        for (k, a) in raw.atoms.iter().enumerate() {
            let z = a.z.ok_or_else(|| err(format!("atom {k}: missing Z")))?;
            if z < 1 || z > u32::MAX as i64 {
                return Err(err(format!("atom {k}: invalid atomic number {z}")));
            }
            let v =
                a.v.clone()
                    .ok_or_else(|| err(format!("atom {k}: missing descriptor v")))?;
            if v.is_empty() {
                return Err(err(format!("atom {k}: empty descriptor")));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(err(format!("atom {k}: non-finite value")));
            }
            match d_loc {
                None => d_loc = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(err(format!(
                        "atom {k}: descriptor length {} does not match d_loc={d}",
                        v.len()
                    )))
                }
                _ => {}
            }
            atoms.push(Atom {
                z: z as u32,
                descriptor: v,
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(err("duplicate id".into()));
        }
        ids.push(raw.id);
        molecules.push(atoms);
    }
    let d_loc = d_loc.ok_or_else(|| Error::parse(path, 0, "no rows"))?;
    Ok(LocalEnvDataset { ids, molecules, d_loc })
}

pub fn format_local_envs(ds: &LocalEnvDataset) -> Result<String> {
    let mut out = String::new();
    for (id, atoms) in ds.ids.iter().zip(&ds.molecules) {
        let line = OutMolecule {
            id,
            atoms: atoms
                .iter()
                .map(|a| OutAtom {
                    z: a.z,
                    v: &a.descriptor,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_local_envs(path: &Path, ds: &LocalEnvDataset) -> Result<()> {
    write_text(path, &format_local_envs(ds)?)
}

/// Per-molecule property values keyed by id. Units are not tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTable {
    pub ids: Vec<String>,
    pub properties: Vec<String>,
    /// `columns[p][i]` is property `p` of molecule `i`.
    pub columns: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl TargetTable {
    pub fn new(ids: Vec<String>, properties: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        check_unique(&ids)?;
        if columns.len() != properties.len() || columns.iter().any(|c| c.len() != ids.len()) {
            return Err(Error::Invalid("target columns do not match ids/properties".into()));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite target value".into()));
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(TargetTable {
            ids,
            properties,
            columns,
            index,
        })
    }

    pub fn has_property(&self, name: &str) -> bool {
        self.properties.iter().any(|p| p == name)
    }

    /// Values of `property` for `ids`, in the order given.
    pub fn values(&self, property: &str, ids: &[String]) -> Result<Vec<f64>> {
        let p = self
            .properties
            .iter()
            .position(|q| q == property)
            .ok_or_else(|| Error::Invalid(format!("unknown property {property:?}")))?;
        ids.iter()
            .map(|id| {
                self.index
                    .get(id)
                    .map(|&i| self.columns[p][i])
                    .ok_or_else(|| Error::Invalid(format!("no target for id {id:?}")))
            })
            .collect()
    }
}

pub fn read_targets(path: &Path) -> Result<TargetTable> {
    parse_targets(&read_text(path)?, path)
}

pub fn parse_targets(text: &str, path: &Path) -> Result<TargetTable> {
    let (header, ids, rows) = read_numeric_csv(text, path)?;
    let properties: Vec<String> = header[1..].to_vec();
    let columns = (0..properties.len())
        .map(|p| rows.iter().map(|r| r[p]).collect())
        .collect();
    TargetTable::new(ids, properties, columns)
}

pub fn format_targets(t: &TargetTable) -> String {
    let mut out = String::from("id");
    for p in &t.properties {
        let _ = write!(out, ",{p}");
    }
    out.push('\n');
    for (i, id) in t.ids.iter().enumerate() {
        out.push_str(id);
        for c in &t.columns {
            let _ = write!(out, ",{}", c[i]);
        }
        out.push('\n');
    }
    out
}

pub fn write_targets(path: &Path, t: &TargetTable) -> Result<()> {
    write_text(path, &format_targets(t))
}

/// Disjoint train/test id lists drawn with a recorded seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    #[serde(rename = "train")]
    pub train_ids: Vec<String>,
    #[serde(rename = "test")]
    pub test_ids: Vec<String>,
}

impl SplitSpec {
    pub fn n_train(&self) -> usize {
        self.train_ids.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_ids.len()
    }

    /// Checks disjointness and that every id belongs to `universe`.
    pub fn validate(&self, universe: &[String]) -> Result<()> {
        let all: HashSet<&str> = universe.iter().map(String::as_str).collect();
        let train: HashSet<&str> = self.train_ids.iter().map(String::as_str).collect();
        for id in self.train_ids.iter().chain(&self.test_ids) {
            if !all.contains(id.as_str()) {
                return Err(Error::Invalid(format!("split id {id:?} not in dataset")));
            }
        }
        if let Some(id) = self.test_ids.iter().find(|id| train.contains(id.as_str())) {
            return Err(Error::Invalid(format!("id {id:?} is in both train and test")));
        }
        Ok(())
    }
}

/// Seeded permutation of `0..n` used for splits and CV folds.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Uniformly random disjoint train/test subsets: the first `n_train` entries
/// of a seeded permutation go to train, the next `n_test` to test.
pub fn make_split(ids: &[String], n_train: usize, n_test: usize, seed: u64) -> Result<SplitSpec> {
    if n_train + n_test > ids.len() {
        return Err(Error::Invalid(format!(
            "split needs {} ids, only {} available",
            n_train + n_test,
            ids.len()
        )));
    }
    check_unique(ids)?;
    let perm = permutation(ids.len(), seed);
    Ok(SplitSpec {
        seed,
        train_ids: perm[..n_train].iter().map(|&i| ids[i].clone()).collect(),
        test_ids: perm[n_train..n_train + n_test]
            .iter()
            .map(|&i| ids[i].clone())
            .collect(),
    })
}

pub fn read_split(path: &Path) -> Result<SplitSpec> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

pub fn write_split(path: &Path, split: &SplitSpec) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(split)? + "\n"))
}
