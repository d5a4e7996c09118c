//! TOML run configuration.
//!
//! ```toml
//! targets = "targets.csv"
//! properties = ["homo", "lumo"]
//!
//! [representation]
//! path = "ecfp.txt"
//! kind = "fingerprint"
//! name = "ecfp"
//!
//! [kernel]
//! family = "tanimoto"
//!
//! [split]
//! n_train = 800
//! n_test = 200
//! seeds = [0, 1, 2, 3, 4]
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, RepresentationKind};
use crate::error::{Error, Result};
use crate::experiments::{default_levels, Protocol};
use crate::kernels::KernelConfig;
use crate::regression::default_lambda_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepresentationConfig {
    pub path: PathBuf,
    pub kind: RepresentationKind,
    /// Defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrrConfig {
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub standardize: bool,
}

fn default_folds() -> usize {
    5
}

impl Default for KrrConfig {
    fn default() -> Self {
        KrrConfig {
            lambda_grid: default_lambda_grid(),
            folds: default_folds(),
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizedMode {
    True,
    False,
    Both,
}

impl RegularizedMode {
    /// Modes to run, ridgeless first.
    pub fn flags(self) -> Vec<bool> {
        match self {
            RegularizedMode::True => vec![true],
            RegularizedMode::False => vec![false],
            RegularizedMode::Both => vec![false, true],
        }
    }
}

impl std::str::FromStr for RegularizedMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "true" => Ok(RegularizedMode::True),
            "false" => Ok(RegularizedMode::False),
            "both" => Ok(RegularizedMode::Both),
            _ => Err(format!("expected true, false or both, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncateConfig {
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_mode")]
    pub regularized: RegularizedMode,
}

fn default_mode() -> RegularizedMode {
    RegularizedMode::False
}

impl Default for TruncateConfig {
    fn default() -> Self {
        TruncateConfig {
            levels: default_levels(),
            regularized: default_mode(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningCurveConfig {
    pub sizes: Vec<usize>,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub targets: Option<PathBuf>,
    #[serde(default)]
    pub properties: Vec<String>,
    pub representation: RepresentationConfig,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub krr: KrrConfig,
    #[serde(default)]
    pub truncate: TruncateConfig,
    #[serde(default)]
    pub learning_curve: Option<LearningCurveConfig>,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.representation.path = base.join(&cfg.representation.path);
        if let Some(t) = &cfg.targets {
            cfg.targets = Some(base.join(t));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn representation_name(&self) -> String {
        self.representation.name.clone().unwrap_or_else(|| {
            self.representation
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "representation".into())
        })
    }

    pub fn protocol(&self) -> Protocol {
        Protocol {
            lambda_grid: self.krr.lambda_grid.clone(),
            folds: self.krr.folds,
            standardize: self.krr.standardize,
        }
    }

    /// Checks that referenced files exist and that the representation kind
    /// suits the kernel.
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !self.representation.path.is_file() {
            return Err(Error::Config(format!(
                "representation file {} does not exist",
                self.representation.path.display()
            )));
        }
        if let Some(t) = &self.targets {
            if !t.is_file() {
                return Err(Error::Config(format!("target file {} does not exist", t.display())));
            }
        }
        check_kind(self.representation.kind, &self.kernel)?;
        if self.krr.folds < 2 {
            return Err(Error::Config("krr.folds must be at least 2".into()));
        }
        if self.krr.lambda_grid.is_empty() || self.krr.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(
                "krr.lambda_grid must be non-empty and non-negative".into(),
            ));
        }
        if let Some(s) = &self.split {
            if s.seeds.is_empty() {
                return Err(Error::Config("split.seeds must not be empty".into()));
            }
        }
        Ok(())
    }

    pub fn require_split(&self) -> Result<&SplitConfig> {
        self.split
            .as_ref()
            .ok_or_else(|| Error::Config("a [split] section is required".into()))
    }

    pub fn require_targets(&self) -> Result<&Path> {
        if self.properties.is_empty() {
            return Err(Error::Config("no properties configured".into()));
        }
        self.targets
            .as_deref()
            .ok_or_else(|| Error::Config("no target file configured".into()))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        Dataset::read(&self.representation.path, self.representation.kind)
    }
}

/// Representation kinds each kernel family accepts.
pub fn check_kind(kind: RepresentationKind, kernel: &KernelConfig) -> Result<()> {
    let ok = match kind {
        RepresentationKind::Local => kernel.local,
        RepresentationKind::Fingerprint => !kernel.local,
        RepresentationKind::Feature => !kernel.local && !kernel.family.is_fingerprint(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "kernel {} cannot be used with {kind:?} representations",
            kernel.label()
        )))
    }
}
