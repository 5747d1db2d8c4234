//! Run configuration: a TOML file, command-line overrides on top.

use std::path::{Path, PathBuf};

use rationale_core::causal::CausalSpec;
use rationale_core::corpus::DatasetFormat;
use rationale_core::criteria::Criterion;
use rationale_core::synthetic::GenConfig;
use rationale_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Default parent directory for artifacts when `--out` is not given.
pub const OUT_DIR_ENV: &str = "RATIONALE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset id used in reports.
    pub name: Option<String>,
    /// Output directory of an earlier `gen-data` run.
    pub dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: DatasetFormat,
    /// `lexicon.json` naming the spurious tokens (needed by mmi+penalty).
    pub lexicon: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            name: None,
            dir: None,
            train: None,
            dev: None,
            test: None,
            format: DatasetFormat::JsonlSpans,
            lexicon: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Causal spec (TOML); the bundled toy network when unset.
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Seeds to train; `train.seed` alone when empty.
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub generate: GenConfig,
    pub train: TrainConfig,
}

/// Flag values that replace file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub sparsity: Option<f64>,
    pub criterion: Option<Criterion>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the shared overrides. `--seed` picks the single training seed.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
            self.seeds = vec![seed];
        }
        if let Some(s) = o.sparsity {
            self.train.criterion.sparsity = s;
        }
        if let Some(c) = o.criterion {
            self.train.criterion.criterion = c;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn causal_spec(&self) -> Result<CausalSpec, Failure> {
        match &self.spec {
            None => Ok(CausalSpec::toy()),
            Some(p) => load_spec(p),
        }
    }

    pub fn out_dir(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| default_out(command))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# config not representable as TOML: {e}\n"))
    }
}

pub fn load_spec(path: &Path) -> Result<CausalSpec, Failure> {
    CausalSpec::load(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

pub fn default_out(command: &str) -> PathBuf {
    let base = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_OUT_DIR.into());
    base.join(command)
}
