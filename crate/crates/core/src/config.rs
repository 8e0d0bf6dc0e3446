//! Declarative experiment configuration (TOML).
//!
//! ```toml
//! runs = 5
//! method = "proposed"          # proposed | baseline-mmmf | global-mean
//! output_dir = "out"
//!
//! [source]
//! path = "data/ml-100k/u.data"
//! format = "tab"
//!
//! [target]
//! path = "data/ml-100k/u.data"
//! format = "tab"
//!
//! [cocluster]
//! k1 = 125
//! k2 = 125
//!
//! [transfer]
//! lambda = 0.5
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cocluster::CoClusterConfig;
use crate::codebook::AveragingMode;
use crate::error::{Error, Result};
use crate::eval::{ColdStart, Method, ProtocolConfig, SplitSpec};
use crate::ingest::{resolve, DatasetSpec};
use crate::transfer::TransferConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub cold_start: ColdStart,
    #[serde(default)]
    pub averaging: AveragingMode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub source: DatasetSpec,
    pub target: DatasetSpec,
    pub cocluster: CoClusterConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default)]
    pub split: SplitSpec,
}

fn default_runs() -> usize {
    5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.source.path = resolve(base, &cfg.source.path);
        cfg.target.path = resolve(base, &cfg.target.path);
        cfg.output_dir = resolve(base, &cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        for spec in [&self.source, &self.target] {
            if spec.id_base > 1 {
                return Err(Error::InvalidConfig("id_base must be 0 or 1".into()));
            }
        }
        if self.transfer.r_max != self.target.r_max {
            return Err(Error::InvalidConfig(format!(
                "transfer.r_max = {} but target.r_max = {}",
                self.transfer.r_max, self.target.r_max
            )));
        }
        if self.cocluster.k1 == 0 || self.cocluster.k2 == 0 {
            return Err(Error::InvalidConfig("k1 and k2 must be at least 1".into()));
        }
        self.split.validate()?;
        self.transfer.validate()
    }

    /// Sets every seed in the configuration to `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.cocluster.seed = seed;
        self.transfer.seed = seed;
    }

    pub fn protocol(&self, serial: bool) -> ProtocolConfig {
        ProtocolConfig {
            cocluster: self.cocluster.clone(),
            averaging: self.averaging,
            transfer: self.transfer.clone(),
            split: self.split.clone(),
            runs: self.runs,
            method: self.method,
            cold_start: self.cold_start,
            serial,
        }
    }
}
