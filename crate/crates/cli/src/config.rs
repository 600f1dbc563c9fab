//! TOML config file covering data, synthesis and training settings.

use std::fs;
use std::path::{Path, PathBuf};

use mtnet_core::data::{SplitSpec, SynthConfig};
use mtnet_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset directory; falls back to `MTNET_DATA_ROOT`.
    pub root: Option<PathBuf>,
    pub split: SplitSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub data: DataSection,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

/// Splits a `a; b; c` message from core validation into separate problems.
fn push_problems(out: &mut Vec<String>, section: &str, err: mtnet_core::Error) {
    let msg = match err {
        mtnet_core::Error::Config(m) => m,
        other => other.to_string(),
    };
    out.extend(msg.split("; ").map(|p| format!("{section}: {p}")));
}

impl CliConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            problems: vec![e.message().to_string()],
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::parse(&text, path)?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    /// Loads `path` if given, else the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Reports every invalid field at once.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.data.split.train_fraction) {
            problems.push(format!("data: split.train_fraction must be in [0, 1], got {}", self.data.split.train_fraction));
        }
        if let Err(e) = self.synth.validate() {
            push_problems(&mut problems, "synth", e);
        }
        if let Err(e) = self.train.validate() {
            push_problems(&mut problems, "train", e);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config { path: path.to_path_buf(), problems })
        }
    }
}

/// `--flag`, then the config value, then `MTNET_DATA_ROOT`.
pub fn data_root(flag: Option<PathBuf>, config: &CliConfig) -> Result<PathBuf> {
    flag.or_else(|| config.data.root.clone())
        .or_else(|| std::env::var_os("MTNET_DATA_ROOT").map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("no dataset root: pass --data, set data.root or MTNET_DATA_ROOT".into()))
}
