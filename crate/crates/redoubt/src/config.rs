//! The run configuration: one TOML file (or all defaults) describing a
//! reproducible run. Command-line flags override file values; the
//! effective config is snapshotted into the output directory so any run
//! can be replayed from its artifacts alone.

use crate::data::default_data_dir;
use crate::error::{Error, Result};
use crate::eval::{AttackSpec, Denominator};
use crate::models::ArchConfig;
use crate::train::TrainingConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// MNIST directory. Resolution order: --data flag, this field,
    /// REDOUBT_DATA_DIR, then `data/mnist`.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Overrides training.seed when set (the --seed flag lands here).
    pub seed: Option<u64>,
    /// Reduced schedule for smoke runs; see TrainingConfig::apply_fast.
    pub fast: bool,
    /// Number of leading test images campaigns evaluate.
    pub slice: usize,
    pub denominator: Denominator,
    pub arch: ArchConfig,
    pub training: TrainingConfig,
    /// Campaigns run by `attack` when no --attack flag narrows it down.
    pub attacks: Vec<AttackSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: None,
            out_dir: PathBuf::from("runs/default"),
            seed: None,
            fast: false,
            slice: 1000,
            denominator: Denominator::Correct,
            arch: ArchConfig::default(),
            training: TrainingConfig::default(),
            attacks: AttackSpec::standard_suite(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.slice == 0 {
            return Err(Error::Data("slice must be at least 1".into()));
        }
        if self.attacks.is_empty() {
            return Err(Error::Data("attacks list must not be empty".into()));
        }
        Ok(())
    }

    /// Training schedule with the run-level seed and fast flag applied.
    pub fn training_effective(&self) -> TrainingConfig {
        let mut t = self.training.clone();
        if let Some(seed) = self.seed {
            t.seed = seed;
        }
        if self.fast {
            t.apply_fast();
        }
        t
    }

    pub fn data_dir_effective(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(default_data_dir)
    }

    /// The campaign seed; distinct streams per image are derived from it.
    pub fn seed_effective(&self) -> u64 {
        self.seed.unwrap_or(self.training.seed)
    }

    /// Writes the effective config where the output layout expects it.
    pub fn snapshot(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Report(format!("config snapshot: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
