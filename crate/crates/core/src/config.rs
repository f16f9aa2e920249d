//! Global configuration: one TOML file with nested sections. Unknown keys
//! are rejected so typos fail loudly, and the schema carries a taxonomy
//! version so checkpoints and configs from a different class list cannot be
//! mixed silently.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{AugmentSpec, OversampleSpec, SplitSpec};
use crate::dicom::VendorMap;
use crate::error::{Error, Result};
use crate::labeling::LabelMap;
use crate::training::TrainConfig;

/// Schema version: 17 sequence classes x 10 plane classes, revision 1.
pub const TAXONOMY_VERSION: &str = "seq17-plane10-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub vendor_map: VendorMap,
    /// Path to a label-rule file; `None` uses the built-in default rules.
    pub label_map_path: Option<PathBuf>,
    pub split: SplitSpec,
    pub oversample: OversampleSpec,
    pub augment: AugmentSpec,
    pub train: TrainConfig,
    pub taxonomy_version: String,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            vendor_map: VendorMap::default(),
            label_map_path: None,
            split: SplitSpec::default(),
            oversample: OversampleSpec::default(),
            augment: AugmentSpec::default(),
            train: TrainConfig::default(),
            taxonomy_version: TAXONOMY_VERSION.to_string(),
        }
    }
}

impl GlobalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taxonomy_version != TAXONOMY_VERSION {
            return Err(Error::Config(format!(
                "taxonomy_version {:?} does not match this build ({TAXONOMY_VERSION:?})",
                self.taxonomy_version
            )));
        }
        if self.vendor_map.rules.is_empty() {
            return Err(Error::Config("vendor_map.rules must not be empty".into()));
        }
        self.split.validate()?;
        self.oversample.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GlobalConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Point every stage's seed at one value (the `--seed` override).
    pub fn apply_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.oversample.seed = seed;
        self.augment.seed = seed;
        self.train.seed = seed;
        self.train.oversample.seed = seed;
        self.train.augment.seed = seed;
    }

    /// The training config with the top-level `[oversample]` and
    /// `[augment]` sections substituted in, so those sections are the single
    /// source of truth for a full pipeline run.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.oversample = self.oversample;
        t.augment = self.augment;
        t
    }

    /// The label rules: from `label_map_path` if set, else the built-ins.
    pub fn load_label_map(&self) -> Result<LabelMap> {
        match &self.label_map_path {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                LabelMap::parse(&text, &path.display().to_string())
            }
            None => Ok(LabelMap::default_rules()),
        }
    }
}
