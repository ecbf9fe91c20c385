//! Run configuration files and the shipped hyperparameter profiles.
//!
//! Files are TOML with one table per stage:
//!
//! ```toml
//! [run]
//! pe = "adjacency"
//! seeds = [0, 1, 2]
//!
//! [model]
//! layers_p = 2
//! lr = 0.001
//!
//! [kge]
//! dim = 400
//!
//! [lp]
//! alpha = 0.5
//! ```
//!
//! Every key is optional and falls back to the `paper-defaults` profile.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::LpConfig;
use crate::kge::KgeConfig;
use crate::mlap::{GlinkxConfig, PeMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("{key} = {value} lies outside the published sweep grid")]
    OffGrid { key: &'static str, value: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub pe: PeMode,
    pub seeds: Vec<u64>,
    /// Also report binary AUC on two-class tasks.
    pub auc: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            pe: PeMode::Adjacency,
            seeds: (0..10).collect(),
            auc: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: GlinkxConfig,
    pub kge: KgeConfig,
    pub lp: LpConfig,
}

/// Published per-dataset selections: `(dataset, pe, layers_p, layers_x,
/// layers_agg, lr)`; dropout is 0.5 and embeddings have 400 dimensions
/// throughout.
const PUBLISHED_ROWS: &[(&str, PeMode, usize, usize, usize, f64)] = &[
    ("arxiv-year", PeMode::Adjacency, 1, 2, 1, 0.001),
    ("pubmed", PeMode::Adjacency, 1, 2, 1, 0.001),
    ("squirrel", PeMode::Adjacency, 2, 1, 1, 0.001),
    ("yelp-chi", PeMode::Adjacency, 2, 2, 1, 0.01),
    ("arxiv-year", PeMode::Kge, 2, 1, 1, 0.01),
    ("ogbn-arxiv", PeMode::Kge, 2, 2, 2, 0.001),
    ("pubmed", PeMode::Kge, 2, 2, 2, 0.01),
    ("squirrel", PeMode::Kge, 2, 1, 2, 0.001),
    ("yelp-chi", PeMode::Kge, 2, 2, 2, 0.01),
];

fn mode_name(pe: PeMode) -> &'static str {
    match pe {
        PeMode::Adjacency => "adjacency",
        PeMode::Kge => "kge",
    }
}

impl RunConfig {
    /// Names accepted by [`RunConfig::profile`].
    pub fn profile_names() -> Vec<String> {
        std::iter::once("paper-defaults".to_string())
            .chain(PUBLISHED_ROWS.iter().map(|r| format!("{}-{}", r.0, mode_name(r.1))))
            .collect()
    }

    /// `paper-defaults`, or `<dataset>-<adjacency|kge>` for a published row.
    pub fn profile(name: &str) -> Result<RunConfig, ConfigError> {
        if name == "paper-defaults" {
            return Ok(RunConfig::default());
        }
        let row = PUBLISHED_ROWS
            .iter()
            .find(|r| format!("{}-{}", r.0, mode_name(r.1)) == name)
            .ok_or_else(|| ConfigError::UnknownProfile(name.into()))?;
        let mut cfg = RunConfig::default();
        cfg.run.pe = row.1;
        cfg.model.layers_p = row.2;
        cfg.model.layers_x = row.3;
        cfg.model.layers_agg = row.4;
        cfg.model.lr = row.5;
        cfg.model.dropout = 0.5;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config has only plain fields")
    }

    /// Checks the model section against the published sweeps: one or two
    /// layers per branch, dropout 0.5 and a learning rate from
    /// `{0.1, 0.01, 0.001}`.
    pub fn check_paper_grid(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        for (key, v) in [("layers_x", m.layers_x), ("layers_p", m.layers_p), ("layers_agg", m.layers_agg)] {
            if !(1..=2).contains(&v) {
                return Err(ConfigError::OffGrid { key, value: v.to_string() });
            }
        }
        if m.dropout != 0.5 {
            return Err(ConfigError::OffGrid {
                key: "dropout",
                value: m.dropout.to_string(),
            });
        }
        if ![0.1, 0.01, 0.001].contains(&m.lr) {
            return Err(ConfigError::OffGrid {
                key: "lr",
                value: m.lr.to_string(),
            });
        }
        if !(0.01..=0.99).contains(&self.lp.alpha) || !(1..=2).contains(&self.lp.hops) {
            return Err(ConfigError::OffGrid {
                key: "lp",
                value: format!("alpha {} hops {}", self.lp.alpha, self.lp.hops),
            });
        }
        Ok(())
    }
}
