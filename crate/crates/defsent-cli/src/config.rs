//! The run configuration: a TOML document mirrored by command-line flags.
//!
//! Values resolve in three layers, each overriding the one below:
//! built-in defaults, then the `--config` file, then explicit flags.
//! Every report embeds the resolved configuration so a result can always
//! be traced back to the exact settings that produced it.

use std::path::{Path, PathBuf};

use defsent::model::ModelConfig;
use defsent::train::TrainConfig;
use defsent::PoolingStrategy;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One reproducible run as a serializable document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Encoder architecture. `vocab_size` acts as a budget when the
    /// vocabulary is built from a corpus and is rewritten to the size
    /// actually built.
    #[serde(default)]
    pub model: ModelConfig,
    /// Optimization settings shared by pretraining and fine-tuning.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    /// Directory that receives checkpoints, logs, and reports.
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    /// Seeds for multi-seed fine-tuning; `train.seed` alone when absent.
    pub seeds: Option<Vec<u64>>,
    /// Pooling strategy for the whole run; `train.pooling` when absent.
    pub pooling: Option<PoolingStrategy>,
}

/// Input locations and the dictionary split weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Plain-text pretraining corpus, one sentence per line.
    pub corpus: Option<PathBuf>,
    /// Word/definition dictionary, tab-separated or JSON lines.
    pub dictionary: Option<PathBuf>,
    /// Train/dev/test weights for the word-level dictionary split.
    #[serde(default = "defaults::split")]
    pub split: (u32, u32, u32),
}

mod defaults {
    use std::path::PathBuf;

    pub fn output_dir() -> PathBuf {
        PathBuf::from("out")
    }

    pub fn split() -> (u32, u32, u32) {
        (8, 1, 1)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            output_dir: defaults::output_dir(),
            seeds: None,
            pooling: None,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: None,
            dictionary: None,
            split: defaults::split(),
        }
    }
}

impl RunConfig {
    /// The seeds this run covers, falling back to the single train seed.
    pub fn effective_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(seeds) => seeds.clone(),
            None => vec![self.train.seed],
        }
    }

    /// The pooling strategy in force, falling back to the train section.
    pub fn effective_pooling(&self) -> PoolingStrategy {
        self.pooling.unwrap_or(self.train.pooling)
    }

    /// Fills the optional whole-run fields with their effective values and
    /// copies them down into the train section, so the embedded document
    /// states exactly what ran.
    pub fn resolve(&mut self) {
        let pooling = self.effective_pooling();
        self.pooling = Some(pooling);
        self.train.pooling = pooling;
        let seeds = self.effective_seeds();
        self.train.seed = seeds[0];
        self.seeds = Some(seeds);
    }

    /// Rejects configurations no command could run.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(CliError::Config {
                    detail: "seeds list must not be empty".to_string(),
                });
            }
        }
        let (train, dev, test) = self.data.split;
        if train == 0 || train as u64 + dev as u64 + test as u64 == 0 {
            return Err(CliError::Config {
                detail: format!(
                    "data.split must give the train part a positive weight, got ({train}, {dev}, {test})"
                ),
            });
        }
        self.train.validate().map_err(CliError::Train)
    }
}

/// Loads the config file when one is named, otherwise starts from defaults.
pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|err| CliError::Config {
        detail: format!("{}: {err}", path.display()),
    })
}

/// A `--seeds` flag value; exists so clap parses the whole list as one
/// argument instead of accumulating repeated occurrences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl std::str::FromStr for SeedList {
    type Err = String;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        parse_seed_list(text).map(SeedList)
    }
}

/// Parses a seed list: comma-separated entries, each a single seed or an
/// inclusive `a..b` range, so `1,3,5..8` means 1, 3, 5, 6, 7, 8.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(format!("empty entry in seed list '{text}'"));
        }
        if let Some((lo, hi)) = part.split_once("..") {
            let hi = hi.trim();
            let hi = hi.strip_prefix('=').unwrap_or(hi);
            let lo: u64 = lo
                .trim()
                .parse()
                .map_err(|_| format!("seed range '{part}' has a bad start"))?;
            let hi: u64 = hi
                .parse()
                .map_err(|_| format!("seed range '{part}' has a bad end"))?;
            if hi < lo {
                return Err(format!("seed range '{part}' runs backwards"));
            }
            seeds.extend(lo..=hi);
        } else {
            seeds.push(
                part.parse()
                    .map_err(|_| format!("bad seed '{part}'"))?,
            );
        }
    }
    Ok(seeds)
}
