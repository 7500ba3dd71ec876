use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nvkm::data::{gen_synthetic_with, load_csv, split, standardize, CsvSchema, SplitSpec, Standardization, SyntheticConfig, TimeSeriesDataset};
use nvkm::inference::TrainingConfig;
use nvkm::model::ModelConfig;
use nvkm::NvkmError;

/// A complete experiment description. Only `data.source` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives model initialisation and training; overrides the seeds of the
    /// model and training blocks.
    #[serde(default)]
    pub seed: u64,
    /// Overrides `model.io_mode`.
    #[serde(default)]
    pub io_mode: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub search: SearchConfig,
    pub data: DataBlock,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("nvkm-run")
}

/// Outer loop over VK ranges, selected by training NLPD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Explicit candidate ranges; when empty, `--range-search k` draws `k`
    /// ranges uniformly from `range_bounds`.
    pub ranges: Vec<f64>,
    pub range_bounds: [f64; 2],
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            ranges: Vec::new(),
            range_bounds: [0.5, 3.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default)]
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    pub source: SourceKind,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub csv: Option<CsvSource>,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_split() -> SplitSpec {
    SplitSpec::RandomFraction {
        fraction: 1.0 / 3.0,
        seed: 0,
    }
}

fn default_true() -> bool {
    true
}

/// Configuration problems that are the caller's fault.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Syntax {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        // CSV paths are relative to the config file.
        if let Some(csv) = cfg.data.csv.as_mut() {
            if csv.path.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                csv.path = base.join(&csv.path);
            }
        }
        if cfg.data.source == SourceKind::Csv && cfg.data.csv.is_none() {
            return Err(ConfigError::Invalid("data.source = \"csv\" needs a [data.csv] block with a path".into()));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }
}

/// Training and test sets in the units the model sees, with the test set
/// also kept in original units for metrics.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Training data in original units.
    pub train_raw: TimeSeriesDataset,
    /// Training data as fitted (standardised if requested).
    pub train: TimeSeriesDataset,
    /// Test data in original units.
    pub test: TimeSeriesDataset,
    pub standardization: Option<Standardization>,
}

pub fn load_dataset(block: &DataBlock) -> nvkm::Result<TimeSeriesDataset> {
    match block.source {
        SourceKind::Synthetic => Ok(gen_synthetic_with(&block.synthetic)?.dataset),
        SourceKind::Csv => {
            let csv = block
                .csv
                .as_ref()
                .ok_or_else(|| NvkmError::InvalidArgument("csv source without a [data.csv] block".into()))?;
            load_csv(&csv.path, &csv.schema)
        }
    }
}

pub fn prepare_data(block: &DataBlock, ds: &TimeSeriesDataset) -> nvkm::Result<PreparedData> {
    let (train_raw, test) = split(ds, &block.split)?;
    let (train, standardization) = if block.standardize {
        let (t, s) = standardize(&train_raw)?;
        (t, Some(s))
    } else {
        (train_raw.clone(), None)
    };
    Ok(PreparedData {
        train_raw,
        train,
        test,
        standardization,
    })
}

/// Fills in everything derived from the data and the top-level settings,
/// so that the echoed configuration reproduces the run on its own.
pub fn resolve(cfg: &RunConfig, full: &TimeSeriesDataset, train: &TimeSeriesDataset) -> RunConfig {
    let mut out = cfg.clone();
    out.model.seed = cfg.seed;
    out.training.seed = cfg.seed;
    out.model.io_mode = cfg.io_mode;
    out.model.outputs = full.num_outputs();
    if out.model.time_span.is_none() {
        out.model.time_span = full.time_span();
    }
    if out.model.points_per_output.is_none() {
        out.model.points_per_output = Some(train.max_points_per_output());
    }
    if let Some(csv) = out.data.csv.as_mut() {
        if let Ok(abs) = std::fs::canonicalize(&csv.path) {
            csv.path = abs;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg: RunConfig = toml::from_str("[data]\nsource = \"synthetic\"\n").unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.training, TrainingConfig::default());
        assert!(cfg.data.standardize);
        assert_eq!(cfg.output_dir, PathBuf::from("nvkm-run"));
    }

    #[test]
    fn data_source_is_required() {
        assert!(toml::from_str::<RunConfig>("seed = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("[data]\nsource = \"parquet\"\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[data]\nsource = \"synthetic\"\n[model]\nordre = 2\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let text = "seed = 4\n[model]\norder = 2\nvk_range = 1.5\n[data]\nsource = \"synthetic\"\n[data.synthetic]\nn = 60\n[data.split]\nmode = \"contiguous-block\"\nblocks = [{ output = 0, len = 10 }]\n";
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
