use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::{
    gen_hierarchical, gen_shortcut, load_idx, read_columnar, Dataset, HierarchicalSpec, ShortcutCell, ShortcutSpec,
};
use crate::error::{Error, Result};
use crate::grouping::RegWeights;
use crate::probes::CompressionConfig;
use crate::splitnet::Stage1Options;
use crate::tensor::TrainConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Performance,
    Imbalance,
    SampleEfficiency,
    Shortcut,
    Flatness,
    Compression,
    GroupingRecovery,
}

impl ExperimentKind {
    /// Name of the swept grid axis.
    pub fn grid_axis(self) -> &'static str {
        match self {
            Self::Imbalance => "gamma",
            Self::SampleEfficiency => "percent",
            _ => "setting",
        }
    }
}

/// Where training and test data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Generated per seed; the test split is drawn from the same geometry.
    Hierarchical {
        #[serde(flatten)]
        spec: HierarchicalSpec,
        test_per_class: usize,
    },
    /// Generated per seed with an annotated four-cell test split.
    Shortcut {
        #[serde(flatten)]
        spec: ShortcutSpec,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Columnar {
        train: PathBuf,
        test: PathBuf,
    },
}

/// Train/test pair for one seed, with cell annotations when available.
#[derive(Clone, Debug)]
pub struct DataSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub test_cells: Option<Vec<ShortcutCell>>,
    /// Class-to-supercluster map for generated hierarchical data.
    pub ground_truth: Option<Vec<usize>>,
}

impl DatasetConfig {
    /// Loads or generates the data; features are standardized with
    /// training-split statistics.
    pub fn materialize(&self, seed: u64) -> Result<DataSplit> {
        let mut split = match self {
            Self::Hierarchical { spec, test_per_class } => {
                let data = gen_hierarchical(spec, seed)?;
                DataSplit {
                    test: data.test_split(*test_per_class),
                    ground_truth: Some(data.ground_truth.clone()),
                    train: data.dataset,
                    test_cells: None,
                }
            }
            Self::Shortcut { spec } => {
                let data = gen_shortcut(spec, seed)?;
                DataSplit {
                    train: data.train,
                    test: data.test,
                    test_cells: Some(data.test_cells),
                    ground_truth: None,
                }
            }
            Self::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => DataSplit {
                train: load_idx(train_images, train_labels)?,
                test: load_idx(test_images, test_labels)?,
                test_cells: None,
                ground_truth: None,
            },
            Self::Columnar { train, test } => {
                let open = |p: &PathBuf| -> Result<Dataset> {
                    let file = std::io::BufReader::new(std::fs::File::open(p)?);
                    read_columnar(file, &p.display().to_string())
                };
                DataSplit {
                    train: open(train)?,
                    test: open(test)?,
                    test_cells: None,
                    ground_truth: None,
                }
            }
        };
        if split.train.classes() != split.test.classes() || split.train.input_dim() != split.test.input_dim() {
            return Err(Error::Input(
                "train and test splits disagree on classes or width".into(),
            ));
        }
        let stats = split.train.normalize_in_place()?;
        split.test.apply_normalization(&stats)?;
        Ok(split)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Hidden ReLU widths; the last one is the split-layer feature count.
    pub hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden: vec![32] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub groups: usize,
    pub reg: RegWeights,
    pub assignment_init_scale: f64,
    pub assignment_lr_scale: f64,
    pub assignment_epsilon: f64,
    /// Share of the epoch budget spent in stage 1.
    pub stage1_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s1 = Stage1Options::default();
        Self {
            groups: s1.groups,
            reg: s1.reg,
            assignment_init_scale: s1.assignment_init_scale,
            assignment_lr_scale: s1.assignment_lr_scale,
            assignment_epsilon: s1.assignment_epsilon,
            stage1_fraction: 0.5,
        }
    }
}

impl SplitConfig {
    pub fn stage1_options(&self) -> Stage1Options {
        Stage1Options {
            groups: self.groups,
            reg: self.reg,
            assignment_init_scale: self.assignment_init_scale,
            assignment_lr_scale: self.assignment_lr_scale,
            assignment_epsilon: self.assignment_epsilon,
        }
    }

    /// Stage 1 and stage 2 configs; epochs are split by `stage1_fraction`
    /// (rounded to nearest, ties to even) and both stages keep the schedule.
    pub fn stage_configs(&self, train: &TrainConfig) -> (TrainConfig, TrainConfig) {
        let e1 = (train.epochs as f64 * self.stage1_fraction).round_ties_even() as usize;
        let s1 = TrainConfig {
            epochs: e1,
            ..train.clone()
        };
        let s2 = TrainConfig {
            epochs: train.epochs - e1,
            ..train.clone()
        };
        (s1, s2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub gammas: Vec<f64>,
    pub n_max: usize,
    pub n_min: usize,
    pub percents: Vec<f64>,
    pub stratified: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            gammas: vec![2.0, 1.0, 0.6, 0.2],
            n_max: 500,
            n_min: 25,
            percents: vec![100.0, 50.0, 20.0, 10.0, 5.0, 1.0],
            stratified: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatnessConfig {
    pub sigmas: Vec<f64>,
    pub trials: usize,
}

impl Default for FlatnessConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2],
            trials: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub kind: ExperimentKind,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub flatness: FlatnessConfig,
    #[serde(default)]
    pub compression: CompressionConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

const REQUIRED: [&str; 4] = ["schema_version", "name", "kind", "dataset"];

/// Lists every field in `required` that `value` (a JSON object) lacks.
pub(crate) fn missing_fields(value: &Value, required: &[&str]) -> Vec<String> {
    match value.as_object() {
        Some(obj) => required
            .iter()
            .filter(|k| !obj.contains_key(**k))
            .map(|k| k.to_string())
            .collect(),
        None => required.iter().map(|k| k.to_string()).collect(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let missing = missing_fields(&value, &REQUIRED);
        if !missing.is_empty() {
            return Err(Error::Schema { missing });
        }
        let version = value["schema_version"].as_u64();
        if version != Some(CONFIG_SCHEMA_VERSION as u64) {
            return Err(Error::Version(format!(
                "config schema {}, expected {CONFIG_SCHEMA_VERSION}",
                value["schema_version"]
            )));
        }
        let config: Self = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 over the compact serialization of the parsed config, so
    /// formatting differences in the source file do not change it.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.split.reg.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(Error::Config("network.hidden needs at least one positive width".into()));
        }
        if !(self.split.stage1_fraction > 0.0 && self.split.stage1_fraction < 1.0) {
            return Err(Error::Config("split.stage1_fraction must lie in (0, 1)".into()));
        }
        match self.kind {
            ExperimentKind::Imbalance if self.grid.gammas.is_empty() => {
                return Err(Error::Config("imbalance grid needs gammas".into()))
            }
            ExperimentKind::SampleEfficiency
                if self.grid.percents.is_empty() || self.grid.percents.iter().any(|p| !(*p > 0.0 && *p <= 100.0)) =>
            {
                return Err(Error::Config("percents must be nonempty and lie in (0, 100]".into()))
            }
            ExperimentKind::Shortcut if !matches!(self.dataset, DatasetConfig::Shortcut { .. }) => {
                return Err(Error::Config("shortcut experiments need a shortcut dataset".into()))
            }
            ExperimentKind::GroupingRecovery if !matches!(self.dataset, DatasetConfig::Hierarchical { .. }) => {
                return Err(Error::Config("grouping recovery needs a hierarchical dataset".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "name": "t",
        "kind": "performance",
        "dataset": {"source": "hierarchical", "n_per_class": 20, "test_per_class": 10}
    }"#;

    #[test]
    fn round_trip_is_lossless() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn missing_fields_are_all_listed() {
        match ExperimentConfig::from_json(r#"{"name": "x"}"#).unwrap_err() {
            Error::Schema { missing } => assert_eq!(missing, ["schema_version", "kind", "dataset"]),
            e => panic!("{e}"),
        }
        let wrong = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(ExperimentConfig::from_json(&wrong), Err(Error::Version(_))));
    }

    #[test]
    fn stage_split_is_half_by_default() {
        let (a, b) = SplitConfig::default().stage_configs(&TrainConfig::default());
        assert_eq!((a.epochs, b.epochs), (50, 50));
    }
}
