//! Experiment configuration: a TOML document overlaid on profile defaults.

use std::path::{Path, PathBuf};

use permalign::matching::{MatchConfig, Method};
use permalign::nn::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DATA_DIR_ENV: &str = "PERMALIGN_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Width-128 models on an MNIST subset.
    #[default]
    Ci,
    /// Three hidden layers of 512 on full MNIST.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Blobs,
    TwoMoons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory of the IDX files. Defaults to `$PERMALIGN_DATA_DIR/<kind>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
    /// Synthetic data only.
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Mnist,
            dir: None,
            train_limit: None,
            test_limit: None,
            n: 1000,
            dim: 8,
            classes: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub lambda_grid: usize,
    pub gammas: Vec<f64>,
    /// Split used for barriers, Taylor estimates, landscapes and input alignment.
    pub eval_split: String,
    /// Keep only the first examples of the evaluation split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_limit: Option<usize>,
    /// Keep only the first training examples for activation matching and STE.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search_limit: Option<usize>,
    pub landscape_resolution: usize,
    pub lipschitz: f64,
    /// Threshold of the large-singular-value ratio reported by `spectrum` and `sweep`.
    pub large_singular_gamma: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            lambda_grid: 25,
            gammas: vec![0.0, 0.3],
            eval_split: "test".into(),
            eval_limit: None,
            search_limit: None,
            landscape_resolution: 15,
            lipschitz: 1.0,
            large_singular_gamma: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Hidden width, applied to every hidden layer of `train.hidden`.
    pub widths: Vec<usize>,
    pub weight_decays: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            widths: vec![32, 64, 128],
            weight_decays: vec![0.0],
            learning_rates: vec![1e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvConfig {
    /// Spatial size of the (square) input.
    pub n: usize,
    /// Channels in and out.
    pub m: usize,
    /// Side of the random kernel before zero padding to `n`.
    pub kernel_size: usize,
    pub seed: u64,
    /// Largest `m·n²` for which the dense singular values are cross-checked.
    pub dense_check_limit: usize,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig {
            n: 8,
            m: 4,
            kernel_size: 3,
            seed: 0,
            dense_check_limit: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub matching: MatchConfig,
    pub analysis: AnalysisConfig,
    pub sweep: SweepConfig,
    pub conv: ConvConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_profile(Profile::Ci)
    }
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut train = TrainConfig::default();
        let mut dataset = DatasetConfig::default();
        let mut analysis = AnalysisConfig::default();
        match profile {
            Profile::Ci => {
                train.hidden = vec![128; 3];
                train.epochs = 10;
                train.batch_size = 128;
                dataset.train_limit = Some(10_000);
                dataset.test_limit = Some(2_000);
            }
            Profile::Paper => {
                analysis.landscape_resolution = 25;
            }
        }
        ExperimentConfig {
            profile,
            output_dir: PathBuf::from("out"),
            seeds: vec![0, 1],
            dataset,
            train,
            matching: MatchConfig::default(),
            analysis,
            sweep: SweepConfig::default(),
            conv: ConvConfig::default(),
        }
    }

    /// Parses `text` over the defaults of the chosen profile and matching
    /// method.
    ///
    /// The arguments win over `profile` and `matching.method` keys in the
    /// document. Matching settings left unset take the method's defaults.
    pub fn from_toml(text: &str, profile: Option<Profile>, method: Option<Method>) -> Result<Self, CliError> {
        let doc: toml::Table = toml::from_str(text).map_err(|e| CliError::ConfigParse(e.to_string()))?;
        let profile = match profile {
            Some(p) => p,
            None => match doc.get("profile") {
                Some(v) => Profile::deserialize(v.clone()).map_err(|e| CliError::ConfigParse(format!("profile: {e}")))?,
                None => Profile::Ci,
            },
        };
        let method = match method {
            Some(m) => m,
            None => match doc.get("matching").and_then(|m| m.get("method")) {
                Some(v) => Method::deserialize(v.clone()).map_err(|e| CliError::ConfigParse(format!("matching.method: {e}")))?,
                None => Method::WmCoord,
            },
        };
        let mut base = ExperimentConfig::for_profile(profile);
        base.matching = MatchConfig::for_method(method);
        let mut merged = toml::Table::try_from(base).expect("defaults serialize");
        overlay(&mut merged, doc);
        merged.insert("profile".into(), toml::Value::try_from(profile).expect("profile serializes"));
        if let Some(toml::Value::Table(m)) = merged.get_mut("matching") {
            m.insert("method".into(), toml::Value::try_from(method).expect("method serializes"));
        }
        let cfg: ExperimentConfig =
            toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| CliError::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Option<Profile>, method: Option<Method>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        ExperimentConfig::from_toml(&text, profile, method)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::ConfigInvalid(m));
        self.train.validate().map_err(|e| CliError::ConfigInvalid(format!("train: {e}")))?;
        self.matching.validate().map_err(|e| CliError::ConfigInvalid(format!("matching: {e}")))?;
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let a = &self.analysis;
        if a.lambda_grid < 3 {
            return bad(format!("analysis.lambda_grid must be at least 3, got {}", a.lambda_grid));
        }
        if let Some(g) = a.gammas.iter().find(|g| !(0.0..1.0).contains(*g)) {
            return bad(format!("analysis.gammas entry {g} outside [0, 1)"));
        }
        if !(0.0..=1.0).contains(&a.large_singular_gamma) {
            return bad(format!("analysis.large_singular_gamma {} outside [0, 1]", a.large_singular_gamma));
        }
        if a.eval_split != "train" && a.eval_split != "test" {
            return bad(format!("analysis.eval_split must be \"train\" or \"test\", got {:?}", a.eval_split));
        }
        if !(a.lipschitz > 0.0 && a.lipschitz.is_finite()) {
            return bad(format!("analysis.lipschitz must be positive, got {}", a.lipschitz));
        }
        if a.landscape_resolution < 2 {
            return bad("analysis.landscape_resolution must be at least 2".into());
        }
        let s = &self.sweep;
        if s.widths.is_empty() || s.weight_decays.is_empty() || s.learning_rates.is_empty() {
            return bad("sweep grids must not be empty".into());
        }
        if s.widths.contains(&0) {
            return bad("sweep.widths must be positive".into());
        }
        let c = &self.conv;
        if c.n == 0 || c.m == 0 || c.kernel_size == 0 || c.kernel_size > c.n {
            return bad(format!("conv needs n, m ≥ 1 and 1 ≤ kernel_size ≤ n, got {c:?}"));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    /// Where the IDX files of the configured dataset live.
    pub fn data_dir(&self) -> PathBuf {
        if let Some(dir) = &self.dataset.dir {
            return dir.clone();
        }
        let root = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
        match self.dataset.kind {
            DatasetKind::FashionMnist => root.join("fashion_mnist"),
            _ => root.join("mnist"),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Recursively replaces entries of `base` by those of `top`.
fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
