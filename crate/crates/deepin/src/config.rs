//! TOML experiment configuration.
//!
//! Every section and field is optional; missing values take the defaults
//! below. Unknown keys are rejected. Index sets are 1-based, matching the
//! `x1..xd` column names.
//!
//! ```toml
//! seed = 7
//! replications = 10
//! method = "deepin"          # or "vanilla-dnn", "index-model(3)"
//!
//! [data]
//! source = "synthetic"       # or "csv" with `path`, `response`, `task`
//! setting = 1
//! n = 4000
//! n_test = 4000
//! d = 50
//!
//! [model]
//! hidden = [32, 32]
//!
//! [penalty]
//! lambda1 = 0.01
//! lambda2 = 0.01
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use deepin_core::datagen::{CorrelationScheme, Setting, SyntheticSpec};
use deepin_core::inference::{CondMeanOptions, CovariateTestOptions, RepresentationTestOptions};
use deepin_core::trainer::{Thresholds, TuneGrids};
use deepin_core::{PenaltyConfig, Task, TrainOptions};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::model_file::TaskName;

/// The estimator a benchmark fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// The full penalized model.
    #[default]
    DeepIn,
    /// `B` frozen at the identity and every penalty off.
    VanillaDnn,
    /// `B` with `k` rows and the row penalty off.
    IndexModel(usize),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::DeepIn => write!(f, "deepin"),
            Method::VanillaDnn => write!(f, "vanilla-dnn"),
            Method::IndexModel(k) => write!(f, "index-model({k})"),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "deepin" => Ok(Method::DeepIn),
            "vanilla-dnn" => Ok(Method::VanillaDnn),
            _ => {
                let k = s
                    .strip_prefix("index-model(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|k| k.trim().parse::<usize>().ok())
                    .filter(|k| *k > 0)
                    .ok_or_else(|| format!("unknown method `{s}`; expected deepin, vanilla-dnn or index-model(k)"))?;
                Ok(Method::IndexModel(k))
            }
        }
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    #[default]
    Equicorrelated,
    Ar1,
}

/// Where the data come from. Synthetic fields left unset take the setting's
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub setting: u8,
    pub n: Option<usize>,
    /// Extra rows drawn alongside the training rows and held out for
    /// prediction metrics.
    pub n_test: usize,
    pub d: Option<usize>,
    pub rho: f64,
    pub scheme: SchemeName,
    pub s0: Option<usize>,
    pub d0: Option<usize>,
    pub noise_sd: Option<f64>,
    pub signal_scale: Option<f64>,
    pub path: Option<PathBuf>,
    pub response: String,
    pub task: TaskName,
    /// Fraction of CSV rows held out per replication.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            setting: 1,
            n: None,
            n_test: 1000,
            d: None,
            rho: 0.0,
            scheme: SchemeName::Equicorrelated,
            s0: None,
            d0: None,
            noise_sd: None,
            signal_scale: None,
            path: None,
            response: "y".into(),
            task: TaskName::Regression,
            test_fraction: 0.2,
        }
    }
}

impl DataConfig {
    /// Generator settings for `n` training rows plus `n_test` held-out rows.
    pub fn synthetic_spec(&self, seed: u64) -> Result<SyntheticSpec> {
        let setting = Setting::from_index(self.setting)?;
        let base = SyntheticSpec::new(setting);
        let spec = SyntheticSpec {
            n: self.n.unwrap_or(base.n) + self.n_test,
            d: self.d.unwrap_or(base.d),
            rho: self.rho,
            scheme: match self.scheme {
                SchemeName::Equicorrelated => CorrelationScheme::Equicorrelated,
                SchemeName::Ar1 => CorrelationScheme::Ar1,
            },
            s0: self.s0.unwrap_or(base.s0),
            d0: self.d0.unwrap_or(base.d0),
            noise_sd: self.noise_sd.unwrap_or(base.noise_sd),
            signal_scale: self.signal_scale.unwrap_or(base.signal_scale),
            seed,
            ..base
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_train(&self) -> usize {
        self.n.unwrap_or_else(|| SyntheticSpec::new(Setting::Additive).n)
    }

    pub fn task(&self) -> Result<Task> {
        match self.source {
            DataSource::Synthetic => Ok(Setting::from_index(self.setting)?.task()),
            DataSource::Csv => Ok(self.task.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Rows of `B`; defaults to the number of covariates.
    pub rows: Option<usize>,
    pub hidden: Vec<usize>,
    pub power: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            rows: None,
            hidden: vec![32, 32],
            power: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    #[default]
    Relative,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub thresholds: ThresholdRule,
    /// Relative rule factors.
    pub group: f64,
    pub weight: f64,
    /// Fixed rule thresholds.
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
}

impl Default for PenaltySection {
    fn default() -> Self {
        let (group, weight) = match Thresholds::default() {
            Thresholds::Relative { group, weight } => (group, weight),
            Thresholds::Fixed { .. } => (0.0, 0.0),
        };
        PenaltySection {
            lambda1: 0.01,
            lambda2: 0.01,
            lambda3: 0.0,
            lambda4: 0.0,
            thresholds: ThresholdRule::Relative,
            group,
            weight,
            tau1: 0.0,
            tau2: 0.0,
            tau3: 0.0,
        }
    }
}

impl PenaltySection {
    /// No penalty and no truncation.
    pub fn none() -> Self {
        PenaltySection {
            lambda1: 0.0,
            lambda2: 0.0,
            thresholds: ThresholdRule::Fixed,
            ..PenaltySection::default()
        }
    }

    pub fn to_config(&self) -> PenaltyConfig {
        let thresholds = match self.thresholds {
            ThresholdRule::Relative => Thresholds::Relative {
                group: self.group,
                weight: self.weight,
            },
            ThresholdRule::Fixed => Thresholds::Fixed {
                tau1: self.tau1,
                tau2: self.tau2,
                tau3: self.tau3,
            },
        };
        PenaltyConfig::new(self.lambda1, self.lambda2, self.lambda3, self.lambda4).with_thresholds(thresholds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay_every: Option<usize>,
    pub decay_factor: f64,
    pub truncate_every: usize,
    pub warmup: usize,
    /// Largest step norm; `0` disables clipping.
    pub clip_norm: f64,
    pub polish_epochs: usize,
    pub validation_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection::from(&TrainOptions::default())
    }
}

impl From<&TrainOptions> for TrainSection {
    fn from(o: &TrainOptions) -> Self {
        TrainSection {
            epochs: o.epochs,
            batch_size: o.batch_size,
            learning_rate: o.learning_rate,
            momentum: o.momentum,
            decay_every: o.decay_every,
            decay_factor: o.decay_factor,
            truncate_every: o.truncate_every,
            warmup: o.warmup,
            clip_norm: o.clip_norm.unwrap_or(0.0),
            polish_epochs: o.polish_epochs,
            validation_fraction: o.validation_fraction,
        }
    }
}

impl TrainSection {
    pub fn to_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            decay_every: self.decay_every,
            decay_factor: self.decay_factor,
            truncate_every: self.truncate_every,
            warmup: self.warmup,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            polish_epochs: self.polish_epochs,
            freeze_rep: false,
            seed,
            validation_fraction: self.validation_fraction,
        }
    }
}

/// Candidate values for the sequential search over `lambda1..lambda4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSection {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lambda3: Vec<f64>,
    pub lambda4: Vec<f64>,
}

impl Default for TuningSection {
    fn default() -> Self {
        let g = TuneGrids::zeros();
        TuningSection {
            lambda1: g.lambda1,
            lambda2: g.lambda2,
            lambda3: g.lambda3,
            lambda4: g.lambda4,
        }
    }
}

impl TuningSection {
    pub fn to_grids(&self) -> TuneGrids {
        TuneGrids {
            lambda1: self.lambda1.clone(),
            lambda2: self.lambda2.clone(),
            lambda3: self.lambda3.clone(),
            lambda4: self.lambda4.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovariateSection {
    pub enabled: bool,
    pub width_factor: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub floor: f64,
}

impl Default for CovariateSection {
    fn default() -> Self {
        let o = CovariateTestOptions::default();
        CovariateSection {
            enabled: false,
            width_factor: o.cond_mean.width_factor,
            epochs: o.cond_mean.epochs,
            batch_size: o.cond_mean.batch_size,
            learning_rate: o.cond_mean.learning_rate,
            momentum: o.cond_mean.momentum,
            floor: o.floor,
        }
    }
}

impl CovariateSection {
    pub fn to_options(&self, seed: u64) -> CovariateTestOptions {
        CovariateTestOptions {
            cond_mean: CondMeanOptions {
                width_factor: self.width_factor,
                epochs: self.epochs,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                momentum: self.momentum,
                seed,
            },
            floor: self.floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepresentationSection {
    /// 1-based index sets to test, one test per set.
    pub index_sets: Vec<Vec<usize>>,
    /// Rows of `B`; defaults to the `[model]` rows.
    pub rows: Option<usize>,
    pub hidden: Vec<usize>,
    pub split: f64,
    pub penalty: PenaltySection,
    pub train: TrainSection,
}

impl Default for RepresentationSection {
    fn default() -> Self {
        RepresentationSection {
            index_sets: Vec::new(),
            rows: None,
            hidden: vec![8, 8],
            split: 0.5,
            penalty: PenaltySection::none(),
            train: TrainSection {
                epochs: 30,
                polish_epochs: 50,
                ..TrainSection::default()
            },
        }
    }
}

impl RepresentationSection {
    pub fn to_options(&self, rows: usize, power: u32, seed: u64) -> RepresentationTestOptions {
        RepresentationTestOptions {
            rows: self.rows.unwrap_or(rows),
            hidden: self.hidden.clone(),
            power,
            penalty: self.penalty.to_config(),
            train: self.train.to_options(seed),
            split: self.split,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestsSection {
    pub covariate: CovariateSection,
    pub representation: RepresentationSection,
    /// Levels at which rejection rates are reported.
    pub alphas: Vec<f64>,
}

impl Default for TestsSection {
    fn default() -> Self {
        TestsSection {
            covariate: CovariateSection::default(),
            representation: RepresentationSection::default(),
            alphas: vec![0.01, 0.05, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replications: usize,
    pub out: Option<PathBuf>,
    pub method: Method,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub penalty: PenaltySection,
    /// When present, penalties are chosen by validation search.
    pub tuning: Option<TuningSection>,
    pub train: TrainSection,
    pub tests: TestsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            replications: 1,
            out: None,
            method: Method::DeepIn,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            penalty: PenaltySection::default(),
            tuning: None,
            train: TrainSection::default(),
            tests: TestsSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|message| HarnessError::Config {
            path: path.to_path_buf(),
            message,
        })?;
        if let Some(p) = &cfg.data.path {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.data.path = Some(dir.join(p));
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.replications == 0 {
            return Err("replications must be at least 1".into());
        }
        if self.data.source == DataSource::Csv && self.data.path.is_none() {
            return Err("data.source = \"csv\" needs data.path".into());
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err("data.test_fraction must lie in [0, 1)".into());
        }
        if self.tests.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err("tests.alphas must lie in (0, 1)".into());
        }
        for set in &self.tests.representation.index_sets {
            parse_index_set_values(set)?;
        }
        Ok(())
    }
}

/// 1-based indices to sorted, deduplicated 0-based ones.
pub fn parse_index_set_values(set: &[usize]) -> std::result::Result<Vec<usize>, String> {
    if set.contains(&0) {
        return Err("index sets are 1-based; 0 is not a valid index".into());
    }
    let mut out: Vec<usize> = set.iter().map(|k| k - 1).collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Parses a comma-separated 1-based index list such as `1,3,5`.
pub fn parse_index_set(s: &str) -> std::result::Result<Vec<usize>, String> {
    let values = s
        .split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| format!("`{t}` is not an index")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    parse_index_set_values(&values)
}
