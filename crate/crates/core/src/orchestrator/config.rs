//! Run configuration (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendEndpoint, RetryPolicy};
use crate::qametrics::Averaging;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Gold data only.
    Baseline,
    /// One pass over gold mixed with every validated synthetic record.
    Combined,
    /// One pass: every validated synthetic set in stage order, then gold.
    Sequential,
    /// The iterative filter / fine-tune loop.
    Gemquad,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Combined => "combined",
            Self::Sequential => "sequential",
            Self::Gemquad => "gemquad",
        }
    }

    pub fn uses_synthetic(&self) -> bool {
        !matches!(self, Self::Baseline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprovementBaseline {
    /// Compare against the best validation F1 seen so far.
    #[default]
    Best,
    /// Compare against the immediately preceding round.
    Previous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeRule {
    /// Sum of new batches against the total generated pool.
    #[default]
    Total,
    /// Every language's new batch against its own generated pool.
    PerLanguage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingCriteria {
    pub k: u32,
    pub e: f64,
    pub v: f64,
    pub max_rounds: u32,
    pub improvement_baseline: ImprovementBaseline,
    pub volume_rule: VolumeRule,
}

impl Default for StoppingCriteria {
    fn default() -> Self {
        Self {
            k: 2,
            e: 0.005,
            v: 0.01,
            max_rounds: 10,
            improvement_baseline: ImprovementBaseline::Best,
            volume_rule: VolumeRule::Total,
        }
    }
}

impl StoppingCriteria {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k < 1 {
            return Err(ConfigError::Invalid("criteria.k must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.e) {
            return Err(ConfigError::Invalid(format!("criteria.e = {} outside [0, 1)", self.e)));
        }
        if !(0.0..1.0).contains(&self.v) {
            return Err(ConfigError::Invalid(format!("criteria.v = {} outside [0, 1)", self.v)));
        }
        if self.max_rounds < 1 {
            return Err(ConfigError::Invalid("criteria.max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: u32,
    /// Global update-step budget per training pass. When absent, the steps of
    /// a 3-epoch pass over gold plus every validated synthetic record.
    pub step_budget: Option<u64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            batch_size: 8,
            step_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvalEntry {
    Path(PathBuf),
    Spec { path: PathBuf, lang: Option<String> },
}

impl EvalEntry {
    pub fn path(&self) -> &Path {
        match self {
            Self::Path(p) | Self::Spec { path: p, .. } => p,
        }
    }

    pub fn lang(&self) -> Option<&str> {
        match self {
            Self::Path(_) => None,
            Self::Spec { lang, .. } => lang.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Datasets {
    pub gold: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub synthetic: BTreeMap<String, PathBuf>,
    pub eval: BTreeMap<String, EvalEntry>,
    /// Unlabeled contexts per language, input of `generate`.
    pub contexts: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub max_attempts: Option<u32>,
    #[serde(default)]
    pub auth_token: Option<String>,
    /// In-flight request cap for generation.
    #[serde(default)]
    pub concurrency: Option<usize>,
    /// Student checkpoint that every training pass starts from.
    #[serde(default)]
    pub base_model: Option<String>,
}

impl EndpointConfig {
    pub fn endpoint(&self) -> BackendEndpoint {
        let mut ep = BackendEndpoint::new(self.base_url.clone());
        if let Some(secs) = self.timeout_secs {
            ep.timeout = Duration::from_secs(secs);
        }
        if let Some(n) = self.max_attempts {
            ep.retry = RetryPolicy {
                max_attempts: n,
                ..RetryPolicy::default()
            };
        }
        ep.auth_token = self.auth_token.clone();
        ep
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub generate: Option<EndpointConfig>,
    pub student: Option<EndpointConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub master: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scoring {
    /// `mlqa` or a path to a profile file.
    pub profile: String,
    pub averaging: Averaging,
}

impl Default for Scoring {
    fn default() -> Self {
        Self {
            profile: "mlqa".into(),
            averaging: Averaging::Macro,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub match_f1_threshold: f64,
    pub predict_batch: usize,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            match_f1_threshold: 1.0,
            predict_batch: crate::backend::DEFAULT_PREDICT_BATCH,
        }
    }
}

pub const DEFAULT_BASE_MODEL: &str = "xlm-roberta-base";
pub const DEFAULT_GOLD_SUBSET: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub languages: Vec<String>,
    #[serde(default)]
    pub stage_order: Vec<String>,
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
    #[serde(default = "default_gold_subset")]
    pub gold_subset_size: usize,
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default)]
    pub datasets: Datasets,
    #[serde(default)]
    pub exemplars: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub backend: Backends,
    #[serde(default)]
    pub criteria: StoppingCriteria,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub scoring: Scoring,
    #[serde(default)]
    pub filter: FilterSettings,

    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// sha256 of the config text.
    #[serde(skip)]
    pub digest: String,
}

fn default_run_dir() -> PathBuf {
    PathBuf::from("run")
}

fn default_gold_subset() -> usize {
    DEFAULT_GOLD_SUBSET
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.digest = hex::encode(Sha256::digest(text.as_bytes()));
        if cfg.stage_order.is_empty() {
            cfg.stage_order = cfg.languages.clone();
        }
        cfg.validate_common()?;
        Ok(cfg)
    }

    fn validate_common(&self) -> Result<(), ConfigError> {
        if self.languages.is_empty() {
            return Err(ConfigError::Invalid("languages must not be empty".into()));
        }
        let mut langs = self.languages.clone();
        langs.sort();
        langs.dedup();
        if langs.len() != self.languages.len() {
            return Err(ConfigError::Invalid("languages contains duplicates".into()));
        }
        let mut order = self.stage_order.clone();
        order.sort();
        if order != langs {
            return Err(ConfigError::Invalid(format!(
                "stage_order {:?} must be a permutation of languages {:?}",
                self.stage_order, self.languages
            )));
        }
        self.criteria.validate()?;
        if self.train.batch_size == 0 {
            return Err(ConfigError::Invalid("train.batch_size must be positive".into()));
        }
        if self.train.learning_rate.is_nan() || self.train.learning_rate <= 0.0 {
            return Err(ConfigError::Invalid("train.learning_rate must be positive".into()));
        }
        if self.train.step_budget == Some(0) {
            return Err(ConfigError::Invalid("train.step_budget must be positive".into()));
        }
        if self.gold_subset_size == 0 {
            return Err(ConfigError::Invalid("gold_subset_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.filter.match_f1_threshold) {
            return Err(ConfigError::Invalid("filter.match_f1_threshold outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Checks the fields `run` needs for the configured mode.
    pub fn validate_for_run(&self) -> Result<(), ConfigError> {
        let missing = |what: &str| ConfigError::Invalid(format!("mode {} requires {what}", self.mode.as_str()));
        if self.datasets.gold.is_none() {
            return Err(missing("datasets.gold"));
        }
        if self.datasets.validation.is_none() {
            return Err(missing("datasets.validation"));
        }
        if self.backend.student.is_none() {
            return Err(missing("backend.student.base_url"));
        }
        if self.mode.uses_synthetic() {
            for lang in &self.languages {
                if !self.datasets.synthetic.contains_key(lang) {
                    return Err(missing(&format!("datasets.synthetic.{lang}")));
                }
            }
        }
        Ok(())
    }

    /// Checks the fields `generate` needs.
    pub fn validate_for_generate(&self) -> Result<(), ConfigError> {
        let missing = |what: String| ConfigError::Invalid(format!("generate requires {what}"));
        if self.backend.generate.is_none() {
            return Err(missing("backend.generate.base_url".into()));
        }
        for lang in &self.languages {
            if !self.datasets.contexts.contains_key(lang) {
                return Err(missing(format!("datasets.contexts.{lang}")));
            }
            if !self.exemplars.contains_key(lang) {
                return Err(missing(format!("exemplars.{lang}")));
            }
            if !self.datasets.synthetic.contains_key(lang) {
                return Err(missing(format!("datasets.synthetic.{lang} (output path)")));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.resolve(&self.run_dir)
    }

    /// Endpoint with `mock://` script paths resolved against the config dir.
    pub fn endpoint(&self, which: &EndpointConfig) -> BackendEndpoint {
        let mut ep = which.endpoint();
        if let Some(rest) = ep.base_url.strip_prefix("mock://") {
            ep.base_url = format!("mock://{}", self.resolve(Path::new(rest)).display());
        }
        ep
    }

    pub fn base_model(&self) -> String {
        self.backend
            .student
            .as_ref()
            .and_then(|s| s.base_model.clone())
            .unwrap_or_else(|| DEFAULT_BASE_MODEL.to_string())
    }
}
