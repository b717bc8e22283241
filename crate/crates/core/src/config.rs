//! JSON run configuration.
//!
//! Keys follow the usual class-incremental toolbox naming (`model_name`,
//! `init_cls`, `memory_per_class`, ...). Hyphenated spellings such as
//! `init-cls` are accepted as aliases. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::learners::{LearnerKind, StageBatchPlan, DEFAULT_MOMENTUM, DEFAULT_TEMPERATURE};
use crate::memory::DEFAULT_MEMORY_PER_CLASS;
use crate::rng::derive_seed;

pub const DEFAULT_SEED: u64 = 1993;

/// Label space used when scoring a task's test rows after a later stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLabelSpace {
    /// Classes seen when the task was introduced. A learner whose class
    /// vectors never change keeps every task accuracy fixed.
    Introduced,
    /// All classes seen at the time of measurement.
    Current,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model_name: LearnerKind,
    /// Bank stem: banks are read from `<dataset>_train.c3eb` and `<dataset>_test.c3eb`.
    pub dataset: String,
    pub backbone_type: Option<String>,
    pub init_cls: usize,
    pub increment: usize,
    pub memory_per_class: usize,
    pub seed: u64,
    /// `false` keeps the bank's native class order.
    pub shuffle: bool,
    pub tuned_epoch: usize,
    pub batch_size: usize,
    pub init_lr: f64,
    pub weight_decay: f64,
    pub optimizer: String,
    pub temperature: f64,
    pub allow_ragged: bool,
    pub task_label_space: TaskLabelSpace,
    pub output_dir: PathBuf,
}

/// Optimizer names the engine knows. All of them run SGD with momentum.
const KNOWN_OPTIMIZERS: [&str; 3] = ["sgd", "adam", "adamw"];

/// `(canonical key, aliases)`.
const KEYS: [(&str, &[&str]); 17] = [
    ("model_name", &["model-name"]),
    ("dataset", &[]),
    ("backbone_type", &["backbone-type"]),
    ("init_cls", &["init-cls"]),
    ("increment", &[]),
    ("memory_per_class", &["memory-per-class"]),
    ("seed", &[]),
    ("shuffle", &[]),
    ("tuned_epoch", &["tuned-epoch"]),
    ("batch_size", &["batch-size"]),
    ("init_lr", &["init-lr"]),
    ("weight_decay", &["weight-decay"]),
    ("optimizer", &[]),
    ("temperature", &[]),
    ("allow_ragged", &["allow-ragged"]),
    ("task_label_space", &["task-label-space"]),
    ("output_dir", &["output-dir"]),
];

struct Fields(Map<String, Value>);

impl Fields {
    fn take<T: DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v)
                .map(Some)
                .map_err(|e| Error::Config(format!("key {key:?}: {e}"))),
        }
    }

    fn require<T: DeserializeOwned>(&mut self, key: &str) -> Result<T> {
        self.take(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(raw) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };

        let mut map = Map::new();
        for (key, v) in raw {
            let canonical = KEYS
                .iter()
                .find(|(name, aliases)| *name == key || aliases.contains(&key.as_str()))
                .map(|(name, _)| *name)
                .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
            if map.insert(canonical.to_owned(), v).is_some() {
                return Err(Error::Config(format!("key {canonical:?} given twice")));
            }
        }
        let mut f = Fields(map);

        let model: String = f.require("model_name")?;
        let model_name: LearnerKind = model.parse()?;
        let config = RunConfig {
            model_name,
            dataset: f.require("dataset")?,
            backbone_type: f.take("backbone_type")?,
            init_cls: f.take("init_cls")?.unwrap_or(0),
            increment: f.require("increment")?,
            memory_per_class: f
                .take("memory_per_class")?
                .unwrap_or(DEFAULT_MEMORY_PER_CLASS),
            seed: f.take("seed")?.unwrap_or(DEFAULT_SEED),
            shuffle: f.take("shuffle")?.unwrap_or(true),
            tuned_epoch: f.take("tuned_epoch")?.unwrap_or(20),
            batch_size: f.take("batch_size")?.unwrap_or(32),
            init_lr: f.take("init_lr")?.unwrap_or(0.05),
            weight_decay: f.take("weight_decay")?.unwrap_or(0.0),
            optimizer: f.take("optimizer")?.unwrap_or_else(|| "sgd".to_owned()),
            temperature: f.take("temperature")?.unwrap_or(DEFAULT_TEMPERATURE),
            allow_ragged: f.take("allow_ragged")?.unwrap_or(false),
            task_label_space: f
                .take("task_label_space")?
                .unwrap_or(TaskLabelSpace::Introduced),
            output_dir: f
                .take("output_dir")?
                .unwrap_or_else(|| PathBuf::from("logs")),
        };
        debug_assert!(f.0.is_empty(), "every known key is consumed");
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let optimizer = self.optimizer.to_ascii_lowercase();
        if !KNOWN_OPTIMIZERS.contains(&optimizer.as_str()) {
            return Err(Error::Config(format!(
                "key \"optimizer\": unknown optimizer {:?}; known: {}",
                self.optimizer,
                KNOWN_OPTIMIZERS.join(", ")
            )));
        }
        if optimizer != "sgd" {
            log::warn!(
                "optimizer {:?} requested; training uses SGD with momentum",
                self.optimizer
            );
        }
        let checks = [
            ("increment", self.increment > 0),
            ("memory_per_class", self.memory_per_class > 0),
            ("batch_size", self.batch_size > 0),
            ("init_lr", self.init_lr.is_finite() && self.init_lr >= 0.0),
            (
                "weight_decay",
                self.weight_decay.is_finite() && self.weight_decay >= 0.0,
            ),
            (
                "temperature",
                self.temperature.is_finite() && self.temperature > 0.0,
            ),
        ];
        for (key, ok) in checks {
            if !ok {
                return Err(Error::Config(format!("key {key:?}: value out of range")));
            }
        }
        Ok(())
    }

    /// Train and test bank paths derived from `dataset`.
    pub fn bank_paths(&self) -> (PathBuf, PathBuf) {
        (
            PathBuf::from(format!("{}_train.c3eb", self.dataset)),
            PathBuf::from(format!("{}_test.c3eb", self.dataset)),
        )
    }

    /// Training plan for stage `b` (1-based).
    pub fn stage_plan(&self, b: usize) -> StageBatchPlan {
        StageBatchPlan {
            epochs: self.tuned_epoch,
            batch_size: self.batch_size,
            init_lr: self.init_lr,
            weight_decay: self.weight_decay,
            momentum: DEFAULT_MOMENTUM,
            seed: derive_seed(self.seed, &[b as u64]),
        }
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json_str(&text)
}
