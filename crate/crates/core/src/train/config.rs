//! Training configuration and its flat `key = value` file format.
//!
//! Required keys: `epochs`, `tasks_per_epoch`, `lr`, `momentum`,
//! `weight_decay`, `tau`, `n_support`, `metric`, `selection`. Everything else
//! has a default. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::episodes::{EpisodeConfig, EpisodeMode};
use crate::error::{Error, Result};
use crate::groups::MetricKind;
use crate::model::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    PseudoUnbiased,
    ValidationAccuracy,
}

impl FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pseudo-unbiased" => Ok(Selection::PseudoUnbiased),
            "validation-accuracy" => Ok(Selection::ValidationAccuracy),
            other => Err(format!("unknown selection `{other}`")),
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Selection::PseudoUnbiased => "pseudo-unbiased",
            Selection::ValidationAccuracy => "validation-accuracy",
        })
    }
}

/// Training procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Spuriousness-aware episodes.
    Spume,
    /// Episodes drawn uniformly per class.
    SpumeRandom,
    /// Cross-entropy with a linear head.
    Erm,
    /// Cross-entropy with a cosine head.
    ErmCosine,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "spume" => Ok(Method::Spume),
            "spume-random" => Ok(Method::SpumeRandom),
            "erm" => Ok(Method::Erm),
            "erm-cosine" => Ok(Method::ErmCosine),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Spume => "spume",
            Method::SpumeRandom => "spume-random",
            Method::Erm => "erm",
            Method::ErmCosine => "erm-cosine",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub tasks_per_epoch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub n_support: usize,
    pub metric: MetricKind,
    pub selection: Selection,
    pub seed: u64,
    /// Hidden and output widths; the input width comes from the data.
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub retry_budget: usize,
    pub classes_per_task: Option<usize>,
    pub recompute_interval: usize,
    pub task_batch: usize,
    pub erm_batch_size: usize,
    pub min_frequency: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Spume,
            epochs: 100,
            tasks_per_epoch: 80,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
            tau: 5.0,
            n_support: 10,
            metric: MetricKind::TanhAbsLogRatio,
            selection: Selection::PseudoUnbiased,
            seed: 0,
            layers: vec![32, 16],
            activation: Activation::Relu,
            retry_budget: 20,
            classes_per_task: None,
            recompute_interval: 1,
            task_batch: 1,
            erm_batch_size: 32,
            min_frequency: 10,
        }
    }
}

const REQUIRED: [&str; 9] = [
    "epochs",
    "tasks_per_epoch",
    "lr",
    "momentum",
    "weight_decay",
    "tau",
    "n_support",
    "metric",
    "selection",
];

pub(crate) fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| Error::Config(format!("`{key}`: {e}")))
}

/// Non-comment `key = value` lines of a flat config file.
pub(crate) fn key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut entries = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
        let k = k.trim().to_string();
        if entries.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("key `{k}` given twice")));
        }
    }
    Ok(entries)
}

impl TrainConfig {
    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            n_support: self.n_support,
            n_classes_per_task: self.classes_per_task,
            retry_budget: self.retry_budget,
            mode: match self.method {
                Method::SpumeRandom => EpisodeMode::Random,
                _ => EpisodeMode::SpuriousnessAware,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.tasks_per_epoch == 0 {
            return fail("tasks_per_epoch must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be non-negative");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau must be positive");
        }
        if self.n_support == 0 {
            return fail("n_support must be at least 1");
        }
        if self.layers.is_empty() || self.layers.contains(&0) {
            return fail("layers must list positive widths");
        }
        if self.retry_budget == 0 {
            return fail("retry_budget must be at least 1");
        }
        if self.recompute_interval == 0 {
            return fail("recompute_interval must be at least 1");
        }
        if self.task_batch == 0 || self.erm_batch_size == 0 {
            return fail("batch sizes must be at least 1");
        }
        if self.min_frequency == 0 {
            return fail("min_frequency must be at least 1");
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = key_values(text)?;
        for key in REQUIRED {
            if !entries.contains_key(key) {
                return Err(Error::MissingKey(key.to_string()));
            }
        }
        let mut cfg = TrainConfig::default();
        for (k, v) in &entries {
            let k = k.as_str();
            match k {
                "method" => cfg.method = value(k, v)?,
                "epochs" => cfg.epochs = value(k, v)?,
                "tasks_per_epoch" => cfg.tasks_per_epoch = value(k, v)?,
                "lr" => cfg.lr = value(k, v)?,
                "momentum" => cfg.momentum = value(k, v)?,
                "weight_decay" => cfg.weight_decay = value(k, v)?,
                "tau" => cfg.tau = value(k, v)?,
                "n_support" => cfg.n_support = value(k, v)?,
                "metric" => cfg.metric = value(k, v)?,
                "selection" => cfg.selection = value(k, v)?,
                "seed" => cfg.seed = value(k, v)?,
                "layers" => {
                    cfg.layers = v
                        .split(',')
                        .map(|w| value::<usize>(k, w.trim()))
                        .collect::<Result<_>>()?
                }
                "activation" => cfg.activation = value(k, v)?,
                "retry_budget" => cfg.retry_budget = value(k, v)?,
                "classes_per_task" => {
                    cfg.classes_per_task = match v.as_str() {
                        "all" => None,
                        n => Some(value(k, n)?),
                    }
                }
                "recompute_interval" => cfg.recompute_interval = value(k, v)?,
                "task_batch" => cfg.task_batch = value(k, v)?,
                "erm_batch_size" => cfg.erm_batch_size = value(k, v)?,
                "min_frequency" => cfg.min_frequency = value(k, v)?,
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_config_string(&self) -> String {
        let layers: Vec<String> = self.layers.iter().map(|w| w.to_string()).collect();
        let classes = self
            .classes_per_task
            .map_or_else(|| "all".to_string(), |n| n.to_string());
        format!(
            "method = {}\nepochs = {}\ntasks_per_epoch = {}\nlr = {}\nmomentum = {}\n\
             weight_decay = {}\ntau = {}\nn_support = {}\nmetric = {}\nselection = {}\n\
             seed = {}\nlayers = {}\nactivation = {}\nretry_budget = {}\nclasses_per_task = {}\n\
             recompute_interval = {}\ntask_batch = {}\nerm_batch_size = {}\nmin_frequency = {}\n",
            self.method,
            self.epochs,
            self.tasks_per_epoch,
            self.lr,
            self.momentum,
            self.weight_decay,
            self.tau,
            self.n_support,
            self.metric,
            self.selection,
            self.seed,
            layers.join(","),
            self.activation,
            self.retry_budget,
            classes,
            self.recompute_interval,
            self.task_batch,
            self.erm_batch_size,
            self.min_frequency,
        )
    }
}
