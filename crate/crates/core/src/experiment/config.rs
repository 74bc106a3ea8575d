//! Flat `key = value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Every key has a default and
//! unknown keys are rejected. Lists are comma-separated.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `seed` | 0 | seeds synthesis, splitting and training |
//! | `dataset` | `flickr` | `flickr`, `nus_wide`, or a dataset file path |
//! | `groups` | (preset) | class groups as `COUNTxSAMPLES,...`, largest first |
//! | `scale` | 10 | divides per-class sample counts of synthetic groups |
//! | `holdout_per_class` | 25 | samples per class kept out of training |
//! | `dim_x`, `dim_y` | 64, 48 | synthetic feature widths |
//! | `latent_dim` | 16 | synthetic latent width |
//! | `intra_class_spread` | 0.6 | latent spread around class centers |
//! | `noise_x`, `noise_y` | 1.0, 1.0 | feature noise |
//! | `multi_label_fraction` | 0 | fraction of two-label synthetic samples |
//! | `trim_labels` | true | reduce rows with more than 3 labels to 2-3 rare ones |
//! | `queries_per_class` | 5 | queries drawn per class |
//! | `retrieval_includes_queries` | false | keep queries in the database |
//! | `alpha`, `beta` | 1, 1 | quantization and balance weights |
//! | `optimizer` | `adam` | `adam` or `sgd` |
//! | `learning_rate` | 1e-3 | step size |
//! | `momentum` | 0.9 | SGD momentum |
//! | `epochs` | 100 | training epochs |
//! | `batch_columns` | 256 | samples per minibatch |
//! | `code_length` | 32 | bits per code |
//! | `hidden` | (none) | hidden widths of the basic networks; empty means linear |
//! | `init_scale` | 0.01 | factor on the initial output-layer weights |
//! | `head_threshold` | `auto` | training count that makes a class head; `auto` uses the largest synthetic group |
//! | `eta_mode` | `intent_ratio` | `intent_ratio`, `as_printed` or `learned` |
//! | `eta_max` | 10 | upper clamp for ratio η |
//! | `weight_norm` | `softmax` | `softmax` or `raw` |
//! | `no_memory` | false | ablation: direct features only |
//! | `learned_eta` | false | ablation: η from a learned unit (overrides `eta_mode`) |
//! | `out` | `out` | output directory |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataset::{ClassGroup, LongTailSpec};
use crate::embed::{EmbedderConfig, EtaMode, WeightNorm};
use crate::error::{Error, Result};
use crate::hashing::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Flickr,
    NusWide,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSource,
    pub groups: Option<Vec<ClassGroup>>,
    pub scale: usize,
    pub holdout_per_class: usize,
    pub dim_x: usize,
    pub dim_y: usize,
    pub latent_dim: usize,
    pub intra_class_spread: f64,
    pub noise_x: f64,
    pub noise_y: f64,
    pub multi_label_fraction: f64,
    pub trim_labels: bool,
    pub queries_per_class: usize,
    pub retrieval_includes_queries: bool,
    pub alpha: f64,
    pub beta: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_columns: usize,
    pub code_length: usize,
    pub hidden: Vec<usize>,
    pub init_scale: f64,
    pub head_threshold: Option<usize>,
    pub eta_mode: EtaMode,
    pub eta_max: f64,
    pub weight_norm: WeightNorm,
    pub no_memory: bool,
    pub learned_eta: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: 0,
            dataset: DatasetSource::Flickr,
            groups: None,
            scale: 10,
            holdout_per_class: 25,
            dim_x: 64,
            dim_y: 48,
            latent_dim: 16,
            intra_class_spread: 0.6,
            noise_x: 1.0,
            noise_y: 1.0,
            multi_label_fraction: 0.0,
            trim_labels: true,
            queries_per_class: 5,
            retrieval_includes_queries: false,
            alpha: t.alpha,
            beta: t.beta,
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            epochs: t.epochs,
            batch_columns: t.batch_columns,
            code_length: t.code_length,
            hidden: t.hidden,
            init_scale: t.init_scale,
            head_threshold: None,
            eta_mode: t.embedder.eta_mode,
            eta_max: t.embedder.eta_max,
            weight_norm: t.embedder.weight_norm,
            no_memory: false,
            learned_eta: false,
            out: PathBuf::from("out"),
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "dataset",
    "groups",
    "scale",
    "holdout_per_class",
    "dim_x",
    "dim_y",
    "latent_dim",
    "intra_class_spread",
    "noise_x",
    "noise_y",
    "multi_label_fraction",
    "trim_labels",
    "queries_per_class",
    "retrieval_includes_queries",
    "alpha",
    "beta",
    "optimizer",
    "learning_rate",
    "momentum",
    "epochs",
    "batch_columns",
    "code_length",
    "hidden",
    "init_scale",
    "head_threshold",
    "eta_mode",
    "eta_max",
    "weight_norm",
    "no_memory",
    "learned_eta",
    "out",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_groups(v: &str) -> Result<Option<Vec<ClassGroup>>> {
    if v.is_empty() {
        return Ok(None);
    }
    v.split(',')
        .map(|g| {
            let (a, b) = g
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::config(format!("groups: expected COUNTxSAMPLES, got {g:?}")))?;
            Ok(ClassGroup {
                num_classes: parse_num("groups", a.trim())?,
                samples_per_class: parse_num("groups", b.trim())?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "dataset" => {
                self.dataset = match v {
                    "flickr" => DatasetSource::Flickr,
                    "nus_wide" => DatasetSource::NusWide,
                    "" => return Err(Error::config("dataset: empty value")),
                    path => DatasetSource::File(PathBuf::from(path)),
                }
            }
            "groups" => self.groups = parse_groups(v)?,
            "scale" => self.scale = parse_num(key, v)?,
            "holdout_per_class" => self.holdout_per_class = parse_num(key, v)?,
            "dim_x" => self.dim_x = parse_num(key, v)?,
            "dim_y" => self.dim_y = parse_num(key, v)?,
            "latent_dim" => self.latent_dim = parse_num(key, v)?,
            "intra_class_spread" => self.intra_class_spread = parse_num(key, v)?,
            "noise_x" => self.noise_x = parse_num(key, v)?,
            "noise_y" => self.noise_y = parse_num(key, v)?,
            "multi_label_fraction" => self.multi_label_fraction = parse_num(key, v)?,
            "trim_labels" => self.trim_labels = parse_bool(key, v)?,
            "queries_per_class" => self.queries_per_class = parse_num(key, v)?,
            "retrieval_includes_queries" => self.retrieval_includes_queries = parse_bool(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "optimizer" => self.optimizer = OptimizerKind::parse(v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "momentum" => self.momentum = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_columns" => self.batch_columns = parse_num(key, v)?,
            "code_length" => self.code_length = parse_num(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "init_scale" => self.init_scale = parse_num(key, v)?,
            "head_threshold" => {
                self.head_threshold = match v {
                    "auto" => None,
                    n => Some(parse_num(key, n)?),
                }
            }
            "eta_mode" => self.eta_mode = EtaMode::parse(v)?,
            "eta_max" => self.eta_max = parse_num(key, v)?,
            "weight_norm" => self.weight_norm = WeightNorm::parse(v)?,
            "no_memory" => self.no_memory = parse_bool(key, v)?,
            "learned_eta" => self.learned_eta = parse_bool(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "seed" => self.seed.to_string(),
            "dataset" => match &self.dataset {
                DatasetSource::Flickr => "flickr".into(),
                DatasetSource::NusWide => "nus_wide".into(),
                DatasetSource::File(p) => p.display().to_string(),
            },
            "groups" => match &self.groups {
                None => String::new(),
                Some(g) => g
                    .iter()
                    .map(|g| format!("{}x{}", g.num_classes, g.samples_per_class))
                    .collect::<Vec<_>>()
                    .join(","),
            },
            "scale" => self.scale.to_string(),
            "holdout_per_class" => self.holdout_per_class.to_string(),
            "dim_x" => self.dim_x.to_string(),
            "dim_y" => self.dim_y.to_string(),
            "latent_dim" => self.latent_dim.to_string(),
            "intra_class_spread" => self.intra_class_spread.to_string(),
            "noise_x" => self.noise_x.to_string(),
            "noise_y" => self.noise_y.to_string(),
            "multi_label_fraction" => self.multi_label_fraction.to_string(),
            "trim_labels" => self.trim_labels.to_string(),
            "queries_per_class" => self.queries_per_class.to_string(),
            "retrieval_includes_queries" => self.retrieval_includes_queries.to_string(),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "optimizer" => self.optimizer.name().into(),
            "learning_rate" => self.learning_rate.to_string(),
            "momentum" => self.momentum.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_columns" => self.batch_columns.to_string(),
            "code_length" => self.code_length.to_string(),
            "hidden" => join(&self.hidden),
            "init_scale" => self.init_scale.to_string(),
            "head_threshold" => self.head_threshold.map_or("auto".into(), |t| t.to_string()),
            "eta_mode" => self.eta_mode.name().into(),
            "eta_max" => self.eta_max.to_string(),
            "weight_norm" => self.weight_norm.name().into(),
            "no_memory" => self.no_memory.to_string(),
            "learned_eta" => self.learned_eta.to_string(),
            "out" => self.out.display().to_string(),
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        })
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(k.trim(), v).map_err(|e| match e {
                Error::Config(msg) => Error::config(format!("line {}: {msg}", no + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key with its effective value, one per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Synthetic dataset shape, or `None` for a dataset file.
    pub fn long_tail_spec(&self) -> Option<LongTailSpec> {
        let base = match (&self.groups, &self.dataset) {
            (Some(g), _) => LongTailSpec {
                groups: g.clone(),
                ..LongTailSpec::flickr()
            },
            (None, DatasetSource::Flickr) => LongTailSpec::flickr(),
            (None, DatasetSource::NusWide) => LongTailSpec::nus_wide(),
            (None, DatasetSource::File(_)) => return None,
        };
        let mut spec = base.scaled(self.scale.max(1));
        spec.dim_x = self.dim_x;
        spec.dim_y = self.dim_y;
        spec.latent_dim = self.latent_dim;
        spec.holdout_per_class = self.holdout_per_class;
        spec.intra_class_spread = self.intra_class_spread;
        spec.noise_x = self.noise_x;
        spec.noise_y = self.noise_y;
        spec.multi_label_fraction = self.multi_label_fraction;
        Some(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::config("scale must be >= 1"));
        }
        if let Some(spec) = self.long_tail_spec() {
            spec.validate()?;
        }
        if self.head_threshold == Some(0) {
            return Err(Error::config("head_threshold must be >= 1"));
        }
        self.train_config(1)?.validate()
    }

    /// Training settings; `auto_threshold` fills an `auto` head threshold.
    pub fn train_config(&self, auto_threshold: usize) -> Result<TrainConfig> {
        let eta_mode = if self.learned_eta { EtaMode::Learned } else { self.eta_mode };
        let cfg = TrainConfig {
            alpha: self.alpha,
            beta: self.beta,
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_columns: self.batch_columns,
            seed: self.seed,
            code_length: self.code_length,
            hidden: self.hidden.clone(),
            init_scale: self.init_scale,
            head_threshold: self.head_threshold.unwrap_or(auto_threshold),
            embedder: EmbedderConfig {
                eta_mode,
                eta_max: self.eta_max,
                weight_norm: self.weight_norm,
                use_memory: !self.no_memory,
            },
        };
        Ok(cfg)
    }
}
