use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig};
use crate::dataset::{
    load_dataset, split_head_tail, split_query_retrieval, synthesize_long_tailed, trim_labels, DataSplit,
    HeadTailPartition, MultiModalDataset, SplitConfig,
};
use crate::error::{Error, Result};
use crate::hashing::{train, HashModel, Modality, TrainConfig, TrainHistory};
use crate::retrieval::{evaluate, save_results_csv, BinaryCodeMatrix, Direction, RetrievalResult};

// Offsets that give each stage its own random stream from one seed.
const SPLIT_STREAM: u64 = 0x5EED_0001;
const TRIM_STREAM: u64 = 0x5EED_0002;

/// Contents of `split.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub split: DataSplit,
    pub partition: HeadTailPartition,
}

impl SplitFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(e.column() as u64, format!("split file: {e}")))
    }
}

/// Dataset, split and training settings resolved from a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: MultiModalDataset,
    pub split: DataSplit,
    pub partition: HeadTailPartition,
    pub train: TrainConfig,
}

/// Synthesizes the configured dataset or loads it from file, then trims
/// labels. Also returns per-class training targets and the automatic head
/// threshold when one exists.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<(MultiModalDataset, Vec<usize>, Option<usize>)> {
    let (mut ds, targets, auto) = match (&cfg.dataset, cfg.long_tail_spec()) {
        (_, Some(spec)) => {
            spec.validate()?;
            let ds = synthesize_long_tailed(&spec, cfg.seed)?;
            (ds, Some(spec.train_counts()), Some(spec.groups[0].samples_per_class))
        }
        (DatasetSource::File(path), None) => (load_dataset(path)?, None, None),
        _ => unreachable!("presets always have a spec"),
    };
    if cfg.trim_labels {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRIM_STREAM);
        ds.labels = trim_labels(&ds.labels, 2, 3, &mut rng)?;
    }
    let targets = targets.unwrap_or_else(|| {
        ds.labels
            .class_counts()
            .iter()
            .map(|&c| c.saturating_sub(cfg.holdout_per_class))
            .collect()
    });
    Ok((ds, targets, auto))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (dataset, targets, auto) = build_dataset(cfg)?;
    let threshold = match (cfg.head_threshold, auto) {
        (Some(t), _) | (None, Some(t)) => t,
        (None, None) => return Err(Error::config("head_threshold = auto needs a synthetic dataset; set a number")),
    };
    let split = split_query_retrieval(
        &dataset.labels,
        &SplitConfig {
            train_per_class: targets,
            queries_per_class: cfg.queries_per_class,
            retrieval_includes_queries: cfg.retrieval_includes_queries,
        },
        cfg.seed ^ SPLIT_STREAM,
    )?;
    let partition = split_head_tail(&dataset.labels.select_rows(&split.train).class_counts(), threshold)?;
    let train = cfg.train_config(threshold)?;
    Ok(Prepared {
        dataset,
        split,
        partition,
        train,
    })
}

/// Codes for the samples `idx` of one modality.
pub fn encode_subset(
    model: &HashModel,
    dataset: &MultiModalDataset,
    idx: &[usize],
    modality: Modality,
) -> Result<BinaryCodeMatrix> {
    let features = match modality {
        Modality::Image => dataset.x.select_rows(idx),
        Modality::Text => dataset.y.select_rows(idx),
    };
    model.encode(modality, &features)
}

/// Query and database codes for both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSplit {
    pub query_image: BinaryCodeMatrix,
    pub query_text: BinaryCodeMatrix,
    pub db_image: BinaryCodeMatrix,
    pub db_text: BinaryCodeMatrix,
}

pub fn encode_split(model: &HashModel, dataset: &MultiModalDataset, split: &DataSplit) -> Result<EncodedSplit> {
    Ok(EncodedSplit {
        query_image: encode_subset(model, dataset, &split.query, Modality::Image)?,
        query_text: encode_subset(model, dataset, &split.query, Modality::Text)?,
        db_image: encode_subset(model, dataset, &split.retrieval, Modality::Image)?,
        db_text: encode_subset(model, dataset, &split.retrieval, Modality::Text)?,
    })
}

/// Image→text and text→image retrieval over the split.
pub fn evaluate_split(
    codes: &EncodedSplit,
    dataset: &MultiModalDataset,
    split: &DataSplit,
    partition: &HeadTailPartition,
) -> Result<[RetrievalResult; 2]> {
    let ql = dataset.labels.select_rows(&split.query);
    let dl = dataset.labels.select_rows(&split.retrieval);
    Ok([
        evaluate(&codes.query_image, &ql, &codes.db_text, &dl, partition, Direction::ImageToText)?,
        evaluate(&codes.query_text, &ql, &codes.db_image, &dl, partition, Direction::TextToImage)?,
    ])
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub prepared: Prepared,
    pub model: HashModel,
    pub history: TrainHistory,
    pub codes: EncodedSplit,
    pub results: [RetrievalResult; 2],
}

/// Prepare, train, encode and evaluate in memory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let prepared = prepare(cfg)?;
    let (model, history) = train(&prepared.dataset, &prepared.split, &prepared.train)?;
    let codes = encode_split(&model, &prepared.dataset, &prepared.split)?;
    let results = evaluate_split(&codes, &prepared.dataset, &prepared.split, &prepared.partition)?;
    Ok(RunOutput {
        prepared,
        model,
        history,
        codes,
        results,
    })
}

pub const CONFIG_FILE: &str = "config.txt";
pub const SPLIT_FILE: &str = "split.json";
pub const MODEL_FILE: &str = "model.lcmh";
pub const LOSS_FILE: &str = "loss.csv";
pub const RESULTS_FILE: &str = "results.csv";

/// Runs the full pipeline and writes every artifact into `dir`: the
/// effective config, split, model, loss history, four code files and the
/// result table.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<RunOutput> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    cfg.save(dir.join(CONFIG_FILE))?;
    let out = run(cfg)?;
    SplitFile {
        split: out.prepared.split.clone(),
        partition: out.prepared.partition.clone(),
    }
    .save(dir.join(SPLIT_FILE))?;
    out.model.save(dir.join(MODEL_FILE))?;
    out.history.save_csv(dir.join(LOSS_FILE))?;
    out.codes.query_image.save(dir.join("query_image.lcmb"))?;
    out.codes.query_text.save(dir.join("query_text.lcmb"))?;
    out.codes.db_image.save(dir.join("db_image.lcmb"))?;
    out.codes.db_text.save(dir.join("db_text.lcmb"))?;
    save_results_csv(&out.results, dir.join(RESULTS_FILE))?;
    Ok(out)
}
