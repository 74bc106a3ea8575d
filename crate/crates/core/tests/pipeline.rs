use std::fs;

use lthash::experiment::{run, run_to_dir, ExperimentConfig, SplitFile, CONFIG_FILE, LOSS_FILE, MODEL_FILE, SPLIT_FILE};
use lthash::hashing::{HashModel, Modality};
use lthash::retrieval::BinaryCodeMatrix;
use tempfile::TempDir;

fn small(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("scale", "1"),
        ("groups", "2x40,4x6"),
        ("holdout_per_class", "6"),
        ("queries_per_class", "2"),
        ("dim_x", "16"),
        ("dim_y", "12"),
        ("latent_dim", "6"),
        ("code_length", "16"),
        ("batch_columns", "32"),
        ("epochs", "4"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.seed = seed;
    cfg
}

#[test]
fn artifacts_are_consistent() {
    let tmp = TempDir::new().unwrap();
    let out = run_to_dir(&small(1), tmp.path()).unwrap();
    let split = SplitFile::load(tmp.path().join(SPLIT_FILE)).unwrap();
    assert_eq!(split.split, out.prepared.split);
    assert_eq!(split.partition, out.prepared.partition);
    assert_eq!(HashModel::load(tmp.path().join(MODEL_FILE)).unwrap(), out.model);
    let db = BinaryCodeMatrix::load(tmp.path().join("db_text.lcmb")).unwrap();
    assert_eq!(db, out.codes.db_text);
    assert_eq!(db.len(), out.prepared.split.retrieval.len());
    // the saved model reproduces the saved codes
    let q = out.prepared.dataset.x.select_rows(&out.prepared.split.query);
    assert_eq!(out.model.encode(Modality::Image, &q).unwrap(), out.codes.query_image);
    let loss = fs::read_to_string(tmp.path().join(LOSS_FILE)).unwrap();
    assert_eq!(loss.lines().count(), 1 + 4);
    for r in &out.results {
        assert!((0.0..=1.0).contains(&r.map));
        assert_eq!(r.num_queries(), out.prepared.split.query.len());
    }
}

#[test]
fn written_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let a = run_to_dir(&small(5), tmp.path().join("a")).unwrap();
    let cfg = ExperimentConfig::load(tmp.path().join("a").join(CONFIG_FILE)).unwrap();
    assert_eq!(cfg, small(5));
    let b = run(&cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.codes, b.codes);
    assert_eq!(a.results, b.results);
}

#[test]
fn seeds_change_the_run() {
    let a = run(&small(1)).unwrap();
    let b = run(&small(2)).unwrap();
    assert_ne!(a.codes, b.codes);
}

#[test]
fn zero_epochs_runs_end_to_end() {
    let mut cfg = small(3);
    cfg.epochs = 0;
    let out = run(&cfg).unwrap();
    assert!(out.history.epochs.is_empty());
    assert_eq!(out.model.code_length(), 16);
    assert_eq!(out.results.len(), 2);
}

#[test]
fn ablations_run() {
    for (k, v) in [("no_memory", "true"), ("learned_eta", "true"), ("eta_mode", "as_printed"), ("weight_norm", "raw")] {
        let mut cfg = small(4);
        cfg.set(k, v).unwrap();
        let out = run(&cfg).unwrap();
        assert!(out.history.epochs.iter().all(|l| l.is_finite()), "{k}");
    }
}
