use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lthash::dataset::load_dataset;
use lthash::experiment::{ExperimentConfig, SplitFile};
use lthash::hashing::{HashModel, Modality};
use lthash::retrieval::{binarize, BinaryCodeMatrix};
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--set",
    "scale=1",
    "--set",
    "groups=2x30,3x8",
    "--set",
    "holdout_per_class=4",
    "--set",
    "queries_per_class=2",
    "--set",
    "dim_x=12",
    "--set",
    "dim_y=10",
    "--set",
    "latent_dim=4",
    "--set",
    "code_length=16",
    "--set",
    "batch_columns=32",
    "--set",
    "epochs=3",
];

fn lthash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lthash"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lthash(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(cmd: &[&'a str], dir: &'a str) -> Vec<&'a str> {
    let mut v = cmd.to_vec();
    v.extend_from_slice(SMALL);
    v.extend_from_slice(&["--out", dir]);
    v
}

fn path(dir: &TempDir, sub: &str) -> String {
    dir.path().join(sub).to_str().unwrap().to_string()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (path(&tmp, "a"), path(&tmp, "b"), path(&tmp, "c"));
    ok(&with_small(&["synth", "--seed", "7"], &a));
    ok(&with_small(&["synth", "--seed", "7"], &b));
    ok(&with_small(&["synth", "--seed", "8"], &c));
    let da = read(Path::new(&a).join("dataset.lcmd"));
    assert_eq!(da, read(Path::new(&b).join("dataset.lcmd")));
    assert_ne!(da, read(Path::new(&c).join("dataset.lcmd")));
    let ds = load_dataset(Path::new(&a).join("dataset.lcmd")).unwrap();
    assert_eq!(ds.num_classes(), 5);
    assert_eq!(ds.dim_x(), 12);
    assert!(Path::new(&a).join("config.txt").exists());
}

#[test]
fn synth_single_class() {
    let tmp = TempDir::new().unwrap();
    let out = path(&tmp, "one");
    let stdout = ok(&["synth", "--set", "scale=1", "--set", "groups=1x10", "--set", "holdout_per_class=2", "--out", &out]);
    let ds = load_dataset(Path::new(&out).join("dataset.lcmd")).unwrap();
    assert_eq!(ds.num_classes(), 1);
    assert_eq!(ds.len(), 12);
    assert!(stdout.contains("12 samples, 1 classes"), "{stdout}");
}

#[test]
fn train_encode_eval() {
    let tmp = TempDir::new().unwrap();
    let out = path(&tmp, "run");
    ok(&with_small(&["train"], &out));
    let dir = Path::new(&out);
    for f in ["config.txt", "split.json", "model.lcmh", "loss.csv"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let loss = fs::read_to_string(dir.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 3, "{loss}");

    ok(&with_small(&["encode", "--modality", "image", "--subset", "query"], &out));
    ok(&with_small(&["encode", "--modality", "text", "--subset", "retrieval"], &out));
    let q = BinaryCodeMatrix::load(dir.join("query_image.lcmb")).unwrap();
    let db = BinaryCodeMatrix::load(dir.join("retrieval_text.lcmb")).unwrap();

    // the file codes equal in-process binarize(embed)
    let cfg = ExperimentConfig::load(dir.join("config.txt")).unwrap();
    let (ds, _, _) = lthash::experiment::build_dataset(&cfg).unwrap();
    let split = SplitFile::load(dir.join("split.json")).unwrap();
    let model = HashModel::load(dir.join("model.lcmh")).unwrap();
    let expect = binarize(&model.features(Modality::Image, &ds.x.select_rows(&split.split.query)).unwrap()).unwrap();
    assert_eq!(q, expect);
    assert_eq!(q.len(), split.split.query.len());
    assert_eq!(db.len(), split.split.retrieval.len());

    let q = dir.join("query_image.lcmb");
    let db = dir.join("retrieval_text.lcmb");
    let stdout = ok(&with_small(
        &["eval", "--query", q.to_str().unwrap(), "--db", db.to_str().unwrap(), "--direction", "i2t"],
        &out,
    ));
    assert!(stdout.starts_with("I2T 16 bits"), "{stdout}");
    let results = fs::read_to_string(dir.join("results.csv")).unwrap();
    // header plus all, head and tail rows
    assert_eq!(results.lines().count(), 4);
}

#[test]
fn zero_epochs_saves_initial_model() {
    let tmp = TempDir::new().unwrap();
    let out = path(&tmp, "z");
    let mut args = with_small(&["train"], &out);
    args.extend_from_slice(&["--set", "epochs=0"]);
    ok(&args);
    let loss = fs::read_to_string(Path::new(&out).join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1);
    let model = HashModel::load(Path::new(&out).join("model.lcmh")).unwrap();
    assert_eq!(model.code_length(), 16);
}

#[test]
fn run_repeats_and_config_round_trips() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (path(&tmp, "a"), path(&tmp, "b"));
    ok(&with_small(&["run", "--seed", "3"], &a));
    let cfg_a = Path::new(&a).join("config.txt");
    // rerun from the written config alone
    ok(&["run", "--config", cfg_a.to_str().unwrap(), "--out", &b]);
    for f in ["split.json", "model.lcmh", "loss.csv", "results.csv", "query_image.lcmb", "db_text.lcmb"] {
        assert_eq!(read(Path::new(&a).join(f)), read(Path::new(&b).join(f)), "{f} differs");
    }
    let ca = ExperimentConfig::load(&cfg_a).unwrap();
    let mut cb = ExperimentConfig::load(Path::new(&b).join("config.txt")).unwrap();
    cb.out = ca.out.clone();
    assert_eq!(ca, cb);
    assert_eq!(ca.seed, 3);
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let stdout = ok(&["gradcheck", "--instances", "5"]);
    assert!(stdout.contains("PASS"), "{stdout}");
    let bad = lthash(&["gradcheck", "--instances", "5", "--corrupt"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
    let sweep = ok(&["gradcheck", "--instances", "3", "--eps", "1e-5,1e-6,1e-7"]);
    assert_eq!(sweep.lines().filter(|l| l.ends_with("PASS")).count(), 3);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = TempDir::new().unwrap();
    let out = path(&tmp, "s");
    ok(&with_small(&["sweep", "--param", "beta", "--values", "0,1,10"], &out));
    let csv = fs::read_to_string(Path::new(&out).join("sweep_beta.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("value,map_i2t,map_t2i"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(lthash(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(lthash(&["sweep", "--param", "gamma", "--values", "1"]).status.code(), Some(1));
    assert_eq!(lthash(&["train", "--set", "nope=1"]).status.code(), Some(1));
    assert_eq!(lthash(&["train", "--set", "epochs"]).status.code(), Some(1));
    let out = path(&tmp, "e");
    let missing = path(&tmp, "missing.lcmh");
    assert_eq!(
        lthash(&["encode", "--modality", "image", "--model", &missing, "--out", &out]).status.code(),
        Some(2)
    );
    let missing_cfg = path(&tmp, "missing.txt");
    assert_eq!(lthash(&["train", "--config", &missing_cfg]).status.code(), Some(2));
    assert_eq!(lthash(&["--help"]).status.code(), Some(0));
}
