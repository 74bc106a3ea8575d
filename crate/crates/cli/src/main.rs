use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lthash::dataset::save_dataset;
use lthash::experiment::{
    build_dataset, encode_subset, prepare, run_to_dir, save_sweep_csv, sweep, ExperimentConfig, SplitFile, SweepParam,
    CONFIG_FILE, LOSS_FILE, MODEL_FILE, RESULTS_FILE, SPLIT_FILE,
};
use lthash::hashing::{gradcheck, train, GradcheckOptions, HashModel, Modality, GRADCHECK_TOLERANCE};
use lthash::retrieval::{evaluate, save_results_csv, BinaryCodeMatrix, Direction};
use lthash::{Error, Result};

#[derive(Parser)]
#[command(name = "lthash", version, about = "Cross-modal hashing with prototype memory for long-tailed data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command.
#[derive(Args, Clone, Default)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Dataset file to write (default OUT/dataset.lcmd).
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Train a model; writes the split, model and loss history.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Encode one modality of a dataset subset into a code file.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        #[arg(long, value_parser = parse_modality)]
        modality: Modality,
        #[arg(long, value_enum, default_value = "all")]
        subset: Subset,
        /// Split file (default OUT/split.json); unused for `--subset all`.
        #[arg(long, value_name = "PATH")]
        split: Option<PathBuf>,
        /// Code file to write (default OUT/SUBSET_MODALITY.lcmb).
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Rank database codes for every query code and report MAP.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        query: PathBuf,
        #[arg(long, value_name = "PATH")]
        db: PathBuf,
        #[arg(long, value_parser = parse_direction)]
        direction: Direction,
        /// Split file with query/retrieval indices and the head/tail partition.
        #[arg(long, value_name = "PATH")]
        split: Option<PathBuf>,
        /// Result table to write (default OUT/results.csv).
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Train, encode and evaluate in one go.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random instances per suite.
        #[arg(long, default_value_t = 50)]
        instances: usize,
        /// Difference steps; more than one runs a sweep.
        #[arg(long, value_delimiter = ',', default_value = "1e-6")]
        eps: Vec<f64>,
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Train once per value of alpha or beta (the other fixed at 1).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_param)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Subset {
    All,
    Train,
    Query,
    Retrieval,
}

fn parse_modality(s: &str) -> std::result::Result<Modality, String> {
    Modality::parse(s).map_err(|e| e.to_string())
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    Direction::parse(s).map_err(|e| e.to_string())
}

fn parse_param(s: &str) -> std::result::Result<SweepParam, String> {
    SweepParam::parse(s).map_err(|e| e.to_string())
}

/// Creates the output directory and records the effective config there.
fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)?;
    cfg.save(cfg.out.join(CONFIG_FILE))?;
    Ok(&cfg.out)
}

fn cmd_synth(common: &Common, output: Option<PathBuf>) -> Result<()> {
    let cfg = common.config()?;
    if cfg.long_tail_spec().is_none() {
        return Err(Error::Config("synth needs a synthetic dataset (flickr or nus_wide)".into()));
    }
    let (ds, _, _) = build_dataset(&cfg)?;
    let dir = out_dir(&cfg)?;
    let path = output.unwrap_or_else(|| dir.join("dataset.lcmd"));
    save_dataset(&ds, &path)?;
    println!("wrote {} ({} samples, {} classes)", path.display(), ds.len(), ds.num_classes());
    for (k, count) in ds.labels.class_counts().iter().enumerate() {
        let name = ds.class_names.as_ref().map_or_else(|| format!("class{k}"), |n| n[k].clone());
        println!("{name}\t{count}");
    }
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let dir = out_dir(&cfg)?;
    let prepared = prepare(&cfg)?;
    let (model, history) = train(&prepared.dataset, &prepared.split, &prepared.train)?;
    SplitFile {
        split: prepared.split,
        partition: prepared.partition,
    }
    .save(dir.join(SPLIT_FILE))?;
    model.save(dir.join(MODEL_FILE))?;
    history.save_csv(dir.join(LOSS_FILE))?;
    match history.epochs.last() {
        Some(l) => println!("epoch {}: total {:.6e} (initial {:.6e})", history.epochs.len(), l.total, history.initial.total),
        None => println!("no epochs run; saved the initial model"),
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn load_split(dir: &Path, split: Option<PathBuf>) -> Result<SplitFile> {
    SplitFile::load(split.unwrap_or_else(|| dir.join(SPLIT_FILE)))
}

fn cmd_encode(
    common: &Common,
    model: Option<PathBuf>,
    modality: Modality,
    subset: Subset,
    split: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<()> {
    let cfg = common.config()?;
    let dir = out_dir(&cfg)?;
    let model = HashModel::load(model.unwrap_or_else(|| dir.join(MODEL_FILE)))?;
    let (ds, _, _) = build_dataset(&cfg)?;
    let (name, idx) = match subset {
        Subset::All => ("all", (0..ds.len()).collect()),
        Subset::Train => ("train", load_split(dir, split)?.split.train),
        Subset::Query => ("query", load_split(dir, split)?.split.query),
        Subset::Retrieval => ("retrieval", load_split(dir, split)?.split.retrieval),
    };
    let codes = encode_subset(&model, &ds, &idx, modality)?;
    let path = output.unwrap_or_else(|| dir.join(format!("{name}_{}.lcmb", modality.name())));
    codes.save(&path)?;
    println!("wrote {} ({} codes, {} bits)", path.display(), codes.len(), codes.code_length());
    Ok(())
}

fn cmd_eval(
    common: &Common,
    query: &Path,
    db: &Path,
    direction: Direction,
    split: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<()> {
    let cfg = common.config()?;
    let dir = out_dir(&cfg)?;
    let split = load_split(dir, split)?;
    let (ds, _, _) = build_dataset(&cfg)?;
    let qcodes = BinaryCodeMatrix::load(query)?;
    let dbcodes = BinaryCodeMatrix::load(db)?;
    let ql = ds.labels.select_rows(&split.split.query);
    let dl = ds.labels.select_rows(&split.split.retrieval);
    let result = evaluate(&qcodes, &ql, &dbcodes, &dl, &split.partition, direction)?;
    let path = output.unwrap_or_else(|| dir.join(RESULTS_FILE));
    save_results_csv(std::slice::from_ref(&result), &path)?;
    print_result(&result);
    Ok(())
}

fn print_result(r: &lthash::retrieval::RetrievalResult) {
    let fmt = |m: Option<f64>| m.map_or("-".to_string(), |m| format!("{m:.4}"));
    println!(
        "{} {} bits: map {:.4}  head {} ({})  tail {} ({})",
        r.direction.name(),
        r.code_bits,
        r.map,
        fmt(r.map_head),
        r.num_head(),
        fmt(r.map_tail),
        r.num_tail()
    );
}

fn cmd_run(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let out = run_to_dir(&cfg, &cfg.out)?;
    for r in &out.results {
        print_result(r);
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

/// Returns whether every step passed.
fn cmd_gradcheck(common: &Common, instances: usize, eps: &[f64], corrupt: bool) -> Result<bool> {
    let cfg = common.config()?;
    let mut ok = true;
    for &e in eps {
        let report = gradcheck(&GradcheckOptions {
            instances,
            seed: cfg.seed,
            eps: e,
            corrupt,
        })?;
        for s in &report.suites {
            println!("eps {e:e}  {:<24} {:>4} instances  max rel error {:.3e}", s.name, s.instances, s.max_error);
        }
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!("eps {e:e}  max rel error {:.3e} (limit {GRADCHECK_TOLERANCE:e}): {verdict}", report.max_error());
        ok &= report.passed();
    }
    Ok(ok)
}

fn cmd_sweep(common: &Common, param: SweepParam, values: &[f64]) -> Result<()> {
    let cfg = common.config()?;
    let dir = out_dir(&cfg)?;
    let rows = sweep(&cfg, param, values)?;
    let path = dir.join(format!("sweep_{}.csv", param.name()));
    save_sweep_csv(&rows, &path)?;
    println!("{}\tmap_i2t\tmap_t2i", param.name());
    for r in &rows {
        println!("{}\t{:.4}\t{:.4}", r.value, r.map_i2t, r.map_t2i);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Synth { common, output } => cmd_synth(&common, output).map(|_| true),
        Command::Train { common } => cmd_train(&common).map(|_| true),
        Command::Encode {
            common,
            model,
            modality,
            subset,
            split,
            output,
        } => cmd_encode(&common, model, modality, subset, split, output).map(|_| true),
        Command::Eval {
            common,
            query,
            db,
            direction,
            split,
            output,
        } => cmd_eval(&common, &query, &db, direction, split, output).map(|_| true),
        Command::Run { common } => cmd_run(&common).map(|_| true),
        Command::Gradcheck {
            common,
            instances,
            eps,
            corrupt,
        } => cmd_gradcheck(&common, instances, &eps, corrupt),
        Command::Sweep { common, param, values } => cmd_sweep(&common, param, &values).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
