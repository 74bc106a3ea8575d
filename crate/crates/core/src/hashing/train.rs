use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::HashModel;
use super::objective::{modality_grad, objective, update_b, with_codes, LossBreakdown, SignMatrix};
use crate::dataset::{build_affinity, split_head_tail, AffinityMatrix, DataSplit, HeadTailPartition, MultiModalDataset};
use crate::embed::{compute_prototypes, EmbedCache, EmbedGrads, EmbedderConfig, MetaEmbedder, PrototypeBank};
use crate::error::{Error, Result};
use crate::tensor::{Adam, Matrix, Optimizer, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain SGD, with momentum when `momentum > 0`.
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::config(format!("unknown optimizer {s:?} (expected sgd or adam)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// SGD only.
    pub momentum: f64,
    pub epochs: usize,
    /// Samples per minibatch within a modality pass.
    pub batch_columns: usize,
    pub seed: u64,
    pub code_length: usize,
    /// Hidden layer widths of both basic networks.
    pub hidden: Vec<usize>,
    /// Multiplies the initial output-layer weights of the basic networks.
    pub init_scale: f64,
    /// Classes with at least this many training samples are head classes.
    pub head_threshold: usize,
    pub embedder: EmbedderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 100,
            batch_columns: 256,
            seed: 0,
            code_length: 32,
            hidden: Vec::new(),
            init_scale: 0.01,
            head_threshold: 100,
            embedder: EmbedderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("alpha and beta must be non-negative"));
        }
        if self.batch_columns == 0 {
            return Err(Error::config("batch_columns must be >= 1"));
        }
        if self.code_length == 0 {
            return Err(Error::config("code_length must be >= 1"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be >= 1"));
        }
        if self.head_threshold == 0 {
            return Err(Error::config("head_threshold must be >= 1"));
        }
        if !(self.embedder.eta_max >= 0.0 && self.embedder.eta_max.is_finite()) {
            return Err(Error::config("eta_max must be a non-negative number"));
        }
        Ok(())
    }
}

/// Objective around one code update, with features held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeStep {
    pub epoch: usize,
    pub before: LossBreakdown,
    pub after: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Objective of the initialized model.
    pub initial: LossBreakdown,
    /// Objective at the end of each epoch (after its code update).
    pub epochs: Vec<LossBreakdown>,
    pub code_steps: Vec<CodeStep>,
}

impl TrainHistory {
    /// Columns `epoch, nll, quantization, balance, total`; one row per epoch,
    /// numbered from 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<W> {
        writeln!(out, "epoch,nll,quantization,balance,total")?;
        for (e, l) in self.epochs.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", e + 1, l.nll, l.quantization, l.balance, l.total)?;
        }
        Ok(out)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)?.flush()?;
        Ok(())
    }
}

/// Optimizer state for one embedder's networks.
struct EmbedderOptim {
    basic: Optimizer,
    weight: Optimizer,
    eta: Optimizer,
}

impl EmbedderOptim {
    fn new(cfg: &TrainConfig) -> Self {
        let s = || match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(cfg.learning_rate, cfg.momentum)),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(cfg.learning_rate)),
        };
        Self {
            basic: s(),
            weight: s(),
            eta: s(),
        }
    }

    fn step(&mut self, e: &mut MetaEmbedder, g: &EmbedGrads) -> Result<()> {
        // Validate everything first so a bad batch leaves all nets untouched.
        let finite = g.basic.is_finite()
            && g.weight.as_ref().is_none_or(|w| w.is_finite())
            && g.eta.as_ref().is_none_or(|w| w.is_finite());
        if !finite {
            return Err(Error::NonFiniteGradient);
        }
        self.basic.step(&mut e.basic_net, &g.basic)?;
        if let Some(w) = &g.weight {
            self.weight.step(&mut e.weight_net, w)?;
        }
        if let (Some(w), Some(net)) = (&g.eta, e.eta_net.as_mut()) {
            self.eta.step(net, w)?;
        }
        Ok(())
    }
}

fn refresh_bank(e: &MetaEmbedder, x: &Matrix, ds: &MultiModalDataset, p: &HeadTailPartition) -> Result<PrototypeBank> {
    compute_prototypes(&e.direct_features(x)?, &ds.labels, p)
}

fn diverged(epoch: usize, batch: usize, msg: impl Into<String>) -> Error {
    Error::Training {
        epoch,
        batch,
        msg: msg.into(),
    }
}

/// `embed_batch` that reports overflowing features as divergence rather
/// than as whatever the memory head trips over.
fn embed_checked(
    e: &MetaEmbedder,
    x: &Matrix,
    bank: &PrototypeBank,
    epoch: usize,
    batch: usize,
) -> Result<(Matrix, EmbedCache)> {
    let diverged_here = || diverged(epoch, batch, "non-finite features");
    match e.embed_batch(x, bank) {
        Ok((v, _)) if !v.is_finite() => Err(diverged_here()),
        Ok(out) => Ok(out),
        Err(err) => match e.direct_features(x) {
            Ok(d) if d.frobenius_sq().is_finite() && bank.centroids.frobenius_sq().is_finite() => Err(err),
            _ => Err(diverged_here()),
        },
    }
}

/// One pass over the columns of a single modality.
#[allow(clippy::too_many_arguments)]
fn modality_pass(
    embedder: &mut MetaEmbedder,
    opt: &mut EmbedderOptim,
    inputs: &Matrix,
    bank: &PrototypeBank,
    v_self: &mut Matrix,
    v_other: &Matrix,
    affinity: &AffinityMatrix,
    codes: &SignMatrix,
    cfg: &TrainConfig,
    order: &[usize],
    epoch: usize,
    first_batch: usize,
) -> Result<usize> {
    let mut batch_no = first_batch;
    for cols in order.chunks(cfg.batch_columns) {
        let (v, cache) = embed_checked(embedder, &inputs.select_rows(cols), bank, epoch, batch_no)?;
        for (t, &i) in cols.iter().enumerate() {
            v_self.set_column(i, &v.column(t));
        }
        let g = modality_grad(
            &v,
            cols,
            v_other,
            affinity,
            &codes.select_cols(cols),
            &v_self.row_sums(),
            cfg.alpha,
            cfg.beta,
        )?;
        let grads = embedder.embed_backward(&cache, bank, &g)?;
        opt.step(embedder, &grads).map_err(|e| match e {
            Error::NonFiniteGradient => diverged(epoch, batch_no, "non-finite gradient"),
            other => other,
        })?;
        batch_no += 1;
    }
    Ok(batch_no)
}

/// Alternating optimization on the training split.
///
/// Each epoch refreshes both prototype banks, runs a shuffled minibatch pass
/// over the image columns and then the text columns (each against the other
/// modality's cached features), and finally recomputes the codes.
pub fn train(
    dataset: &MultiModalDataset,
    split: &DataSplit,
    cfg: &TrainConfig,
) -> Result<(HashModel, TrainHistory)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    if let Some(&bad) = split.train.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::config(format!("training index {bad} out of range")));
    }
    let ds = dataset.subset(&split.train);
    let n = ds.len();
    let classes = ds.num_classes();
    let affinity = build_affinity(&ds.labels, &ds.labels)?;
    let partition = split_head_tail(&ds.labels.class_counts(), cfg.head_threshold)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ex = MetaEmbedder::new(ds.dim_x(), &cfg.hidden, cfg.code_length, classes, cfg.embedder, &mut rng)?;
    let mut ey = MetaEmbedder::new(ds.dim_y(), &cfg.hidden, cfg.code_length, classes, cfg.embedder, &mut rng)?;
    for e in [&mut ex, &mut ey] {
        let last = e.basic_net.layers_mut().last_mut().expect("basic net has layers");
        last.weights = last.weights.scale(cfg.init_scale);
    }
    let mut opt_x = EmbedderOptim::new(cfg);
    let mut opt_y = EmbedderOptim::new(cfg);

    let mut bank_x = refresh_bank(&ex, &ds.x, &ds, &partition)?;
    let mut bank_y = refresh_bank(&ey, &ds.y, &ds, &partition)?;
    let mut vx = embed_checked(&ex, &ds.x, &bank_x, 0, 0)?.0;
    let mut vy = embed_checked(&ey, &ds.y, &bank_y, 0, 0)?.0;
    let mut codes = update_b(&vx, &vy)?;
    let initial = objective(&vx, &vy, &affinity, &codes, cfg.alpha, cfg.beta)?;
    if !initial.is_finite() {
        return Err(diverged(0, 0, "non-finite initial loss"));
    }

    let mut history = TrainHistory {
        initial,
        epochs: Vec::with_capacity(cfg.epochs),
        code_steps: Vec::with_capacity(cfg.epochs),
    };
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        bank_x = refresh_bank(&ex, &ds.x, &ds, &partition)?;
        bank_y = refresh_bank(&ey, &ds.y, &ds, &partition)?;
        vx = embed_checked(&ex, &ds.x, &bank_x, epoch, 0)?.0;
        vy = embed_checked(&ey, &ds.y, &bank_y, epoch, 0)?.0;

        order.shuffle(&mut rng);
        let batch = modality_pass(
            &mut ex, &mut opt_x, &ds.x, &bank_x, &mut vx, &vy, &affinity, &codes, cfg, &order, epoch, 0,
        )?;
        order.shuffle(&mut rng);
        let t_aff = affinity.transpose();
        modality_pass(
            &mut ey, &mut opt_y, &ds.y, &bank_y, &mut vy, &vx, &t_aff, &codes, cfg, &order, epoch, batch,
        )?;

        vx = embed_checked(&ex, &ds.x, &bank_x, epoch, batch)?.0;
        vy = embed_checked(&ey, &ds.y, &bank_y, epoch, batch)?.0;
        let before = objective(&vx, &vy, &affinity, &codes, cfg.alpha, cfg.beta)?;
        codes = update_b(&vx, &vy)?;
        let after = with_codes(&before, &vx, &vy, &codes, cfg.alpha, cfg.beta)?;
        if !after.is_finite() || !before.is_finite() {
            return Err(diverged(epoch, batch, "non-finite loss"));
        }
        history.code_steps.push(CodeStep { epoch, before, after });
        history.epochs.push(after);
    }

    // Centroids of the final networks, used when encoding new samples.
    if cfg.epochs > 0 {
        bank_x = refresh_bank(&ex, &ds.x, &ds, &partition)?;
        bank_y = refresh_bank(&ey, &ds.y, &ds, &partition)?;
    }
    let model = HashModel {
        embedder_x: ex,
        embedder_y: ey,
        bank_x,
        bank_y,
        codes,
        alpha: cfg.alpha,
        beta: cfg.beta,
        head_threshold: cfg.head_threshold,
    };
    Ok((model, history))
}
