//! Finite-difference checks of the analytic gradients.
//!
//! Two suites run on random small instances:
//!
//! * `objective`: `grad_vx`/`grad_vy` against central differences of the
//!   joint objective with the features as free variables.
//! * `embedder/<mode>`: the full chain objective → meta features → network
//!   parameters, for every η mode. Ratio-mode η is a stop-gradient constant,
//!   so it is pinned at its base value while differencing.
//!
//! Errors are norm-relative: `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::objective::{grad_vx, grad_vy, modality_grad, objective, update_b, SignMatrix};
use crate::dataset::{build_affinity, split_head_tail, AffinityMatrix, LabelMatrix};
use crate::embed::{compute_prototypes, EmbedderConfig, EtaMode, MetaEmbedder, PrototypeBank, WeightNorm};
use crate::error::{Error, Result};
use crate::tensor::{finite_diff_grad, FeedForwardNet, Matrix, NetGrads};

/// Errors above this fail the check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    /// Random instances per suite.
    pub instances: usize,
    pub seed: u64,
    /// Central-difference step.
    pub eps: f64,
    /// Test hook: scale every analytic gradient by 1.01 so the check must
    /// fail.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: 50,
            seed: 0,
            eps: 1e-6,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub instances: usize,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub eps: f64,
    pub suites: Vec<SuiteResult>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.suites.iter().map(|s| s.max_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= GRADCHECK_TOLERANCE
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    diff / norm(analytic).max(norm(numeric)).max(1e-300)
}

fn random_labels(rng: &mut impl Rng, n: usize, classes: usize) -> LabelMatrix {
    let rows: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut r = vec![rng.random_range(0..classes)];
            if rng.random_bool(0.2) {
                let k = rng.random_range(0..classes);
                if !r.contains(&k) {
                    r.push(k);
                }
            }
            r
        })
        .collect();
    LabelMatrix::from_rows(&rows, classes).expect("labels in range")
}

fn corrupt_factor(opts: &GradcheckOptions) -> f64 {
    if opts.corrupt {
        1.01
    } else {
        1.0
    }
}

/// Worst error over both modalities for one random objective instance with
/// `n, c ≤ 8`.
pub fn objective_instance(rng: &mut impl Rng, opts: &GradcheckOptions) -> Result<f64> {
    let c = rng.random_range(1..=8);
    let n = rng.random_range(1..=8);
    let vx = Matrix::random_uniform(c, n, 1.5, rng);
    let vy = Matrix::random_uniform(c, n, 1.5, rng);
    let labels = random_labels(rng, n, 3);
    let a = build_affinity(&labels, &labels)?;
    let b = SignMatrix::from_fn(c, n, |_, _| rng.random_bool(0.5));
    let (alpha, beta) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
    let f = |x: &Matrix, y: &Matrix| objective(x, y, &a, &b, alpha, beta).map(|l| l.total);
    let h = opts.eps;

    let mut worst: f64 = 0.0;
    for image_side in [true, false] {
        let g = if image_side {
            grad_vx(&vx, &vy, &a, &b, alpha, beta)?
        } else {
            grad_vy(&vx, &vy, &a, &b, alpha, beta)?
        };
        let mut numeric = Vec::with_capacity(c * n);
        for k in 0..c {
            for i in 0..n {
                let base = if image_side { &vx } else { &vy };
                let (mut up, mut down) = (base.clone(), base.clone());
                up[(k, i)] += h;
                down[(k, i)] -= h;
                let d = if image_side {
                    f(&up, &vy)? - f(&down, &vy)?
                } else {
                    f(&vx, &up)? - f(&vx, &down)?
                };
                numeric.push(d / (2.0 * h));
            }
        }
        let analytic: Vec<f64> = g.as_slice().iter().map(|v| v * corrupt_factor(opts)).collect();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Embedder plus the fixed data its chain loss is evaluated on.
struct ChainInstance {
    embedder: MetaEmbedder,
    x: Matrix,
    bank: PrototypeBank,
    vy: Matrix,
    affinity: AffinityMatrix,
    codes: SignMatrix,
    alpha: f64,
    beta: f64,
    pinned: Option<Vec<f64>>,
}

impl ChainInstance {
    fn new(rng: &mut impl Rng, mode: EtaMode) -> Result<Self> {
        let (d, c, classes) = (rng.random_range(2..=5), rng.random_range(2..=6), 4);
        let n = rng.random_range(5..=8);
        let config = EmbedderConfig {
            eta_mode: mode,
            weight_norm: if rng.random_bool(0.5) {
                WeightNorm::Softmax
            } else {
                WeightNorm::Raw
            },
            ..EmbedderConfig::default()
        };
        let embedder = MetaEmbedder::new(d, &[5], c, classes, config, rng)?;
        let x = Matrix::random_uniform(n, d, 1.0, rng);
        // class 0 is the only head class; the last two samples fall in tail classes
        let rows: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                if i + 2 < n {
                    vec![0]
                } else {
                    vec![rng.random_range(1..classes)]
                }
            })
            .collect();
        let labels = LabelMatrix::from_rows(&rows, classes)?;
        let partition = split_head_tail(&labels.class_counts(), 3)?;
        let bank = compute_prototypes(&embedder.direct_features(&x)?, &labels, &partition)?;
        let vy = Matrix::random_uniform(c, n, 1.0, rng);
        let affinity = build_affinity(&labels, &labels)?;
        let (v0, cache) = embedder.embed_batch(&x, &bank)?;
        let codes = update_b(&v0, &vy)?;
        let pinned = (mode != EtaMode::Learned).then(|| cache.etas().to_vec());
        Ok(Self {
            embedder,
            x,
            bank,
            vy,
            affinity,
            codes,
            alpha: rng.random_range(0.0..2.0),
            beta: rng.random_range(0.0..2.0),
            pinned,
        })
    }

    fn loss(&self, e: &MetaEmbedder) -> f64 {
        let (v, _) = e
            .embed_batch_with(&self.x, &self.bank, self.pinned.as_deref())
            .expect("shapes fixed at construction");
        objective(&v, &self.vy, &self.affinity, &self.codes, self.alpha, self.beta)
            .expect("shapes fixed at construction")
            .total
    }

    fn analytic(&self) -> Result<(NetGrads, Option<NetGrads>, Option<NetGrads>)> {
        let (v, cache) = self.embedder.embed_batch_with(&self.x, &self.bank, self.pinned.as_deref())?;
        let rows: Vec<usize> = (0..v.cols()).collect();
        let g = modality_grad(
            &v,
            &rows,
            &self.vy,
            &self.affinity,
            &self.codes,
            &v.row_sums(),
            self.alpha,
            self.beta,
        )?;
        let grads = self.embedder.embed_backward(&cache, &self.bank, &g)?;
        Ok((grads.basic, grads.weight, grads.eta))
    }
}

fn numeric_for(inst: &ChainInstance, net: &FeedForwardNet, eps: f64, set: impl Fn(&mut MetaEmbedder, &FeedForwardNet)) -> Vec<f64> {
    finite_diff_grad(
        net,
        |probe| {
            let mut e = inst.embedder.clone();
            set(&mut e, probe);
            inst.loss(&e)
        },
        eps,
    )
    .flatten()
}

/// Worst error over the networks of one random embedder instance.
fn chain_instance(rng: &mut impl Rng, mode: EtaMode, opts: &GradcheckOptions) -> Result<f64> {
    let inst = ChainInstance::new(rng, mode)?;
    let (basic, weight, eta) = inst.analytic()?;
    let scale = |g: &NetGrads| -> Vec<f64> { g.flatten().iter().map(|v| v * corrupt_factor(opts)).collect() };

    let e = &inst.embedder;
    let mut worst = relative_error(
        &scale(&basic),
        &numeric_for(&inst, &e.basic_net, opts.eps, |e, n| e.basic_net = n.clone()),
    );
    if let Some(w) = &weight {
        let fd = numeric_for(&inst, &e.weight_net, opts.eps, |e, n| e.weight_net = n.clone());
        worst = worst.max(relative_error(&scale(w), &fd));
    }
    if let (Some(g), Some(net)) = (&eta, &e.eta_net) {
        let fd = numeric_for(&inst, net, opts.eps, |e, n| e.eta_net = Some(n.clone()));
        worst = worst.max(relative_error(&scale(g), &fd));
    }
    Ok(worst)
}

/// Runs every suite with `opts.instances` instances each.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if !(opts.eps > 0.0 && opts.eps.is_finite()) {
        return Err(Error::config("gradcheck eps must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut suites = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..opts.instances {
        worst = worst.max(objective_instance(&mut rng, opts)?);
    }
    suites.push(SuiteResult {
        name: "objective".into(),
        instances: opts.instances,
        max_error: worst,
    });

    for mode in [EtaMode::IntentRatio, EtaMode::AsPrinted, EtaMode::Learned] {
        let mut worst: f64 = 0.0;
        for _ in 0..opts.instances {
            worst = worst.max(chain_instance(&mut rng, mode, opts)?);
        }
        suites.push(SuiteResult {
            name: format!("embedder/{}", mode.name()),
            instances: opts.instances,
            max_error: worst,
        });
    }
    Ok(GradcheckReport { eps: opts.eps, suites })
}
