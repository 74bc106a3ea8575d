use std::io::{Read, Write};

use rand::Rng;

use super::bank::PrototypeBank;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{dot, Activation, FeedForwardNet, ForwardCache, Matrix, NetGrads};

const RATIO_EPS: f64 = 1e-12;

/// How the memory trade-off η is obtained for each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaMode {
    /// `d_tail / d_head`: nearest-tail over nearest-head squared distance.
    AsPrinted,
    /// `d_head / d_tail`: small near head prototypes, large near tail ones.
    IntentRatio,
    /// `σ(eta_net(v_direct))`.
    Learned,
}

impl EtaMode {
    pub fn name(self) -> &'static str {
        match self {
            EtaMode::AsPrinted => "as_printed",
            EtaMode::IntentRatio => "intent_ratio",
            EtaMode::Learned => "learned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "as_printed" => EtaMode::AsPrinted,
            "intent_ratio" => EtaMode::IntentRatio,
            "learned" => EtaMode::Learned,
            _ => return Err(Error::config(format!("unknown eta_mode {s:?}"))),
        })
    }

    fn tag(self) -> u8 {
        match self {
            EtaMode::AsPrinted => 0,
            EtaMode::IntentRatio => 1,
            EtaMode::Learned => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            0 => EtaMode::AsPrinted,
            1 => EtaMode::IntentRatio,
            2 => EtaMode::Learned,
            _ => return None,
        })
    }
}

/// Normalization of the weight network's per-class outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightNorm {
    /// Softmax over non-empty classes.
    Softmax,
    /// Raw outputs, zeroed on empty classes.
    Raw,
}

impl WeightNorm {
    pub fn name(self) -> &'static str {
        match self {
            WeightNorm::Softmax => "softmax",
            WeightNorm::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "softmax" => WeightNorm::Softmax,
            "raw" => WeightNorm::Raw,
            _ => return Err(Error::config(format!("unknown weight_norm {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedderConfig {
    pub eta_mode: EtaMode,
    pub eta_max: f64,
    pub weight_norm: WeightNorm,
    /// When false the embedder returns direct features unchanged.
    pub use_memory: bool,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            eta_mode: EtaMode::IntentRatio,
            eta_max: 10.0,
            weight_norm: WeightNorm::Softmax,
            use_memory: true,
        }
    }
}

/// Direct-feature network plus the prototype memory head.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaEmbedder {
    pub basic_net: FeedForwardNet,
    pub weight_net: FeedForwardNet,
    pub eta_net: Option<FeedForwardNet>,
    pub config: EmbedderConfig,
}

/// Everything computed for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaFeature {
    pub v_direct: Vec<f64>,
    pub v_memory: Vec<f64>,
    pub v_meta: Vec<f64>,
    pub eta: f64,
    pub weights: Vec<f64>,
}

/// Intermediate values of [`MetaEmbedder::embed_batch`] needed for backprop.
#[derive(Debug, Clone)]
pub struct EmbedCache {
    basic: ForwardCache,
    weight: Option<ForwardCache>,
    eta: Option<ForwardCache>,
    /// `batch × L`.
    weights: Matrix,
    /// `batch × c`.
    memory: Matrix,
    etas: Vec<f64>,
    /// `batch × c`.
    direct: Matrix,
}

impl EmbedCache {
    pub fn direct(&self) -> &Matrix {
        &self.direct
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn memory(&self) -> &Matrix {
        &self.memory
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedGrads {
    pub basic: NetGrads,
    pub weight: Option<NetGrads>,
    pub eta: Option<NetGrads>,
}

impl MetaEmbedder {
    /// `input_dim → hidden… → code_length` basic network (ReLU hidden,
    /// identity output), a single-layer `code_length → num_classes` weight
    /// network, and for learned η a `code_length → 1` sigmoid unit.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        code_length: usize,
        num_classes: usize,
        config: EmbedderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(code_length);
        let basic_net = FeedForwardNet::mlp(&dims, Activation::Relu, Activation::Identity, rng)?;
        let weight_net = FeedForwardNet::mlp(&[code_length, num_classes], Activation::Identity, Activation::Identity, rng)?;
        let eta_net = match config.eta_mode {
            EtaMode::Learned => Some(FeedForwardNet::mlp(&[code_length, 1], Activation::Identity, Activation::Sigmoid, rng)?),
            _ => None,
        };
        let e = Self {
            basic_net,
            weight_net,
            eta_net,
            config,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.code_length();
        if self.weight_net.input_dim() != c {
            return Err(Error::config("weight network input must equal the code length"));
        }
        if let Some(net) = &self.eta_net {
            if net.input_dim() != c || net.output_dim() != 1 {
                return Err(Error::config("eta network must map the code length to one output"));
            }
        }
        if self.config.eta_mode == EtaMode::Learned && self.eta_net.is_none() {
            return Err(Error::config("learned eta mode needs an eta network"));
        }
        if !(self.config.eta_max >= 0.0) {
            return Err(Error::config("eta_max must be non-negative"));
        }
        Ok(())
    }

    pub fn code_length(&self) -> usize {
        self.basic_net.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.basic_net.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.weight_net.output_dim()
    }

    /// Direct features, `batch × c`.
    pub fn direct_features(&self, batch: &Matrix) -> Result<Matrix> {
        self.basic_net.predict(batch)
    }

    pub fn memory_feature(&self, v_direct: &[f64], bank: &PrototypeBank) -> Result<(Vec<f64>, Vec<f64>)> {
        memory_feature(v_direct, bank, &self.weight_net, self.config.weight_norm)
    }

    pub fn eta(&self, v_direct: &[f64], bank: &PrototypeBank) -> Result<f64> {
        match self.config.eta_mode {
            EtaMode::Learned => {
                let net = self.eta_net.as_ref().ok_or_else(|| Error::config("learned eta mode needs an eta network"))?;
                let out = net.predict(&Matrix::from_vec(1, v_direct.len(), v_direct.to_vec())?)?;
                Ok(out[(0, 0)])
            }
            mode => ratio_eta(v_direct, bank, mode, self.config.eta_max),
        }
    }

    /// `v_meta = v_direct + η·v_memory` for one direct feature vector.
    pub fn meta_feature(&self, v_direct: &[f64], bank: &PrototypeBank) -> Result<MetaFeature> {
        if !self.config.use_memory {
            return Ok(MetaFeature {
                v_direct: v_direct.to_vec(),
                v_memory: vec![0.0; v_direct.len()],
                v_meta: v_direct.to_vec(),
                eta: 0.0,
                weights: vec![0.0; bank.num_classes()],
            });
        }
        let (v_memory, weights) = self.memory_feature(v_direct, bank)?;
        let eta = self.eta(v_direct, bank)?;
        Ok(combine(v_direct, v_memory, eta, weights))
    }

    /// Meta features for a `batch × d` input, returned as `c × batch`.
    pub fn embed_batch(&self, batch: &Matrix, bank: &PrototypeBank) -> Result<(Matrix, EmbedCache)> {
        self.embed_batch_with(batch, bank, None)
    }

    /// Like [`embed_batch`](Self::embed_batch), optionally pinning η per
    /// sample (used to check gradients with η held constant).
    pub(crate) fn embed_batch_with(
        &self,
        batch: &Matrix,
        bank: &PrototypeBank,
        eta_override: Option<&[f64]>,
    ) -> Result<(Matrix, EmbedCache)> {
        let (direct, basic) = self.basic_net.forward(batch)?;
        let n = direct.rows();
        let c = direct.cols();
        let l = self.num_classes();
        if !self.config.use_memory {
            return Ok((
                direct.transpose(),
                EmbedCache {
                    basic,
                    weight: None,
                    eta: None,
                    weights: Matrix::zeros(n, l),
                    memory: Matrix::zeros(n, c),
                    etas: vec![0.0; n],
                    direct,
                },
            ));
        }
        if bank.num_classes() != l || bank.dim() != c {
            return Err(Error::shape("embed_batch(bank)", bank.centroids.shape(), (l, c)));
        }
        if bank.active_classes().next().is_none() {
            return Err(Error::config("prototype bank has no non-empty class"));
        }
        let (logits, weight_cache) = self.weight_net.forward(&direct)?;
        let mut weights = Matrix::zeros(n, l);
        for i in 0..n {
            normalize_weights(logits.row(i), bank, self.config.weight_norm, weights.row_mut(i));
        }
        let memory = weights.matmul(&bank.centroids)?;

        let (etas, eta_cache) = match (eta_override, self.config.eta_mode) {
            (Some(e), _) => {
                if e.len() != n {
                    return Err(Error::shape("embed_batch(eta)", (e.len(), 1), (n, 1)));
                }
                (e.to_vec(), None)
            }
            (None, EtaMode::Learned) => {
                let net = self.eta_net.as_ref().ok_or_else(|| Error::config("learned eta mode needs an eta network"))?;
                let (out, cache) = net.forward(&direct)?;
                (out.column(0), Some(cache))
            }
            (None, mode) => {
                let etas = (0..n)
                    .map(|i| ratio_eta(direct.row(i), bank, mode, self.config.eta_max))
                    .collect::<Result<Vec<_>>>()?;
                (etas, None)
            }
        };

        let mut meta = Matrix::zeros(c, n);
        for i in 0..n {
            let (d, m) = (direct.row(i), memory.row(i));
            for k in 0..c {
                meta[(k, i)] = d[k] + etas[i] * m[k];
            }
        }
        Ok((
            meta,
            EmbedCache {
                basic,
                weight: Some(weight_cache),
                eta: eta_cache,
                weights,
                memory,
                etas,
                direct,
            },
        ))
    }

    /// Backpropagates `dL/dV_meta` (`c × batch`). Prototypes are constants;
    /// ratio-mode η is a constant; learned η is differentiated.
    pub fn embed_backward(&self, cache: &EmbedCache, bank: &PrototypeBank, grad_meta: &Matrix) -> Result<EmbedGrads> {
        let n = cache.direct.rows();
        let c = cache.direct.cols();
        if grad_meta.shape() != (c, n) {
            return Err(Error::shape("embed_backward", grad_meta.shape(), (c, n)));
        }
        let g = grad_meta.transpose();
        let mut d_direct = g.clone();
        let mut weight_grads = None;
        let mut eta_grads = None;

        if let Some(weight_cache) = &cache.weight {
            let mut d_mem = g.clone();
            for i in 0..n {
                let e = cache.etas[i];
                d_mem.row_mut(i).iter_mut().for_each(|v| *v *= e);
            }
            let d_w = d_mem.matmul_t(&bank.centroids)?;
            let mut d_logits = Matrix::zeros(n, self.num_classes());
            for i in 0..n {
                weight_logit_grad(cache.weights.row(i), d_w.row(i), bank, self.config.weight_norm, d_logits.row_mut(i));
            }
            let (wg, dd) = self.weight_net.backward(weight_cache, &d_logits)?;
            d_direct.add_scaled(&dd, 1.0)?;
            weight_grads = Some(wg);

            if let (Some(eta_cache), Some(net)) = (&cache.eta, &self.eta_net) {
                let d_eta = Matrix::from_fn(n, 1, |i, _| dot(g.row(i), cache.memory.row(i)));
                let (eg, dd) = net.backward(eta_cache, &d_eta)?;
                d_direct.add_scaled(&dd, 1.0)?;
                eta_grads = Some(eg);
            }
        }

        let (basic, _) = self.basic_net.backward(&cache.basic, &d_direct)?;
        Ok(EmbedGrads {
            basic,
            weight: weight_grads,
            eta: eta_grads,
        })
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut Writer<W>) -> std::io::Result<()> {
        w.u8(self.config.eta_mode.tag())?;
        w.f64(self.config.eta_max)?;
        w.u8(match self.config.weight_norm {
            WeightNorm::Softmax => 0,
            WeightNorm::Raw => 1,
        })?;
        w.u8(self.config.use_memory as u8)?;
        self.basic_net.write_to(w)?;
        self.weight_net.write_to(w)?;
        match &self.eta_net {
            Some(net) => {
                w.u8(1)?;
                net.write_to(w)
            }
            None => w.u8(0),
        }
    }

    pub(crate) fn read_from<R: Read>(r: &mut Reader<R>) -> Result<Self> {
        let at = r.offset();
        let tag = r.u8()?;
        let eta_mode = EtaMode::from_tag(tag).ok_or_else(|| Error::format(at, format!("bad eta mode tag {tag}")))?;
        let eta_max = r.f64()?;
        let at = r.offset();
        let weight_norm = match r.u8()? {
            0 => WeightNorm::Softmax,
            1 => WeightNorm::Raw,
            t => return Err(Error::format(at, format!("bad weight norm tag {t}"))),
        };
        let use_memory = r.u8()? != 0;
        let basic_net = FeedForwardNet::read_from(r)?;
        let weight_net = FeedForwardNet::read_from(r)?;
        let eta_net = match r.u8()? {
            0 => None,
            _ => Some(FeedForwardNet::read_from(r)?),
        };
        let e = Self {
            basic_net,
            weight_net,
            eta_net,
            config: EmbedderConfig {
                eta_mode,
                eta_max,
                weight_norm,
                use_memory,
            },
        };
        e.validate().map_err(|err| Error::format(r.offset(), err.to_string()))?;
        Ok(e)
    }
}

fn combine(v_direct: &[f64], v_memory: Vec<f64>, eta: f64, weights: Vec<f64>) -> MetaFeature {
    let v_meta = v_direct.iter().zip(&v_memory).map(|(d, m)| d + eta * m).collect();
    MetaFeature {
        v_direct: v_direct.to_vec(),
        v_memory,
        v_meta,
        eta,
        weights,
    }
}

/// Weighted prototype combination `Σ w_k C_k` with weights from
/// `weight_net(v_direct)`. Returns `(v_memory, w)`.
pub fn memory_feature(
    v_direct: &[f64],
    bank: &PrototypeBank,
    weight_net: &FeedForwardNet,
    norm: WeightNorm,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if bank.active_classes().next().is_none() {
        return Err(Error::config("prototype bank has no non-empty class"));
    }
    if weight_net.output_dim() != bank.num_classes() {
        return Err(Error::shape(
            "memory_feature",
            (weight_net.output_dim(), 1),
            (bank.num_classes(), 1),
        ));
    }
    let logits = weight_net.predict(&Matrix::from_vec(1, v_direct.len(), v_direct.to_vec())?)?;
    let mut w = vec![0.0; bank.num_classes()];
    normalize_weights(logits.row(0), bank, norm, &mut w);
    let mut mem = vec![0.0; bank.dim()];
    for k in bank.active_classes() {
        for (m, c) in mem.iter_mut().zip(bank.centroid(k)) {
            *m += w[k] * c;
        }
    }
    Ok((mem, w))
}

/// Ratio-mode η from squared distances to the nearest head and nearest
/// tail prototypes. Denominator floored at 1e-12, result clamped to
/// `[0, eta_max]`.
pub fn ratio_eta(v_direct: &[f64], bank: &PrototypeBank, mode: EtaMode, eta_max: f64) -> Result<f64> {
    let mut d_head = f64::INFINITY;
    let mut d_tail = f64::INFINITY;
    for k in bank.active_classes() {
        let d: f64 = v_direct
            .iter()
            .zip(bank.centroid(k))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if bank.is_head[k] {
            d_head = d_head.min(d);
        } else {
            d_tail = d_tail.min(d);
        }
    }
    if d_head.is_infinite() || d_tail.is_infinite() {
        return Err(Error::config(
            "ratio eta needs at least one non-empty head class and one non-empty tail class",
        ));
    }
    let (num, den) = match mode {
        EtaMode::AsPrinted => (d_tail, d_head),
        EtaMode::IntentRatio => (d_head, d_tail),
        EtaMode::Learned => return Err(Error::config("learned eta is not a ratio mode")),
    };
    Ok((num / den.max(RATIO_EPS)).clamp(0.0, eta_max))
}

fn normalize_weights(logits: &[f64], bank: &PrototypeBank, norm: WeightNorm, out: &mut [f64]) {
    match norm {
        WeightNorm::Softmax => {
            let max = bank
                .active_classes()
                .map(|k| logits[k])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (k, o) in out.iter_mut().enumerate() {
                *o = if bank.is_active(k) { (logits[k] - max).exp() } else { 0.0 };
                total += *o;
            }
            out.iter_mut().for_each(|v| *v /= total);
        }
        WeightNorm::Raw => {
            for (k, o) in out.iter_mut().enumerate() {
                *o = if bank.is_active(k) { logits[k] } else { 0.0 };
            }
        }
    }
}

fn weight_logit_grad(w: &[f64], d_w: &[f64], bank: &PrototypeBank, norm: WeightNorm, out: &mut [f64]) {
    match norm {
        WeightNorm::Softmax => {
            let inner: f64 = w.iter().zip(d_w).map(|(a, b)| a * b).sum();
            for (k, o) in out.iter_mut().enumerate() {
                *o = if bank.is_active(k) { w[k] * (d_w[k] - inner) } else { 0.0 };
            }
        }
        WeightNorm::Raw => {
            for (k, o) in out.iter_mut().enumerate() {
                *o = if bank.is_active(k) { d_w[k] } else { 0.0 };
            }
        }
    }
}
