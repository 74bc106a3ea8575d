use std::io::{Read, Write};

use rand::Rng;

use super::activation::Activation;
use super::matrix::Matrix;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `output_dim × input_dim`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Fully connected feed-forward network. Batches are `samples × features`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    layers: Vec<Layer>,
}

/// Activations retained from [`FeedForwardNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn output(&self) -> &Matrix {
        self.post.last().unwrap_or(&self.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter of a [`FeedForwardNet`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrad>,
}

impl NetGrads {
    pub fn zeros_like(net: &FeedForwardNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.spec.output_dim, l.spec.input_dim),
                    bias: vec![0.0; l.spec.output_dim],
                })
                .collect(),
        }
    }

    /// All entries flattened in parameter declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn accumulate(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl FeedForwardNet {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        validate_specs(specs)?;
        let layers = specs
            .iter()
            .map(|&spec| {
                let bound = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
                Layer {
                    spec,
                    weights: Matrix::random_uniform(spec.output_dim, spec.input_dim, bound, rng),
                    bias: vec![0.0; spec.output_dim],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Chain of widths `dims[0] → dims[1] → … → dims[last]`, with `hidden`
    /// on every layer except the last, which uses `output`.
    pub fn mlp<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("a network needs at least an input and an output width"));
        }
        let specs: Vec<_> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() { output } else { hidden };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect();
        Self::new(&specs, rng)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<_> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for l in &layers {
            if l.weights.shape() != (l.spec.output_dim, l.spec.input_dim) || l.bias.len() != l.spec.output_dim {
                return Err(Error::shape(
                    "from_layers",
                    l.weights.shape(),
                    (l.spec.output_dim, l.spec.input_dim),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.spec.output_dim * (l.spec.input_dim + 1))
            .sum()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward",
                batch.shape(),
                (self.input_dim(), self.output_dim()),
            ));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().unwrap_or(batch);
            let mut z = input.matmul_t(&layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let act = layer.spec.activation;
            let a = z.map(|v| act.apply(v));
            pre.push(z);
            post.push(a);
        }
        let output = post.last().cloned().expect("network has at least one layer");
        Ok((
            output,
            ForwardCache {
                input: batch.clone(),
                pre,
                post,
            },
        ))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch)?.0)
    }

    /// Returns parameter gradients and the gradient with respect to the
    /// input batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<(NetGrads, Matrix)> {
        if cache.pre.len() != self.layers.len() {
            return Err(Error::shape(
                "backward(cache)",
                (cache.pre.len(), 0),
                (self.layers.len(), 0),
            ));
        }
        let out_shape = cache.output().shape();
        if output_grad.shape() != out_shape {
            return Err(Error::shape("backward", output_grad.shape(), out_shape));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let act = layer.spec.activation;
            let pre = &cache.pre[k];
            let post = &cache.post[k];
            let mut delta = upstream;
            for ((d, &z), &a) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(pre.as_slice())
                .zip(post.as_slice())
            {
                *d *= act.derivative(z, a);
            }
            let input = if k == 0 { &cache.input } else { &cache.post[k - 1] };
            let dw = delta.t_matmul(input)?;
            let db = delta.col_sums();
            upstream = delta.matmul(&layer.weights)?;
            grads.push(LayerGrad { weights: dw, bias: db });
        }
        grads.reverse();
        Ok((NetGrads { layers: grads }, upstream))
    }

    /// `θ ← θ − lr·∇θ`. Rejects the whole step if any gradient is non-finite.
    pub fn sgd_step(&mut self, grads: &NetGrads, learning_rate: f64) -> Result<()> {
        self.check_grads(grads)?;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.add_scaled(&g.weights, -learning_rate)?;
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * gb;
            }
        }
        Ok(())
    }

    pub(crate) fn check_grads(&self, grads: &NetGrads) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape(
                "sgd_step",
                (grads.layers.len(), 0),
                (self.layers.len(), 0),
            ));
        }
        for (layer, g) in self.layers.iter().zip(&grads.layers) {
            if g.weights.shape() != layer.weights.shape() || g.bias.len() != layer.bias.len() {
                return Err(Error::shape("sgd_step", g.weights.shape(), layer.weights.shape()));
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        Ok(())
    }

    /// Parameter at a flat index (declaration order: per layer, weights
    /// row-major then bias).
    pub fn param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            let nw = l.weights.rows() * l.weights.cols();
            if idx < nw {
                return l.weights.as_slice()[idx];
            }
            idx -= nw;
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            let nw = l.weights.rows() * l.weights.cols();
            if idx < nw {
                l.weights.as_mut_slice()[idx] = value;
                return;
            }
            idx -= nw;
            if idx < l.bias.len() {
                l.bias[idx] = value;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut Writer<W>) -> std::io::Result<()> {
        w.u32(self.layers.len() as u32)?;
        for l in &self.layers {
            w.u64(l.spec.input_dim as u64)?;
            w.u64(l.spec.output_dim as u64)?;
            w.u8(l.spec.activation.tag())?;
        }
        for l in &self.layers {
            w.f64s(l.weights.as_slice())?;
            w.f64s(&l.bias)?;
        }
        Ok(())
    }

    pub(crate) fn read_from<R: Read>(r: &mut Reader<R>) -> Result<Self> {
        let at = r.offset();
        let count = r.u32()? as usize;
        if count == 0 || count > 1024 {
            return Err(Error::format(at, format!("implausible layer count {count}")));
        }
        let mut specs = Vec::with_capacity(count);
        for _ in 0..count {
            let input_dim = r.count("input_dim", 1 << 24)?;
            let output_dim = r.count("output_dim", 1 << 24)?;
            let tag_at = r.offset();
            let tag = r.u8()?;
            let activation = Activation::from_tag(tag)
                .ok_or_else(|| Error::format(tag_at, format!("unknown activation tag {tag}")))?;
            specs.push(LayerSpec::new(input_dim, output_dim, activation));
        }
        if let Err(e) = validate_specs(&specs) {
            return Err(Error::format(at, e.to_string()));
        }
        let mut layers = Vec::with_capacity(count);
        for spec in specs {
            let w = r.f64s(spec.output_dim * spec.input_dim)?;
            let bias = r.f64s(spec.output_dim)?;
            layers.push(Layer {
                spec,
                weights: Matrix::from_vec(spec.output_dim, spec.input_dim, w)?,
                bias,
            });
        }
        Ok(Self { layers })
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::config("network has no layers"));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::config(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, w) in specs.windows(2).enumerate() {
        if w[0].output_dim != w[1].input_dim {
            return Err(Error::config(format!(
                "layer {} outputs {} but layer {} expects {}",
                i,
                w[0].output_dim,
                i + 1,
                w[1].input_dim
            )));
        }
    }
    Ok(())
}

/// Central-difference gradient of `loss` with respect to every parameter
/// of `net`.
pub fn finite_diff_grad<F>(net: &FeedForwardNet, mut loss: F, eps: f64) -> NetGrads
where
    F: FnMut(&FeedForwardNet) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = net.clone();
    let mut flat = Vec::with_capacity(net.num_params());
    for i in 0..net.num_params() {
        let orig = probe.param(i);
        probe.set_param(i, orig + eps);
        let up = loss(&probe);
        probe.set_param(i, orig - eps);
        let down = loss(&probe);
        probe.set_param(i, orig);
        flat.push((up - down) / (2.0 * eps));
    }
    let mut grads = NetGrads::zeros_like(net);
    let mut it = flat.into_iter();
    for l in &mut grads.layers {
        for v in l.weights.as_mut_slice() {
            *v = it.next().unwrap();
        }
        for v in &mut l.bias {
            *v = it.next().unwrap();
        }
    }
    grads
}
