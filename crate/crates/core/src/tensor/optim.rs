use super::net::{FeedForwardNet, NetGrads};
use crate::error::Result;

/// Stochastic gradient descent with optional heavy-ball momentum.
///
/// With `momentum == 0` this is exactly [`FeedForwardNet::sgd_step`].
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<NetGrads>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, net: &mut FeedForwardNet, grads: &NetGrads) -> Result<()> {
        if self.momentum == 0.0 {
            return net.sgd_step(grads, self.learning_rate);
        }
        net.check_grads(grads)?;
        let v = self.velocity.get_or_insert_with(|| NetGrads::zeros_like(net));
        for (vl, gl) in v.layers.iter_mut().zip(&grads.layers) {
            for (a, b) in vl.weights.as_mut_slice().iter_mut().zip(gl.weights.as_slice()) {
                *a = self.momentum * *a + b;
            }
            for (a, b) in vl.bias.iter_mut().zip(&gl.bias) {
                *a = self.momentum * *a + b;
            }
        }
        net.sgd_step(v, self.learning_rate)
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    moments: Option<(NetGrads, NetGrads)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: None,
        }
    }

    pub fn step(&mut self, net: &mut FeedForwardNet, grads: &NetGrads) -> Result<()> {
        net.check_grads(grads)?;
        let (m, v) = self
            .moments
            .get_or_insert_with(|| (NetGrads::zeros_like(net), NetGrads::zeros_like(net)));
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let mut update = NetGrads::zeros_like(net);
        let apply = |m: &mut [f64], v: &mut [f64], g: &[f64], u: &mut [f64]| {
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                u[i] = (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
            }
        };
        for (((ml, vl), gl), ul) in m.layers.iter_mut().zip(&mut v.layers).zip(&grads.layers).zip(&mut update.layers) {
            apply(ml.weights.as_mut_slice(), vl.weights.as_mut_slice(), gl.weights.as_slice(), ul.weights.as_mut_slice());
            apply(&mut ml.bias, &mut vl.bias, &gl.bias, &mut ul.bias);
        }
        net.sgd_step(&update, self.learning_rate)
    }
}

/// Parameter update rule used during training.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn step(&mut self, net: &mut FeedForwardNet, grads: &NetGrads) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(net, grads),
            Optimizer::Adam(o) => o.step(net, grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Activation, Matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = FeedForwardNet::mlp(&[2, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let x = Matrix::random_uniform(4, 2, 1.0, &mut rng);
        let (out, cache) = net.forward(&x).unwrap();
        let (g, _) = net.backward(&cache, &out).unwrap();
        let mut a = net.clone();
        let mut b = net.clone();
        a.sgd_step(&g, 0.05).unwrap();
        Sgd::new(0.05, 0.0).step(&mut b, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = FeedForwardNet::mlp(&[2, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let before: Vec<f64> = (0..net.num_params()).map(|i| net.param(i)).collect();
        let mut g = NetGrads::zeros_like(&net);
        g.layers[0].weights[(0, 0)] = 250.0;
        g.layers[0].weights[(0, 1)] = -1e-3;
        let mut opt = Adam::new(0.01);
        opt.step(&mut net, &g).unwrap();
        assert!((net.param(0) - (before[0] - 0.01)).abs() < 1e-9);
        assert!((net.param(1) - (before[1] + 0.01)).abs() < 1e-7);
        assert_eq!(net.param(2), before[2]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = FeedForwardNet::mlp(&[1, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let orig = net.clone();
        let mut g = NetGrads::zeros_like(&net);
        g.layers[0].bias[0] = f64::NAN;
        assert!(Adam::new(0.1).step(&mut net, &g).is_err());
        assert_eq!(net, orig);
    }

    #[test]
    fn momentum_accumulates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = FeedForwardNet::mlp(&[1, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let w0 = net.param(0);
        let mut g = NetGrads::zeros_like(&net);
        g.layers[0].weights[(0, 0)] = 1.0;
        let mut opt = Sgd::new(0.1, 0.5);
        opt.step(&mut net, &g).unwrap();
        opt.step(&mut net, &g).unwrap();
        // velocities 1.0 then 1.5
        assert!((net.param(0) - (w0 - 0.25)).abs() < 1e-15);
    }
}
