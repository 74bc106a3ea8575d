//! Dense matrices and small fully connected networks with hand-written
//! backpropagation.

mod activation;
mod matrix;
mod net;
mod optim;

pub use activation::{sigmoid, softplus, Activation};
pub use matrix::{dot, Matrix};
pub use net::{finite_diff_grad, FeedForwardNet, ForwardCache, Layer, LayerGrad, LayerSpec, NetGrads};
pub use optim::{Adam, Optimizer, Sgd};
