//! Joint objective, its gradient, the code update and the training loop.

mod gradcheck;
mod model;
mod objective;
mod train;

pub use gradcheck::{
    gradcheck, objective_instance, relative_error, GradcheckOptions, GradcheckReport, SuiteResult, GRADCHECK_TOLERANCE,
};
pub use model::{HashModel, Modality, MODEL_MAGIC, MODEL_VERSION};
pub use objective::{
    balance_loss, grad_vx, grad_vy, modality_grad, nll_loss, objective, pairwise_phi, quantization_loss, update_b,
    with_codes, LossBreakdown, SignMatrix,
};
pub use train::{train, CodeStep, OptimizerKind, TrainConfig, TrainHistory};
