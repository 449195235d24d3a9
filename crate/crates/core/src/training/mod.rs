//! Exact reverse-mode gradients through unrolled sequences, frame-pooled
//! cross-entropy, finite-difference checking, momentum SGD and Adam.

mod backward;
mod batch;
mod extended;
mod gradcheck;
mod loss;
mod optim;

pub use backward::{backward_sequence, GradientSet};
pub use batch::{batch_loss, batch_loss_and_grad, Batch, BatchEval, Sequence};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use loss::{cross_entropy_loss, log_softmax, LossOutput};
pub use optim::{sgd_step, Adam, Optimizer, OptimizerKind, Sgd};
