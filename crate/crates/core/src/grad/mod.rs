//! Reverse-mode differentiation, the optimizer and the training loop.

mod optim;
mod tape;
mod train;

pub use optim::{cosine_lr, OptimConfig, OptimState};
pub use tape::{guard_state, Gradients, Graph, Var, STATE_LIMIT};
pub use train::{
    batch_loss, gradient_check, loss_value, train, value_and_grad, with_param_mut, GradCheck, Hooks, TrainConfig,
    TrainOutcome, Traces,
};
