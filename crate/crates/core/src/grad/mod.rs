//! Reverse-mode autodiff, dense networks, losses and optimizers.

mod hvp;
mod loss;
mod nn;
mod optim;
mod tape;
mod tensor;

pub use hvp::hvp;
pub use loss::{cross_entropy_rows, kl_divergence, softmax_cross_entropy};
pub use nn::{Activation, BoundNetwork, Dense, Network};
pub use optim::{adam_step, sgd_momentum_step, OptState, OptimizerConfig};
pub use tape::{Gradients, LeafKind, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{log_sech2, softplus};
