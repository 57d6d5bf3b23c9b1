//! Dense-tensor reverse-mode differentiation and first-order optimizers.

mod optim;
mod param;
mod tape;
mod tensor;

pub use optim::{check_gradients, sgd_step, Optimizer, OptimizerConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var, BCE_EPS};
pub use tensor::Tensor;
