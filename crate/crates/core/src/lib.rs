//! Treatment-gated concept bottleneck models for immunotherapy response
//! prediction, with a small reverse-mode differentiation core, the
//! multi-task training objective, leave-one-group-out evaluation and
//! signature/regression baselines.

pub mod baselines;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod train;

pub use error::{Error, Result};
