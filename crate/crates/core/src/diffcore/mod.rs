//! Reverse-mode differentiation, parameters, SGD and the Rényi loss.

mod loss;
mod param;
mod sgd;
mod tape;

pub use loss::{clamp_count, renyi_loss, renyi_loss_heads, renyi_loss_tape, Divergence, CLAMP_EPS};
pub use param::{ParamGroup, ParamId, ParamStore, Parameter};
pub use sgd::{Sgd, SgdConfig};
pub use tape::{sigmoid, Tape, Var};
