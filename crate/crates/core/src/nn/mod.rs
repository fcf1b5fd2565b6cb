//! Minimal differentiable building blocks: a gradient tape, parameter
//! storage, layers and the Adam optimizer.

pub mod adam;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use layers::{Ctx, Dense, Linear, Mlp, Recurrent, RecurrentState};
pub use params::{Grads, ParamId, ParamSet, Tensor};
pub use tape::{log_softmax, log_sum_exp, softmax, Tape, Var};
