//! Hybrid discrete/continuous trajectory prediction: a probabilistic hybrid
//! automaton with learned transition, dynamics and proposal functions, plus
//! sample selection and evaluation.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod seed;
pub mod select;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate_record, HybridSequence, HybridState, ModeId, ModelConfig, Point, SceneRecord, Variant,
};
