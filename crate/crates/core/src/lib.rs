//! Desk-scale knowledge distillation for job/profile fit: a small autodiff
//! engine, tiny transformer language models and encoder classifiers, the
//! distillation objectives, a synthetic fit domain with a rule oracle,
//! training loops, metrics and a serving pipeline.

pub mod distill;
pub mod domain;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod objectives;
pub mod pipeline;

pub use error::{Error, Result};
