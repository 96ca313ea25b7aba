//! Authorship attribution by authorial language models: fine-tune one
//! small causal LM per candidate author and attribute a questioned
//! document to the author whose model gives it the lowest perplexity.
//!
//! Pipeline: [`tokenizer`] learns a shared byte-level BPE vocab,
//! [`lm`] is the from-scratch transformer with analytic gradients,
//! [`training`] builds the per-author model set, [`scoring`] computes
//! perplexity and the argmin prediction, and [`eval`] reproduces the
//! macro-accuracy / ablation protocol. Model math is generic over the
//! float width; the concrete aliases below are what the pipeline uses.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod lm;
pub mod persist;
pub mod scalar;
pub mod scoring;
pub mod tokenizer;
pub mod training;

pub use error::{AlmError, Result};
pub use scalar::Scalar;

/// Production weight type.
pub type Model32 = lm::Model<f32>;
/// Full-precision instantiation, used for gradient verification.
pub type Model64 = lm::Model<f64>;
pub type Tensor32 = lm::Tensor<f32>;
pub type Tensor64 = lm::Tensor<f64>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
