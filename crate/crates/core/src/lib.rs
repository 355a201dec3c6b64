//! Loss-resilient slice-based token codec.
//!
//! An image is tokenized into a grid of quantized block coefficients, the
//! grid is split into slices along a low-discrepancy traversal, and each
//! slice is range coded into its own packet under a Gaussian-mixture model
//! conditioned on a configurable set of earlier slices (the context mode).
//! The receiver decodes every slice whose contexts arrived and conceals the
//! rest in the token domain with the same predictor that drives coding.
//!
//! Module map:
//! - [`token_codec`]: block transform tokenizer
//! - [`partition`]: slice plans
//! - [`context_modes`]: dependency matrices and decode schedules
//! - [`density`]: discretized mixtures and frequency tables
//! - [`predictor`]: context collection, prediction and concealment
//! - [`entropy_coder`]: range coder
//! - [`transport`]: packets, loss models, FEC and UEP baselines
//! - [`pipeline`]: sender, receiver, metrics and episodes

pub mod context_modes;
pub mod corpus;
pub mod density;
pub mod detmath;
pub mod entropy_coder;
pub mod error;
pub mod image;
pub mod partition;
pub mod pipeline;
pub mod predictor;
pub mod token_codec;
pub mod transport;

pub use error::{Error, Result};
