//! Invariant visual representations for compositional zero-shot learning.
//!
//! The crate trains an attribute–object recognizer over precomputed image
//! features. A shared embedding branch scores compositions by cosine
//! distance to learned concept embeddings; two disentangled branches
//! classify attributes and objects separately and are regularized to be
//! invariant across domains (objects act as domains for attributes and vice
//! versa) by channel masking and gradient alignment.
//!
//! Modules:
//! - [`tensor`]: dense tensors, reverse-mode autodiff, RNG, Adam.
//! - [`data`]: dataset format, synthetic generator, triplet sampling.
//! - [`model`]: parameters, forward passes, checkpoints.
//! - [`invariance`]: channel masks and gradient-alignment losses.
//! - [`training`]: full objective and optimization loop.
//! - [`eval`]: calibrated seen/unseen metrics and retrieval.
//! - [`cli`]: the `ivr` command-line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod invariance;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
