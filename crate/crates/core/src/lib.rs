//! Cross-domain sign recognition with prototypical memory.
//!
//! The crate covers the full pipeline at feature-sequence scale: a small
//! reverse-mode autodiff engine, a seeded two-domain synthetic corpus,
//! weakly-supervised sign mining from subtitled streams, coarse domain
//! alignment, the prototypical memory, the memory-augmented temporal
//! attention model, its training protocol and the recognition/localization
//! metrics.

pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod extraction;
pub mod memory;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod training;
pub mod verify;
mod textio;

pub use error::{Error, Result};
pub use tensor::Matrix;
