//! Adversarial discriminative domain adaptation (ADDA) for digit
//! classification.
//!
//! The crate is layered bottom-up: [`tensor`] provides the autodiff engine,
//! [`models`] the LeNet encoder, classifier and discriminator, [`optim`] Adam
//! and batching, [`data`] IDX ingestion and preprocessing, [`pipeline`] the
//! pre-train / adapt / test protocol, and [`eval`] confusion matrices, t-SNE
//! and figure emitters. [`selfcheck`] runs finite-difference gradient checks
//! over every op and both full model graphs.

pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod optim;
pub mod pipeline;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
