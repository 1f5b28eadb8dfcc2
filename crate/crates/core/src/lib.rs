//! Metric-learning losses for two-modality (visible/infrared) retrieval.
//!
//! The crate covers batch construction, the triplet, classification and
//! hetero-center losses with analytic gradients, a desk-scale trainer over a
//! free embedding table, retrieval evaluation, image augmentations and a set
//! of brute-force oracles used to verify all of the above.

pub mod augment;
pub mod batch;
pub mod center;
pub mod classify;
pub mod error;
pub mod eval;
pub mod numkit;
pub mod oracle;
pub mod train;
pub mod triplet;

pub use batch::{BatchSpec, MiniBatch, Modality, Sample};
pub use error::{Error, Result};
pub use numkit::Embedding;
pub use triplet::{LossResult, TripletParams};
