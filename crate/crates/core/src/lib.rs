//! Deterministic desk-scale simulator of federated fine-tuning for a
//! dual-encoder classifier.
//!
//! The crate is organized around the exchange of selectable parameter
//! payloads between clients and a coordinating server:
//!
//! - [`numerics`]: matrices, reverse-mode autodiff, Adam, gradient checking
//! - [`model`]: the dual-encoder classifier, low-rank adapters, adaptation
//!   modes, parameter counting, and the checkpoint container
//! - [`partition`]: dataset generation, train/test splitting, and the IID /
//!   Dirichlet / pathological client partition regimes
//! - [`federation`]: the round engine — client sampling, local updates,
//!   size-weighted aggregation, and per-round reports
//! - [`accounting`]: payload byte counting, per-round communication cost,
//!   and reproduction of the reference transfer-size tables
//!
//! Everything is seeded: identical configuration and seed produce bitwise
//! identical results on the same platform.

pub mod accounting;
pub mod error;
pub mod federation;
pub mod model;
pub mod numerics;
pub mod partition;
pub mod seeding;

pub use error::{Error, Result};
pub use numerics::{AdamHyper, AdamState, Matrix, Tape};
