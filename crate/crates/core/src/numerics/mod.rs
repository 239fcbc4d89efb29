//! Dense matrix arithmetic, reverse-mode autodiff, Adam, and a
//! finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod matrix;
pub mod tape;

pub use adam::{AdamHyper, AdamState};
pub use gradcheck::{finite_diff_check, LossAndGrads};
pub use matrix::Matrix;
pub use tape::{Gradients, NodeId, Tape};
