//! Low-rank adapters: a frozen base weight W plus a trainable delta
//! `scale * A * B`, where A is d_in x r and B is r x d_out.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use rand::Rng;

/// Standard deviation used to initialize the A matrix. B starts at zero so a
/// fresh adapter is an exact no-op and the adapted model reproduces the base
/// model bit for bit.
pub const LORA_A_INIT_STD: f64 = 0.02;

/// Low-rank pair attached to one base weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub target: String,
    pub a: Matrix,
    pub b: Matrix,
    pub rank: usize,
    pub alpha: f64,
    /// When set, the delta is scaled by `alpha / rank` instead of `alpha`.
    pub scale_by_rank: bool,
}

impl LoraAdapter {
    /// Fresh adapter for a `d_in x d_out` base weight: A ~ N(0, 0.02^2), B = 0.
    pub fn init<R: Rng>(
        target: &str,
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: f64,
        scale_by_rank: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidParameter {
                name: "rank",
                message: "must be at least 1".to_string(),
            });
        }
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter {
                name: "alpha",
                message: "must be finite".to_string(),
            });
        }
        Ok(Self {
            target: target.to_string(),
            a: Matrix::randn(d_in, rank, LORA_A_INIT_STD, rng)?,
            b: Matrix::zeros(rank, d_out)?,
            rank,
            alpha,
            scale_by_rank,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.cols() != self.rank || self.b.rows() != self.rank {
            return Err(Error::ShapeMismatch {
                op: "lora_adapter",
                left_rows: self.a.rows(),
                left_cols: self.a.cols(),
                right_rows: self.b.rows(),
                right_cols: self.b.cols(),
            });
        }
        Ok(())
    }

    /// The multiplier applied to `A * B`.
    pub fn effective_scale(&self) -> f64 {
        if self.scale_by_rank {
            self.alpha / self.rank as f64
        } else {
            self.alpha
        }
    }

    /// Trainable parameter count: r * (d_in + d_out).
    pub fn param_count(&self) -> u64 {
        (self.a.len() + self.b.len()) as u64
    }
}

/// Effective weight `W' = W + scale * A * B`. The base is never mutated.
pub fn lora_effective_weight(base: &Matrix, adapter: &LoraAdapter) -> Result<Matrix> {
    adapter.validate()?;
    let delta = adapter.a.matmul(&adapter.b)?;
    if delta.shape() != base.shape() {
        return Err(Error::ShapeMismatch {
            op: "lora_effective_weight",
            left_rows: base.rows(),
            left_cols: base.cols(),
            right_rows: delta.rows(),
            right_cols: delta.cols(),
        });
    }
    base.add(&delta.scale(adapter.effective_scale()))
}
