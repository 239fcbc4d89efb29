//! Per-client state: local data shard, model clone, and optimizer moments.

use crate::error::{Error, Result};
use crate::federation::payload::TransferPayload;
use crate::federation::trainer::{train_one_round, RoundTrainStats};
use crate::model::DualEncoderModel;
use crate::numerics::{AdamHyper, AdamState};
use crate::partition::Dataset;

/// One simulated client. Optimizer moments persist across rounds; only the
/// transfer set is overwritten when a global payload arrives, so frozen
/// parameters stay bitwise equal to the base model forever.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub data: Dataset,
    pub model: DualEncoderModel,
    pub adam: AdamState,
}

impl ClientState {
    pub fn new(
        id: usize,
        data: Dataset,
        model: DualEncoderModel,
        hyper: AdamHyper,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InsufficientData {
                what: "client shard",
                needed: 1,
                available: 0,
            });
        }
        Ok(Self {
            id,
            data,
            model,
            adam: AdamState::new(hyper)?,
        })
    }

    /// Incorporate the global payload into the local model.
    pub fn apply_global(&mut self, payload: &TransferPayload) -> Result<()> {
        payload.apply_to(&mut self.model)
    }

    /// Local update for one round; returns the new transfer payload and
    /// training statistics.
    pub fn update(
        &mut self,
        run_seed: u64,
        round: u64,
        local_epochs: usize,
        batch_size: usize,
    ) -> Result<(TransferPayload, RoundTrainStats)> {
        let stats = train_one_round(
            &mut self.model,
            &mut self.adam,
            &self.data,
            run_seed,
            self.id as u64,
            round,
            local_epochs,
            batch_size,
        )?;
        let payload = TransferPayload::from_model(&self.model, round)?;
        Ok((payload, stats))
    }
}
