//! The dual-encoder classifier, its adaptation modes, and checkpointing.

pub mod checkpoint;
pub mod counting;
pub mod dual_encoder;
pub mod lora;
pub mod modes;

pub use counting::{attention_adapter_params, linear_head_params, lora_params, mode_params};
pub use dual_encoder::{
    cross_entropy, image_block_name, text_block_name, DualEncoderModel, LossGraph, ModelShape,
};
pub use lora::{lora_effective_weight, LoraAdapter, LORA_A_INIT_STD};
pub use modes::{AdaptationMode, EncoderTargets, LoraSettings};
