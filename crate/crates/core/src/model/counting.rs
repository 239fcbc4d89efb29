//! Exact parameter counting from shape descriptions alone.

use crate::model::dual_encoder::ModelShape;
use crate::model::modes::AdaptationMode;

/// Low-rank adapter parameters for `blocks` square d x d projections:
/// each adapted projection contributes `rank * (d + d)`.
pub fn lora_params(d: usize, blocks: usize, rank: usize) -> u64 {
    (blocks * rank * 2 * d) as u64
}

/// Linear head over d-dimensional features with a bias row: `(d + 1) * k`.
pub fn linear_head_params(d: usize, classes: usize) -> u64 {
    ((d + 1) * classes) as u64
}

/// Gated bottleneck after the image encoder: two bias-free matrices,
/// d x width and width x d.
pub fn attention_adapter_params(d: usize, width: usize) -> u64 {
    (2 * d * width) as u64
}

/// Parameters trained (and transferred) by a mode on a concrete model shape.
pub fn mode_params(shape: &ModelShape, mode: &AdaptationMode) -> u64 {
    let d = shape.d_embed;
    let base_image = (shape.d_feat * d + shape.image_blocks * d * d) as u64;
    let base_text = (shape.text_blocks * d * d) as u64;
    let embeddings = (shape.classes * d) as u64;
    match mode {
        AdaptationMode::Lora(cfg) => {
            let mut total = 0;
            if cfg.targets.includes_text() {
                total += lora_params(d, shape.text_blocks, cfg.rank);
            }
            if cfg.targets.includes_image() {
                total += lora_params(d, shape.image_blocks, cfg.rank);
            }
            total
        }
        AdaptationMode::FullFineTune => base_image + base_text + embeddings,
        AdaptationMode::LinearClassifier => linear_head_params(d, shape.classes),
        AdaptationMode::VisionLinear => base_image + linear_head_params(d, shape.classes),
        AdaptationMode::AttentionAdapter { width } => attention_adapter_params(d, *width),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_text_encoder_row() {
        // d=512, 12 blocks: {12288, 24576, 49152, 98304, 196608, 393216}
        let expected = [12_288, 24_576, 49_152, 98_304, 196_608, 393_216];
        for (i, r) in [1usize, 2, 4, 8, 16, 32].iter().enumerate() {
            assert_eq!(lora_params(512, 12, *r), expected[i]);
        }
    }

    #[test]
    fn reference_image_encoder_row() {
        let expected = [18_432, 36_864, 73_728, 147_456, 294_912, 589_824];
        for (i, r) in [1usize, 2, 4, 8, 16, 32].iter().enumerate() {
            assert_eq!(lora_params(768, 12, *r), expected[i]);
        }
    }

    #[test]
    fn linear_head_bounds() {
        assert_eq!(linear_head_params(512, 2), 1_026);
        assert_eq!(linear_head_params(512, 397), 203_661);
    }

    #[test]
    fn gated_bottleneck_at_width_342_matches_reference_adapter() {
        assert_eq!(attention_adapter_params(768, 342), 525_312);
    }
}
