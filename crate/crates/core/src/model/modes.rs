//! Adaptation modes: which parameters are trained, and therefore which
//! parameters travel between clients and the server. The two sets are
//! identical by construction in every mode.

use crate::error::{Error, Result};

/// Which encoder(s) carry low-rank adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderTargets {
    Text,
    Image,
    Both,
}

impl EncoderTargets {
    pub fn includes_text(self) -> bool {
        matches!(self, EncoderTargets::Text | EncoderTargets::Both)
    }

    pub fn includes_image(self) -> bool {
        matches!(self, EncoderTargets::Image | EncoderTargets::Both)
    }

    pub fn tag(self) -> &'static str {
        match self {
            EncoderTargets::Text => "text",
            EncoderTargets::Image => "image",
            EncoderTargets::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(EncoderTargets::Text),
            "image" => Ok(EncoderTargets::Image),
            "both" => Ok(EncoderTargets::Both),
            other => Err(Error::InvalidParameter {
                name: "lora_targets",
                message: format!("unknown encoder target `{other}` (text|image|both)"),
            }),
        }
    }
}

/// Settings for the low-rank adapter mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraSettings {
    pub targets: EncoderTargets,
    pub rank: usize,
    pub alpha: f64,
    /// Scale deltas by alpha/rank instead of plain alpha.
    pub scale_by_rank: bool,
}

impl Default for LoraSettings {
    fn default() -> Self {
        Self {
            targets: EncoderTargets::Text,
            rank: 2,
            alpha: 32.0,
            scale_by_rank: false,
        }
    }
}

/// The five local-update strategies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdaptationMode {
    /// Train and transfer only low-rank adapter matrices.
    Lora(LoraSettings),
    /// Train and transfer every model parameter.
    FullFineTune,
    /// Train and transfer only a linear head over frozen image features.
    LinearClassifier,
    /// Train and transfer the vision side plus the linear head.
    VisionLinear,
    /// Train and transfer a gated bottleneck applied after the image encoder.
    AttentionAdapter { width: usize },
}

impl AdaptationMode {
    pub fn tag(&self) -> &'static str {
        match self {
            AdaptationMode::Lora(_) => "lora",
            AdaptationMode::FullFineTune => "fft",
            AdaptationMode::LinearClassifier => "lc",
            AdaptationMode::VisionLinear => "vm-lc",
            AdaptationMode::AttentionAdapter { .. } => "aa",
        }
    }

    pub fn uses_linear_head(&self) -> bool {
        matches!(
            self,
            AdaptationMode::LinearClassifier | AdaptationMode::VisionLinear
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AdaptationMode::Lora(cfg) => {
                if cfg.rank == 0 {
                    return Err(Error::InvalidParameter {
                        name: "rank",
                        message: "must be at least 1".to_string(),
                    });
                }
                if !cfg.alpha.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "alpha",
                        message: "must be finite".to_string(),
                    });
                }
            }
            AdaptationMode::AttentionAdapter { width } => {
                if *width == 0 {
                    return Err(Error::InvalidParameter {
                        name: "width",
                        message: "must be at least 1".to_string(),
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }
}
