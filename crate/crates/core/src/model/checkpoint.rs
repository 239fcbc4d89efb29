//! Flat, versioned binary container for model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "FTCK"
//! version u32      currently 1
//! mode    string   (u32 length + UTF-8)  "lora"|"fft"|"lc"|"vm-lc"|"aa"
//! targets string   encoder targets for lora, "" otherwise
//! rank    u32      lora rank, 0 otherwise
//! alpha   f64      lora alpha, 0 otherwise
//! byrank  u8       1 if deltas scale by alpha/rank
//! width   u32      bottleneck width for aa, 0 otherwise
//! shape   5 x u32  d_feat, d_embed, image_blocks, text_blocks, classes
//! tau     f64      temperature
//! count   u32      number of named matrices
//! entry   string name, u32 rows, u32 cols, rows*cols f64 values
//! ```
//!
//! Matrices are stored in ascending name order and f64 bits are preserved
//! exactly, so save/load round-trips are byte-identical.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::dual_encoder::{DualEncoderModel, ModelShape};
use crate::model::modes::{AdaptationMode, EncoderTargets, LoraSettings};
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"FTCK";
const VERSION: u32 = 1;

pub fn model_to_bytes(model: &DualEncoderModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    write_str(&mut out, model.mode().tag());
    let (targets, rank, alpha, by_rank, width) = match model.mode() {
        AdaptationMode::Lora(cfg) => (
            cfg.targets.tag(),
            cfg.rank as u32,
            cfg.alpha,
            u8::from(cfg.scale_by_rank),
            0u32,
        ),
        AdaptationMode::AttentionAdapter { width } => ("", 0, 0.0, 0, *width as u32),
        _ => ("", 0, 0.0, 0, 0),
    };
    write_str(&mut out, targets);
    out.extend_from_slice(&rank.to_le_bytes());
    out.extend_from_slice(&alpha.to_le_bytes());
    out.push(by_rank);
    out.extend_from_slice(&width.to_le_bytes());
    let shape = model.shape();
    for v in [
        shape.d_feat,
        shape.d_embed,
        shape.image_blocks,
        shape.text_blocks,
        shape.classes,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.temperature().to_le_bytes());

    let names = model.param_names();
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for name in &names {
        let matrix = model.param(name).expect("registered name");
        write_matrix(&mut out, name, matrix);
    }
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<DualEncoderModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint {
            message: "bad magic; not a model checkpoint".to_string(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint {
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let mode_tag = r.string()?;
    let targets_tag = r.string()?;
    let rank = r.u32()? as usize;
    let alpha = r.f64()?;
    let by_rank = r.u8()? != 0;
    let width = r.u32()? as usize;
    let shape = ModelShape {
        d_feat: r.u32()? as usize,
        d_embed: r.u32()? as usize,
        image_blocks: r.u32()? as usize,
        text_blocks: r.u32()? as usize,
        classes: r.u32()? as usize,
    };
    let temperature = r.f64()?;

    let mode = match mode_tag.as_str() {
        "lora" => AdaptationMode::Lora(LoraSettings {
            targets: EncoderTargets::parse(&targets_tag)?,
            rank,
            alpha,
            scale_by_rank: by_rank,
        }),
        "fft" => AdaptationMode::FullFineTune,
        "lc" => AdaptationMode::LinearClassifier,
        "vm-lc" => AdaptationMode::VisionLinear,
        "aa" => AdaptationMode::AttentionAdapter { width },
        other => {
            return Err(Error::Checkpoint {
                message: format!("unknown mode tag `{other}`"),
            })
        }
    };

    // Build a skeleton with the right attachment shapes, then overwrite
    // every stored parameter.
    let base = DualEncoderModel::new_base(shape, temperature, 0)?;
    let mut model = base.with_mode(mode, 0)?;

    let count = r.u32()? as usize;
    let mut seen = 0usize;
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        let matrix = Matrix::from_vec(rows, cols, data)?;
        model.set_param(&name, matrix).map_err(|e| Error::Checkpoint {
            message: format!("while restoring `{name}`: {e}"),
        })?;
        seen += 1;
    }
    if seen != model.param_names().len() {
        return Err(Error::Checkpoint {
            message: format!(
                "checkpoint holds {seen} matrices but the mode expects {}",
                model.param_names().len()
            ),
        });
    }
    Ok(model)
}

pub fn save_model(model: &DualEncoderModel, path: &Path) -> Result<()> {
    Ok(fs::write(path, model_to_bytes(model)?)?)
}

pub fn load_model(path: &Path) -> Result<DualEncoderModel> {
    model_from_bytes(&fs::read(path)?)
}

pub(crate) fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) fn write_matrix(out: &mut Vec<u8>, name: &str, matrix: &Matrix) {
    write_str(out, name);
    out.extend_from_slice(&(matrix.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.cols() as u32).to_le_bytes());
    for v in matrix.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint {
                message: format!("truncated container at byte {}", self.pos),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Checkpoint {
            message: format!("invalid UTF-8 string at byte {}", self.pos),
        })
    }

    pub fn read_matrix(&mut self) -> Result<(String, Matrix)> {
        let name = self.string()?;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok((name, Matrix::from_vec(rows, cols, data)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::modes::LoraSettings;

    fn shape() -> ModelShape {
        ModelShape {
            d_feat: 5,
            d_embed: 4,
            image_blocks: 2,
            text_blocks: 1,
            classes: 3,
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let base = DualEncoderModel::new_base(shape(), 0.07, 42).unwrap();
        for mode in [
            AdaptationMode::FullFineTune,
            AdaptationMode::Lora(LoraSettings::default()),
            AdaptationMode::LinearClassifier,
            AdaptationMode::VisionLinear,
            AdaptationMode::AttentionAdapter { width: 2 },
        ] {
            let model = base.with_mode(mode, 7).unwrap();
            let bytes = model_to_bytes(&model).unwrap();
            let restored = model_from_bytes(&bytes).unwrap();
            let bytes2 = model_to_bytes(&restored).unwrap();
            assert_eq!(bytes, bytes2, "mode {}", model.mode().tag());
            for name in model.param_names() {
                assert!(
                    model.param(&name).unwrap().bits_eq(restored.param(&name).unwrap()),
                    "param {name} differs"
                );
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(model_from_bytes(b"not a checkpoint").is_err());
        let base = DualEncoderModel::new_base(shape(), 0.07, 42).unwrap();
        let mut bytes = model_to_bytes(&base).unwrap();
        bytes.truncate(bytes.len() / 2);
        assert!(model_from_bytes(&bytes).is_err());
    }
}
