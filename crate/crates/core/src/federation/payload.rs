//! Transfer payloads and dataset-size-weighted aggregation.

use crate::error::{Error, Result};
use crate::model::checkpoint::{write_matrix, write_str, Reader};
use crate::model::DualEncoderModel;
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"FTPL";
const VERSION: u32 = 1;

/// The exact parameter subset exchanged in one round, in canonical
/// (ascending name) order.
#[derive(Debug, Clone)]
pub struct TransferPayload {
    pub mode_tag: String,
    pub round: u64,
    pub entries: Vec<(String, Matrix)>,
}

impl TransferPayload {
    /// Snapshot the model's transfer set.
    pub fn from_model(model: &DualEncoderModel, round: u64) -> Result<Self> {
        let names = model.transfer_names()?;
        let entries = names
            .into_iter()
            .map(|name| {
                let matrix = model
                    .param(&name)
                    .ok_or_else(|| Error::Protocol {
                        message: format!("transfer name `{name}` missing from model"),
                    })?
                    .clone();
                Ok((name, matrix))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mode_tag: model.mode().tag().to_string(),
            round,
            entries,
        })
    }

    /// Write the payload into a model; names and shapes must line up.
    pub fn apply_to(&self, model: &mut DualEncoderModel) -> Result<()> {
        if model.mode().tag() != self.mode_tag {
            return Err(Error::Protocol {
                message: format!(
                    "payload mode `{}` does not match model mode `{}`",
                    self.mode_tag,
                    model.mode().tag()
                ),
            });
        }
        let expected = model.transfer_names()?;
        let got: Vec<&String> = self.entries.iter().map(|(n, _)| n).collect();
        if expected.len() != got.len() || expected.iter().zip(&got).any(|(a, b)| &a != b) {
            return Err(Error::Protocol {
                message: format!("payload entries {got:?} do not match transfer set {expected:?}"),
            });
        }
        for (name, matrix) in &self.entries {
            model.set_param(name, matrix.clone()).map_err(|e| Error::Protocol {
                message: format!("while applying `{name}`: {e}"),
            })?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> u64 {
        self.entries.iter().map(|(_, m)| m.len() as u64).sum()
    }

    pub fn bits_eq(&self, other: &TransferPayload) -> bool {
        self.mode_tag == other.mode_tag
            && self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((an, am), (bn, bm))| an == bn && am.bits_eq(bm))
    }

    /// Serialize using the same named-matrix container as checkpoints.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_str(&mut out, &self.mode_tag);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, matrix) in &self.entries {
            write_matrix(&mut out, name, matrix);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint {
                message: "bad magic; not a transfer payload".to_string(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint {
                message: format!("unsupported payload version {version}"),
            });
        }
        let mode_tag = r.string()?;
        let round = r.u64()?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            entries.push(r.read_matrix()?);
        }
        for pair in entries.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(Error::Checkpoint {
                    message: "payload entries out of canonical order".to_string(),
                });
            }
        }
        Ok(Self {
            mode_tag,
            round,
            entries,
        })
    }
}

/// Dataset-size-weighted average of client payloads, with weights
/// `|D_i| / sum |D_j|`, accumulated in ascending client order.
///
/// The sum is computed in delta form around the first payload, so a single
/// payload and the all-identical case return their input bit for bit.
pub fn aggregate(payloads: &[TransferPayload], sizes: &[usize]) -> Result<TransferPayload> {
    if payloads.is_empty() {
        return Err(Error::Protocol {
            message: "nothing to aggregate".to_string(),
        });
    }
    if payloads.len() != sizes.len() {
        return Err(Error::Protocol {
            message: format!("{} payloads but {} sizes", payloads.len(), sizes.len()),
        });
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParameter {
            name: "sizes",
            message: "client dataset sizes must be positive".to_string(),
        });
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::InvalidParameter {
            name: "sizes",
            message: "total dataset size is zero".to_string(),
        });
    }
    let first = &payloads[0];
    for (i, p) in payloads.iter().enumerate().skip(1) {
        if p.mode_tag != first.mode_tag || p.entries.len() != first.entries.len() {
            return Err(Error::Protocol {
                message: format!("payload {i} does not match payload 0"),
            });
        }
        for ((name_a, m_a), (name_b, m_b)) in first.entries.iter().zip(&p.entries) {
            if name_a != name_b || m_a.shape() != m_b.shape() {
                return Err(Error::Protocol {
                    message: format!("payload {i} entry `{name_b}` mismatches `{name_a}`"),
                });
            }
        }
    }

    let mut result = first.clone();
    for (i, payload) in payloads.iter().enumerate().skip(1) {
        let weight = sizes[i] as f64 / total as f64;
        for (entry_idx, (_, acc)) in result.entries.iter_mut().enumerate() {
            let base = &first.entries[entry_idx].1;
            let other = &payload.entries[entry_idx].1;
            let out = acc.data_mut();
            for ((slot, &b), &o) in out.iter_mut().zip(base.data()).zip(other.data()) {
                let delta = o - b;
                if delta != 0.0 {
                    *slot += weight * delta;
                }
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::seeded_rng;

    fn payload(values: &[f64]) -> TransferPayload {
        TransferPayload {
            mode_tag: "lora".to_string(),
            round: 1,
            entries: vec![(
                "x".to_string(),
                Matrix::from_vec(1, values.len(), values.to_vec()).unwrap(),
            )],
        }
    }

    #[test]
    fn single_payload_is_identity() {
        let p = payload(&[0.1, -2.5, 3.25]);
        let agg = aggregate(&[p.clone()], &[7]).unwrap();
        assert!(agg.bits_eq(&p));
    }

    #[test]
    fn weighted_mean_hand_example() {
        // sizes (1, 3), entries 0 and 4 -> 0.25*0 + 0.75*4 = 3
        let agg = aggregate(&[payload(&[0.0]), payload(&[4.0])], &[1, 3]).unwrap();
        assert_eq!(agg.entries[0].1.get(0, 0), 3.0);
    }

    #[test]
    fn identical_payloads_are_a_fixed_point() {
        let p = payload(&[1.0 / 3.0, -0.7, 42.0]);
        let agg = aggregate(&[p.clone(), p.clone(), p.clone()], &[3, 5, 11]).unwrap();
        assert!(agg.bits_eq(&p));
    }

    #[test]
    fn mismatched_entries_are_a_protocol_error() {
        let a = payload(&[1.0]);
        let mut b = payload(&[1.0]);
        b.entries[0].0 = "y".to_string();
        assert!(matches!(
            aggregate(&[a, b], &[1, 1]),
            Err(Error::Protocol { .. })
        ));
    }

    #[test]
    fn zero_size_is_rejected() {
        let a = payload(&[1.0]);
        let b = payload(&[2.0]);
        assert!(aggregate(&[a, b], &[0, 1]).is_err());
    }

    #[test]
    fn round_trips_through_bytes() {
        let mut rng = seeded_rng("payload-test", &[0]);
        let p = TransferPayload {
            mode_tag: "fft".to_string(),
            round: 9,
            entries: vec![
                ("a".to_string(), Matrix::randn(3, 4, 1.0, &mut rng).unwrap()),
                ("b".to_string(), Matrix::randn(2, 2, 1.0, &mut rng).unwrap()),
            ],
        };
        let back = TransferPayload::from_bytes(&p.to_bytes()).unwrap();
        assert!(p.bits_eq(&back));
        assert_eq!(back.round, 9);
    }
}
