//! Self-describing model files.
//!
//! Layout: the 8-byte magic `NMSTCKPT`, a little-endian u64 header length,
//! the UTF-8 JSON header, then every tensor as little-endian f32 values in
//! manifest order. Manifest offsets are relative to the start of the
//! payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizerMode;
use crate::error::{Error, Result};
use crate::heads::Head;
use crate::net::{Architecture, Backbone, NeuralModel, Tensor};
use crate::vocab::{TokenId, Vocabulary};
use crate::ConditionalModel;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NMSTCKPT";

/// How training text was turned into examples; needed to encode new contexts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRecord {
    pub tokenizer: TokenizerMode,
    pub context_length: usize,
}

impl Default for DataRecord {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerMode::Char,
            context_length: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct VocabRecord {
    tokens: Vec<String>,
    eos_id: TokenId,
    unk_id: Option<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    vocabulary: VocabRecord,
    architecture: Architecture,
    head: Head,
    data: DataRecord,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub model: NeuralModel,
    pub data: DataRecord,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let vocab = self.model.vocab();
        let mut offset = 0u64;
        let tensors = self
            .model
            .backbone()
            .params()
            .tensors()
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: [t.rows, t.cols],
                    offset,
                };
                offset += 4 * t.data.len() as u64;
                e
            })
            .collect();
        let header = Header {
            format_version: FORMAT_VERSION,
            vocabulary: VocabRecord {
                tokens: vocab.tokens().to_vec(),
                eos_id: vocab.eos_id(),
                unk_id: vocab.unk_id(),
            },
            architecture: *self.model.architecture(),
            head: self.model.head(),
            data: self.data,
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.model.backbone().params().tensors() {
            for &x in &t.data {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(format!("header of {header_len} bytes runs past end of file ({} bytes)", bytes.len())))?;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| bad(format!("malformed header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let v = header.vocabulary;
        let vocab = Vocabulary::new(v.tokens, v.eos_id, v.unk_id)?;
        let head = Head::new(header.head.kind(), header.head.epsilon())?;

        let expected = header.architecture.tensor_shapes(vocab.len());
        if expected.len() != header.tensors.len() {
            return Err(bad(format!(
                "architecture needs {} tensors, manifest lists {}",
                expected.len(),
                header.tensors.len()
            )));
        }
        let mut tensors = Vec::with_capacity(expected.len());
        let mut next_offset = 0u64;
        for (entry, (name, rows, cols)) in header.tensors.iter().zip(expected) {
            if entry.name != name || entry.shape != [rows, cols] {
                return Err(bad(format!(
                    "tensor {} has shape {:?}; architecture expects {name} [{rows}, {cols}]",
                    entry.name, entry.shape
                )));
            }
            if entry.offset != next_offset {
                return Err(bad(format!(
                    "tensor {} at offset {} but previous tensors end at {next_offset}",
                    entry.name, entry.offset
                )));
            }
            let n = rows * cols;
            let start = payload_start + entry.offset as usize;
            let end = start + 4 * n;
            if end > bytes.len() {
                return Err(bad(format!(
                    "payload truncated: tensor {} needs bytes {start}..{end} but the file ends at byte {}",
                    entry.name,
                    bytes.len()
                )));
            }
            let data = bytes[start..end]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            tensors.push(Tensor {
                name,
                rows,
                cols,
                data,
            });
            next_offset += 4 * n as u64;
        }
        if payload_start + next_offset as usize != bytes.len() {
            return Err(bad(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - payload_start - next_offset as usize
            )));
        }
        let backbone = Backbone::from_tensors(header.architecture, vocab.len(), tensors)?;
        Ok(Self {
            model: NeuralModel::from_parts(vocab, backbone, head)?,
            data: header.data,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    ModelCheckpoint::from_bytes(&std::fs::read(path)?)
}

/// Rounds every parameter to the nearest f32 so that the in-memory model
/// is exactly what a checkpoint stores.
pub fn round_to_f32(model: &mut NeuralModel) {
    for t in model.backbone_mut().params_mut().tensors_mut() {
        for x in &mut t.data {
            *x = f64::from(*x as f32);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::HeadKind;
    use crate::net::CellKind;

    fn ckpt() -> ModelCheckpoint {
        let arch = Architecture {
            cell: CellKind::Lstm,
            layers: 2,
            hidden: 3,
            tie_embeddings: false,
        };
        let head = Head::new(HeadKind::St, Some(1e-4)).unwrap();
        let mut model = NeuralModel::new(Vocabulary::synthetic(4).unwrap(), arch, head, 1).unwrap();
        round_to_f32(&mut model);
        ModelCheckpoint {
            model,
            data: DataRecord::default(),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = ckpt();
        let bytes = c.to_bytes().unwrap();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncation_reports_offsets() {
        let bytes = ckpt().to_bytes().unwrap();
        let err = ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(ModelCheckpoint::from_bytes(&bytes[..10]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ModelCheckpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn edited_header_is_rejected() {
        let bytes = ckpt().to_bytes().unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + len]).unwrap();
        for (from, to) in [("\"hidden\":3", "\"hidden\":4"), ("\"format_version\":1", "\"format_version\":2")] {
            let edited = header.replace(from, to);
            assert_ne!(edited, header);
            let mut out = bytes[..8].to_vec();
            out.extend_from_slice(&(edited.len() as u64).to_le_bytes());
            out.extend_from_slice(edited.as_bytes());
            out.extend_from_slice(&bytes[16 + len..]);
            assert!(matches!(ModelCheckpoint::from_bytes(&out), Err(Error::Checkpoint(_))), "{to}");
        }
    }
}
