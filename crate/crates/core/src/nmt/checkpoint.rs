//! Versioned binary checkpoint: a JSON header (config, vocabulary, tensor
//! index), little-endian f32 tensor payloads, and a trailing SHA-256 over
//! everything before it. Round-trips are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::Tensor;
use super::net::{param_layout, ParamSet};
use super::vocab::Vocabulary;
use super::{ModelConfig, NmtError, Seq2SeqModel};

const MAGIC: &[u8; 4] = b"PDSC";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    dual_objective: bool,
    vocab_tokens: Vec<String>,
    group_count: usize,
    tensors: Vec<TensorMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NmtError + '_ {
    move |source| NmtError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serializes the model. The tensor order is the canonical parameter layout.
pub fn save_checkpoint(model: &Seq2SeqModel<f32>, path: &Path) -> Result<(), NmtError> {
    let header = Header {
        config: model.config.clone(),
        dual_objective: model.dual_objective,
        vocab_tokens: model.vocab.tokens().to_vec(),
        group_count: model.vocab.group_count(),
        tensors: model
            .params
            .entries
            .iter()
            .map(|(name, t)| TensorMeta {
                name: name.clone(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| NmtError::Malformed(e.to_string()))?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t) in &model.params.entries {
        for &v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Loads a checkpoint, verifying checksum, version, and tensor layout.
pub fn load_checkpoint(path: &Path) -> Result<Seq2SeqModel<f32>, NmtError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() < MAGIC.len() + 4 + 8 + 32 {
        return Err(NmtError::ChecksumMismatch);
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(NmtError::ChecksumMismatch);
    }
    if &body[..4] != MAGIC {
        return Err(NmtError::Malformed("bad magic".into()));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(NmtError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if body.len() < header_end {
        return Err(NmtError::Malformed("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[16..header_end])
        .map_err(|e| NmtError::Malformed(e.to_string()))?;
    header.config.validate()?;

    let mut vocab = Vocabulary::from_tokens(header.vocab_tokens, header.group_count);
    vocab.rebuild_index();

    let expected = param_layout(&header.config, vocab.len());
    if expected.len() != header.tensors.len() {
        return Err(NmtError::Malformed(format!(
            "{} tensors, layout expects {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut entries = Vec::with_capacity(expected.len());
    let mut offset = header_end;
    for (meta, (name, (rows, cols))) in header.tensors.iter().zip(expected) {
        if meta.name != name || meta.rows != rows || meta.cols != cols {
            return Err(NmtError::Malformed(format!(
                "tensor {} ({}x{}) does not match layout {name} ({rows}x{cols})",
                meta.name, meta.rows, meta.cols
            )));
        }
        let n = rows * cols * 4;
        if body.len() < offset + n {
            return Err(NmtError::Malformed("truncated tensor data".into()));
        }
        let data: Vec<f32> = body[offset..offset + n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::from_rows(rows, cols, data)));
        offset += n;
    }
    if offset != body.len() {
        return Err(NmtError::Malformed("trailing bytes after tensors".into()));
    }
    Ok(Seq2SeqModel {
        config: header.config,
        vocab,
        dual_objective: header.dual_objective,
        params: ParamSet { entries },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmt::vocab::{Vocabulary, EOS};
    use crate::nmt::DecodeMode;

    fn model() -> Seq2SeqModel<f32> {
        let seqs: Vec<Vec<String>> = (0..6).map(|i| vec![format!("t{i}"), format!("t{i}")]).collect();
        let slices: Vec<&[String]> = seqs.iter().map(|v| v.as_slice()).collect();
        let vocab = Vocabulary::build(slices.into_iter(), 3, 1);
        Seq2SeqModel::new(
            ModelConfig {
                embedding_dim: 16,
                encoder_layers: 1,
                decoder_layers: 1,
                attention_heads: 2,
                ff_dim: 32,
                max_source_len: 8,
                max_target_len: 8,
                dropout: 0.0,
                seed: 9,
            },
            vocab,
            true,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        for (a, b) in m.params.entries.iter().zip(&back.params.entries) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.data, b.1.data);
        }
        let source = vec![m.vocab.id("t0"), m.vocab.id("t3")];
        let target = vec![m.vocab.id("t1"), EOS];
        let p1 = m.forward(&source, &target).unwrap();
        let p2 = back.forward(&source, &target).unwrap();
        assert_eq!(p1, p2);
        let src_tokens: Vec<String> = vec!["t0".into(), "t3".into()];
        assert_eq!(
            m.generate(&src_tokens, DecodeMode::Greedy, 4),
            back.generate(&src_tokens, DecodeMode::Greedy, 4)
        );
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NmtError::ChecksumMismatch)
        ));
    }

    #[test]
    fn wrong_version_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9; // bump version, then re-seal the checksum
        let body_len = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NmtError::VersionMismatch { found: 9, .. })
        ));
    }
}
