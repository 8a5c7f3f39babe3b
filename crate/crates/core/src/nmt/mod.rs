//! A small encoder-decoder translation model trained with a dual objective:
//! generating the description and predicting the patch's cluster affiliation
//! through a group token at the first target position.
//!
//! Everything is built on a hand-rolled autodiff graph so the analytic
//! gradients of the combined loss can be checked against finite differences
//! end to end. f32 is the production scalar; f64 drives the gradient tests.

pub mod checkpoint;
pub mod decode;
pub mod graph;
pub mod net;
pub mod train;
pub mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decode::DecodeMode;
pub use graph::{Scalar, Tensor};
pub use net::ParamSet;
pub use train::{train, EpochStats, TrainConfig, TrainExample};
pub use vocab::Vocabulary;

/// Floor applied inside every logarithm of the loss computations.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NmtError {
    #[error("{what} length {len} exceeds maximum {max}")]
    SequenceTooLong {
        what: &'static str,
        len: usize,
        max: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("group {group} out of range for {k} clusters")]
    GroupOutOfRange { group: usize, k: usize },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("checkpoint format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub ff_dim: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            attention_heads: 4,
            ff_dim: 128,
            max_source_len: 128,
            max_target_len: 24,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NmtError> {
        let positive = [
            ("embedding_dim", self.embedding_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("attention_heads", self.attention_heads),
            ("ff_dim", self.ff_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(NmtError::ShapeMismatch(format!("{name} must be positive")));
            }
        }
        if self.max_source_len < 2 || self.max_target_len < 2 {
            return Err(NmtError::ShapeMismatch(
                "maximum sequence lengths must be at least 2".into(),
            ));
        }
        if self.embedding_dim % self.attention_heads != 0 {
            return Err(NmtError::ShapeMismatch(format!(
                "attention_heads {} must divide embedding_dim {}",
                self.attention_heads, self.embedding_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NmtError::ShapeMismatch("dropout must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// The encoder-decoder model: parameters, configuration, vocabulary, and the
/// training mode it was built for.
#[derive(Debug, Clone)]
pub struct Seq2SeqModel<F: Scalar> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub dual_objective: bool,
    pub params: ParamSet<F>,
}

impl<F: Scalar> Seq2SeqModel<F> {
    pub fn new(config: ModelConfig, vocab: Vocabulary, dual_objective: bool) -> Result<Self, NmtError> {
        config.validate()?;
        let params = net::init_params(&config, vocab.len());
        Ok(Self {
            config,
            vocab,
            dual_objective,
            params,
        })
    }

    /// Teacher-forced forward pass: row `w` of the result is the probability
    /// distribution over the vocabulary for target position `w`, conditioned
    /// on the source and on `target[0..w)` only (the decoder input is the
    /// right-shifted target starting from `<bos>`).
    pub fn forward(&self, source: &[usize], target: &[usize]) -> Result<Vec<Vec<F>>, NmtError> {
        self.check_lens(source, target.len())?;
        let mut builder = net::NetBuilder::new(&self.config, &self.params, None);
        let enc = builder.encode(source);
        let dec_input = shift_right(target);
        let probs = builder.decode(enc, &dec_input);
        let t = builder.graph.value(probs);
        Ok((0..t.rows).map(|r| t.row(r).to_vec()).collect())
    }

    fn check_lens(&self, source: &[usize], target_len: usize) -> Result<(), NmtError> {
        if source.len() > self.config.max_source_len {
            return Err(NmtError::SequenceTooLong {
                what: "source",
                len: source.len(),
                max: self.config.max_source_len,
            });
        }
        if target_len > self.config.max_target_len {
            return Err(NmtError::SequenceTooLong {
                what: "target",
                len: target_len,
                max: self.config.max_target_len,
            });
        }
        Ok(())
    }
}

/// Decoder input for teacher forcing: `<bos>` followed by all but the last
/// target token.
pub(crate) fn shift_right(target: &[usize]) -> Vec<usize> {
    let mut input = Vec::with_capacity(target.len().max(1));
    input.push(vocab::BOS);
    if target.len() > 1 {
        input.extend_from_slice(&target[..target.len() - 1]);
    }
    input
}

/// Generation cross-entropy: `-sum_w ln(max(p_w[target_w], floor))` over the
/// given positions; `<pad>` targets are skipped.
pub fn loss_generation<F: Scalar>(predicted: &[Vec<F>], target: &[usize]) -> Result<F, NmtError> {
    if predicted.len() != target.len() {
        return Err(NmtError::ShapeMismatch(format!(
            "{} distributions for {} targets",
            predicted.len(),
            target.len()
        )));
    }
    let floor = F::from_f64(LOG_FLOOR);
    let mut loss = F::zero();
    for (dist, &t) in predicted.iter().zip(target) {
        if t == vocab::PAD {
            continue;
        }
        if t >= dist.len() {
            return Err(NmtError::ShapeMismatch(format!(
                "target id {t} outside distribution of {} entries",
                dist.len()
            )));
        }
        loss -= dist[t].max(floor).ln();
    }
    Ok(loss)
}

/// Affiliation cross-entropy over an already-restricted distribution on the
/// group-token block: `-ln(g_hat[true_group])`.
pub fn loss_affiliation<F: Scalar>(
    predicted_group_distribution: &[F],
    true_group: usize,
) -> Result<F, NmtError> {
    if true_group >= predicted_group_distribution.len() {
        return Err(NmtError::GroupOutOfRange {
            group: true_group,
            k: predicted_group_distribution.len(),
        });
    }
    let floor = F::from_f64(LOG_FLOOR);
    Ok(-predicted_group_distribution[true_group].max(floor).ln())
}

/// Combined loss `(L1 + L2) / 2` in dual-objective mode; `L1` unchanged in
/// single-objective mode.
pub fn loss_total<F: Scalar>(l1: F, l2: F, dual_objective: bool) -> Result<F, NmtError> {
    let total = if dual_objective {
        (l1 + l2) / F::from_f64(2.0)
    } else {
        l1
    };
    if !total.is_finite() {
        return Err(NmtError::NonFiniteLoss(format!("L1={l1} L2={l2}")));
    }
    Ok(total)
}

/// Restricts one full-vocabulary distribution to the group block and
/// renormalizes. Used when scoring affiliation from a forward pass.
pub fn group_distribution<F: Scalar>(dist: &[F], vocab: &Vocabulary) -> Vec<F> {
    let start = vocab.group_start();
    let block = &dist[start..start + vocab.group_count()];
    let sum: F = block.iter().cloned().sum();
    if sum > F::zero() {
        block.iter().map(|&p| p / sum).collect()
    } else {
        vec![F::from_f64(1.0 / vocab.group_count() as f64); vocab.group_count()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro_vocab(extra: &[&str], groups: usize) -> Vocabulary {
        let seqs: Vec<Vec<String>> = extra
            .iter()
            .map(|t| vec![t.to_string(), t.to_string()])
            .collect();
        let slices: Vec<&[String]> = seqs.iter().map(|v| v.as_slice()).collect();
        Vocabulary::build(slices.into_iter(), groups, 1)
    }

    fn micro_model(groups: usize) -> Seq2SeqModel<f64> {
        let vocab = micro_vocab(&["a", "b", "c", "d"], groups);
        let cfg = ModelConfig {
            embedding_dim: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            attention_heads: 2,
            ff_dim: 16,
            max_source_len: 8,
            max_target_len: 8,
            dropout: 0.0,
            seed: 3,
        };
        Seq2SeqModel::new(cfg, vocab, true).unwrap()
    }

    #[test]
    fn forward_rows_sum_to_one() {
        let m = micro_model(2);
        let source = vec![4, 5, m.vocab.id("a")];
        let target = vec![m.vocab.id("b"), m.vocab.id("c"), vocab::EOS];
        let probs = m.forward(&source, &target).unwrap();
        assert_eq!(probs.len(), 3);
        for row in &probs {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row sums to {s}");
        }
    }

    #[test]
    fn causal_mask_ignores_later_positions() {
        let m = micro_model(2);
        let source = vec![4, m.vocab.id("a")];
        let t1 = vec![m.vocab.id("b"), m.vocab.id("c"), m.vocab.id("d")];
        let t2 = vec![m.vocab.id("b"), m.vocab.id("d"), m.vocab.id("c")];
        let p1 = m.forward(&source, &t1).unwrap();
        let p2 = m.forward(&source, &t2).unwrap();
        // Positions 0 and 1 depend only on target[0..w), which agree.
        assert_eq!(p1[0], p2[0]);
        assert_eq!(p1[1], p2[1]);
    }

    #[test]
    fn source_too_long_is_rejected() {
        let m = micro_model(2);
        let long = vec![4; 9];
        match m.forward(&long, &[vocab::EOS]) {
            Err(NmtError::SequenceTooLong { what: "source", .. }) => {}
            other => panic!("expected SequenceTooLong, got {other:?}"),
        }
    }

    #[test]
    fn loss_generation_hand_values() {
        // Probability 1 on the correct token -> zero loss.
        let perfect = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
        let l: f64 = loss_generation(&perfect, &[1, 1]).unwrap();
        assert_eq!(l, 0.0);

        // Two positions at probability 0.5 -> -2 ln 0.5.
        let half = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let l: f64 = loss_generation(&half, &[1, 1]).unwrap();
        assert!((l - 1.3863).abs() < 1e-4);

        // <pad> targets are skipped.
        let l: f64 = loss_generation(&half, &[1, vocab::PAD]).unwrap();
        assert!((l - 0.6931).abs() < 1e-4);

        // Uniform over 100 entries, one position -> ln 100.
        let uniform = vec![vec![0.01; 100]];
        let l: f64 = loss_generation(&uniform, &[7]).unwrap();
        assert!((l - 4.6052).abs() < 1e-4);
    }

    #[test]
    fn loss_affiliation_hand_values() {
        let one_hot = vec![1.0, 0.0, 0.0];
        assert_eq!(loss_affiliation(&one_hot, 0).unwrap(), 0.0);

        let skewed = vec![0.7, 0.2, 0.1];
        let l: f64 = loss_affiliation(&skewed, 0).unwrap();
        assert!((l - 0.3567).abs() < 1e-4);

        let uniform = vec![0.125; 8];
        let l: f64 = loss_affiliation(&uniform, 3).unwrap();
        assert!((l - 2.0794).abs() < 1e-4);

        assert!(matches!(
            loss_affiliation(&[0.5f64, 0.5], 2),
            Err(NmtError::GroupOutOfRange { .. })
        ));
    }

    #[test]
    fn loss_total_modes() {
        assert_eq!(loss_total(2.0, 1.0, true).unwrap(), 1.5);
        assert_eq!(loss_total(0.0, 0.0, true).unwrap(), 0.0);
        assert_eq!(loss_total(1.7, 999.0, false).unwrap(), 1.7);
        assert!(matches!(
            loss_total(f64::INFINITY, 0.0, true),
            Err(NmtError::NonFiniteLoss(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::default();
        cfg.attention_heads = 3;
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::default();
        cfg.max_target_len = 1;
        assert!(cfg.validate().is_err());
    }
}
