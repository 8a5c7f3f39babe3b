//! Flat pipeline configuration: one TOML file, every key overridable from
//! the command line. A single global seed derives all stage seeds.

use std::path::{Path, PathBuf};

use patchdesc_core::corpus::SplitStrategy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub workdir: PathBuf,
    pub seed: u64,

    pub split_strategy: SplitStrategy,
    pub split_ratio: f64,
    pub min_desc_tokens: usize,
    pub max_desc_tokens: usize,
    pub clean_urls: bool,
    pub clean_emails: bool,
    pub clean_hex_ids: bool,
    pub clean_bug_ids: bool,
    pub clean_trailers: bool,

    pub max_statements: usize,
    pub max_history: usize,
    pub use_scope: bool,
    /// Optional sidecar JSONL of precomputed dependency edges.
    pub edges: Option<PathBuf>,

    /// Cluster count; 0 picks `max(2, round(sqrt(n/2)))` from the train size.
    pub clusters: usize,

    pub embedding_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub ff_dim: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub dropout: f64,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub dual_objective: bool,
    pub min_token_freq: usize,

    /// 1 decodes greedily; larger values run beam search.
    pub beam_width: usize,
    /// Which split to decode: "test" or "train".
    pub gen_split: String,
    /// Maximum generated description length in tokens.
    pub max_gen_len: usize,

    /// Optional precomputed sentence vectors for semantic similarity.
    pub semsim_vectors: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            workdir: PathBuf::from("work"),
            seed: 42,
            split_strategy: SplitStrategy::DevProcess,
            split_ratio: 0.8,
            min_desc_tokens: 3,
            max_desc_tokens: 15,
            clean_urls: true,
            clean_emails: true,
            clean_hex_ids: true,
            clean_bug_ids: true,
            clean_trailers: true,
            max_statements: 10,
            max_history: 10,
            use_scope: true,
            edges: None,
            clusters: 0,
            embedding_dim: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            attention_heads: 4,
            ff_dim: 128,
            max_source_len: 128,
            max_target_len: 24,
            dropout: 0.0,
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            grad_clip: 1.0,
            dual_objective: true,
            min_token_freq: 2,
            beam_width: 1,
            gen_split: "test".into(),
            max_gen_len: 18,
            semsim_vectors: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(CliError::Usage("split_ratio must be in (0,1)".into()));
        }
        if self.min_desc_tokens < 1 || self.max_desc_tokens < self.min_desc_tokens {
            return Err(CliError::Usage(
                "description token bounds must satisfy 1 <= min <= max".into(),
            ));
        }
        for (name, v) in [
            ("max_statements", self.max_statements),
            ("batch_size", self.batch_size),
            ("beam_width", self.beam_width),
        ] {
            if v == 0 {
                return Err(CliError::Usage(format!("{name} must be positive")));
            }
        }
        if self.gen_split != "test" && self.gen_split != "train" {
            return Err(CliError::Usage("gen_split must be \"test\" or \"train\"".into()));
        }
        if self.max_gen_len + 1 > self.max_target_len {
            return Err(CliError::Usage(
                "max_gen_len must leave room inside max_target_len".into(),
            ));
        }
        Ok(())
    }

    pub fn clean_config(&self) -> patchdesc_core::corpus::CleanConfig {
        patchdesc_core::corpus::CleanConfig {
            remove_urls: self.clean_urls,
            remove_emails: self.clean_emails,
            remove_hex_ids: self.clean_hex_ids,
            remove_bug_ids: self.clean_bug_ids,
            remove_trailers: self.clean_trailers,
        }
    }

    pub fn model_config(&self) -> patchdesc_core::nmt::ModelConfig {
        patchdesc_core::nmt::ModelConfig {
            embedding_dim: self.embedding_dim,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            attention_heads: self.attention_heads,
            ff_dim: self.ff_dim,
            max_source_len: self.max_source_len,
            max_target_len: self.max_target_len,
            dropout: self.dropout,
            seed: stage_seed(self.seed, "model"),
        }
    }

    pub fn train_config(&self) -> patchdesc_core::nmt::TrainConfig {
        patchdesc_core::nmt::TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            grad_clip: self.grad_clip,
            dual_objective: self.dual_objective,
            seed: stage_seed(self.seed, "train"),
        }
    }
}

/// Deterministically derives a per-stage seed from the global seed.
pub fn stage_seed(global: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.epochs, cfg.epochs);

        let bad: Result<PipelineConfig, _> = toml::from_str("not_a_key = 1");
        assert!(bad.is_err());
    }

    #[test]
    fn stage_seeds_differ_by_stage() {
        assert_ne!(stage_seed(42, "train"), stage_seed(42, "cluster"));
        assert_eq!(stage_seed(42, "train"), stage_seed(42, "train"));
        assert_ne!(stage_seed(1, "train"), stage_seed(2, "train"));
    }
}
