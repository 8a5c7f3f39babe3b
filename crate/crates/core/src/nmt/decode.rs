//! Greedy and beam-search decoding. In dual-objective mode the first step is
//! forced into the `<grp_*>` block and reported as the predicted group; the
//! block, `<pad>`, and `<bos>` are masked out of every later step.

use super::graph::{Scalar, Tensor};
use super::net::NetBuilder;
use super::vocab::{BOS, EOS, PAD};
use super::{Seq2SeqModel, LOG_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    score: f64,
    finished: bool,
}

impl<F: Scalar> Seq2SeqModel<F> {
    /// Generates a description for a source token sequence. Returns the
    /// predicted group (dual-objective checkpoints only) and the description
    /// text, tokens joined by single spaces. The source is truncated to the
    /// configured maximum; decoding stops at `<eos>` or `max_len` tokens.
    pub fn generate(
        &self,
        source_tokens: &[String],
        mode: DecodeMode,
        max_len: usize,
    ) -> (Option<usize>, String) {
        assert!(
            max_len + 1 <= self.config.max_target_len,
            "max_len must leave room inside max_target_len"
        );
        let mut source = self.vocab.encode(source_tokens);
        source.truncate(self.config.max_source_len);

        // Encode once; decoding steps re-run only the decoder stack.
        let enc_out: Tensor<F> = {
            let mut b = NetBuilder::new(&self.config, &self.params, None);
            let enc = b.encode(&source);
            b.graph.value(enc).clone()
        };

        let width = match mode {
            DecodeMode::Greedy => 1,
            DecodeMode::Beam(w) => w.max(1),
        };

        let mut group = None;
        let mut seed_tokens: Vec<Hypothesis> = vec![Hypothesis {
            tokens: Vec::new(),
            score: 0.0,
            finished: false,
        }];
        if self.dual_objective && self.vocab.group_count() > 0 {
            // Step 0: choose within the group block only.
            let dist = self.next_distribution(&enc_out, &[]);
            let start = self.vocab.group_start();
            let mut scored: Vec<(f64, usize)> = (0..self.vocab.group_count())
                .map(|g| (log_prob(dist[start + g]), g))
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            scored.truncate(width);
            group = Some(scored[0].1);
            seed_tokens = scored
                .into_iter()
                .map(|(s, g)| Hypothesis {
                    tokens: vec![self.vocab.group_token_id(g)],
                    score: s,
                    finished: false,
                })
                .collect();
        }

        let best = self.beam_loop(&enc_out, seed_tokens, width, max_len);
        // In beam mode the best hypothesis decides the reported group.
        if self.dual_objective && self.vocab.group_count() > 0 {
            group = best.tokens.first().and_then(|&t| self.vocab.group_of_id(t));
        }
        let desc_tokens: Vec<&str> = best
            .tokens
            .iter()
            .filter(|&&t| t != EOS && self.vocab.group_of_id(t).is_none())
            .map(|&t| self.vocab.token(t))
            .collect();
        (group, desc_tokens.join(" "))
    }

    fn beam_loop(
        &self,
        enc_out: &Tensor<F>,
        seeds: Vec<Hypothesis>,
        width: usize,
        max_len: usize,
    ) -> Hypothesis {
        let group_len = seeds
            .first()
            .map(|h| h.tokens.len())
            .unwrap_or(0);
        let mut live = seeds;
        let mut finished: Vec<Hypothesis> = Vec::new();
        while !live.is_empty() {
            let done_len = live[0].tokens.len() - group_len >= max_len;
            if done_len {
                finished.append(&mut live);
                break;
            }
            // (score, new token, parent order, tokens)
            let mut candidates: Vec<(f64, usize, usize, Vec<usize>)> = Vec::new();
            for (parent, hyp) in live.iter().enumerate() {
                let dist = self.next_distribution(enc_out, &hyp.tokens);
                for (tok, &p) in dist.iter().enumerate() {
                    if !self.token_allowed(tok) {
                        continue;
                    }
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(tok);
                    candidates.push((hyp.score + log_prob(p), tok, parent, tokens));
                }
            }
            candidates.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            candidates.truncate(width);
            live = Vec::new();
            for (score, tok, _, tokens) in candidates {
                let hyp = Hypothesis {
                    tokens,
                    score,
                    finished: tok == EOS,
                };
                if hyp.finished {
                    finished.push(hyp);
                } else {
                    live.push(hyp);
                }
            }
        }
        finished
            .into_iter()
            .max_by(|a, b| {
                a.score
                    .partial_cmp(&b.score)
                    .unwrap()
                    .then_with(|| b.tokens.cmp(&a.tokens))
            })
            .expect("at least one hypothesis")
    }

    /// Distribution over the token following `prefix`.
    fn next_distribution(&self, enc_out: &Tensor<F>, prefix: &[usize]) -> Vec<F> {
        let mut b = NetBuilder::new(&self.config, &self.params, None);
        let enc = b.graph.leaf(enc_out.clone());
        let mut dec_input = Vec::with_capacity(prefix.len() + 1);
        dec_input.push(BOS);
        dec_input.extend_from_slice(prefix);
        let probs = b.decode(enc, &dec_input);
        let t = b.graph.value(probs);
        t.row(t.rows - 1).to_vec()
    }

    fn token_allowed(&self, tok: usize) -> bool {
        tok != PAD && tok != BOS && self.vocab.group_of_id(tok).is_none()
    }
}

fn log_prob<F: Scalar>(p: F) -> f64 {
    p.to_f64().max(LOG_FLOOR).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmt::train::{train, TrainConfig, TrainExample};
    use crate::nmt::vocab::Vocabulary;
    use crate::nmt::ModelConfig;

    fn word_seqs(words: &[&str]) -> Vec<Vec<String>> {
        words
            .iter()
            .map(|w| vec![w.to_string(), w.to_string()])
            .collect()
    }

    #[test]
    fn beam_width_one_equals_greedy() {
        let seqs = word_seqs(&["a", "b", "c", "d", "e"]);
        let slices: Vec<&[String]> = seqs.iter().map(|v| v.as_slice()).collect();
        let vocab = Vocabulary::build(slices.into_iter(), 2, 1);
        let cfg = ModelConfig {
            embedding_dim: 16,
            encoder_layers: 1,
            decoder_layers: 1,
            attention_heads: 2,
            ff_dim: 32,
            max_source_len: 8,
            max_target_len: 8,
            dropout: 0.0,
            seed: 11,
        };
        let model = Seq2SeqModel::<f32>::new(cfg, vocab, true).unwrap();
        let source: Vec<String> = vec!["a".into(), "c".into()];
        let greedy = model.generate(&source, DecodeMode::Greedy, 5);
        let beam1 = model.generate(&source, DecodeMode::Beam(1), 5);
        assert_eq!(greedy, beam1);
    }

    #[test]
    fn memorized_pair_decodes_with_group() {
        let seqs = word_seqs(&["fix", "leak", "buf", "io"]);
        let slices: Vec<&[String]> = seqs.iter().map(|v| v.as_slice()).collect();
        let vocab = Vocabulary::build(slices.into_iter(), 4, 1);
        let cfg = ModelConfig {
            embedding_dim: 32,
            encoder_layers: 1,
            decoder_layers: 1,
            attention_heads: 2,
            ff_dim: 64,
            max_source_len: 8,
            max_target_len: 8,
            dropout: 0.0,
            seed: 2,
        };
        let mut model = Seq2SeqModel::<f32>::new(cfg, vocab, true).unwrap();
        let ex = |src: &[&str], group: usize, tgt: &[&str]| TrainExample {
            source: src.iter().map(|t| model.vocab.id(t)).collect(),
            group: Some(group),
            target: tgt
                .iter()
                .map(|t| model.vocab.id(t))
                .chain([crate::nmt::vocab::EOS])
                .collect(),
        };
        let examples = vec![
            ex(&["buf", "io"], 3, &["fix", "leak"]),
            ex(&["io", "buf"], 1, &["leak", "io"]),
            ex(&["fix", "fix"], 0, &["io"]),
            ex(&["leak", "buf"], 2, &["buf"]),
        ];
        let cfg = TrainConfig {
            epochs: 120,
            batch_size: 2,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        train(&mut model, &examples, &cfg).unwrap();
        let source: Vec<String> = vec!["buf".into(), "io".into()];
        let (group, text) = model.generate(&source, DecodeMode::Greedy, 6);
        assert_eq!(group, Some(3));
        assert_eq!(text, "fix leak");
    }

    #[test]
    fn eos_first_yields_empty_description() {
        // Untrained model may emit anything; force the degenerate path by
        // allowing zero description tokens.
        let seqs = word_seqs(&["x"]);
        let slices: Vec<&[String]> = seqs.iter().map(|v| v.as_slice()).collect();
        let vocab = Vocabulary::build(slices.into_iter(), 2, 1);
        let model = Seq2SeqModel::<f32>::new(
            ModelConfig {
                embedding_dim: 8,
                encoder_layers: 1,
                decoder_layers: 1,
                attention_heads: 2,
                ff_dim: 16,
                max_source_len: 4,
                max_target_len: 4,
                dropout: 0.0,
                seed: 1,
            },
            vocab,
            true,
        )
        .unwrap();
        let (group, text) = model.generate(&["x".into()], DecodeMode::Greedy, 0);
        assert!(group.is_some());
        assert_eq!(text, "");
    }
}
