//! Evaluation metrics for generated descriptions: corpus BLEU, METEOR (the
//! simplified exact-unigram formulation), ROUGE-L F1, Exact Match, and a
//! pluggable semantic-similarity measure.
//!
//! Overlap metrics lowercase both sides and split on whitespace;
//! Exact Match is byte-exact by design.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::cluster::{embed, fit_tfidf};

/// A reference/hypothesis pair. The reference must be non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub reference: String,
    pub hypothesis: String,
}

impl EvalPair {
    pub fn new(reference: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        Self {
            reference: reference.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

/// All scores live in [0,1]; the CLI renders them x100 with two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub meteor: f64,
    pub rouge_l_f1: f64,
    pub exact_match_rate: f64,
    pub sem_sim: f64,
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("input is empty")]
    EmptyInput,
    #[error("embedding dimension mismatch: {0}")]
    DimensionMismatch(String),
}

fn lower_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Corpus-level BLEU-4 with uniform weights. Clipped n-gram matches and
/// candidate counts are summed over the corpus; orders that produce no
/// candidate n-grams anywhere are excluded and the weights renormalized over
/// the rest; any remaining order with zero matches sends the score to 0.
/// BP = 1 if c > r, else exp(1 - r/c).
pub fn bleu(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    const N: usize = 4;
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut matches = [0u64; N];
    let mut candidates = [0u64; N];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for pair in pairs {
        let hyp = lower_tokens(&pair.hypothesis);
        let rf = lower_tokens(&pair.reference);
        hyp_len += hyp.len() as u64;
        ref_len += rf.len() as u64;
        for n in 1..=N {
            if hyp.len() < n {
                continue;
            }
            let mut ref_counts: BTreeMap<&[String], u64> = BTreeMap::new();
            if rf.len() >= n {
                for w in rf.windows(n) {
                    *ref_counts.entry(w).or_insert(0) += 1;
                }
            }
            let mut hyp_counts: BTreeMap<&[String], u64> = BTreeMap::new();
            for w in hyp.windows(n) {
                *hyp_counts.entry(w).or_insert(0) += 1;
            }
            candidates[n - 1] += (hyp.len() - n + 1) as u64;
            for (gram, count) in hyp_counts {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matches[n - 1] += count.min(clip);
            }
        }
    }
    let included: Vec<usize> = (0..N).filter(|&i| candidates[i] > 0).collect();
    if included.is_empty() {
        return Ok(0.0);
    }
    if included.iter().any(|&i| matches[i] == 0) {
        return Ok(0.0);
    }
    let w = 1.0 / included.len() as f64;
    let log_mean: f64 = included
        .iter()
        .map(|&i| w * (matches[i] as f64 / candidates[i] as f64).ln())
        .sum();
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * log_mean.exp())
}

/// Greedy left-to-right alignment: each hypothesis token takes the leftmost
/// unused matching reference position. Returns the matched reference
/// positions in hypothesis order.
fn greedy_alignment(hyp: &[String], rf: &[String]) -> Vec<usize> {
    let mut used = vec![false; rf.len()];
    let mut positions = Vec::new();
    for h in hyp {
        if let Some(j) = rf
            .iter()
            .enumerate()
            .position(|(j, r)| !used[j] && r == h)
        {
            used[j] = true;
            positions.push(j);
        }
    }
    positions
}

/// Number of chunks: maximal runs of matches that are contiguous and
/// in-order in the reference.
fn chunk_count(positions: &[usize]) -> usize {
    if positions.is_empty() {
        return 0;
    }
    1 + positions
        .windows(2)
        .filter(|w| w[1] != w[0] + 1)
        .count()
}

/// Mean per-pair METEOR with exact unigram matching:
/// `F = 10PR/(R+9P)`, chunk penalty `p = 0.5 (c/m)^3`, score `F (1-p)`.
pub fn meteor(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut total = 0.0;
    for pair in pairs {
        let hyp = lower_tokens(&pair.hypothesis);
        let rf = lower_tokens(&pair.reference);
        let positions = greedy_alignment(&hyp, &rf);
        let m = positions.len() as f64;
        if m == 0.0 {
            continue;
        }
        let precision = m / hyp.len() as f64;
        let recall = m / rf.len() as f64;
        let f = 10.0 * precision * recall / (recall + 9.0 * precision);
        let c = chunk_count(&positions) as f64;
        let penalty = 0.5 * (c / m).powi(3);
        total += f * (1.0 - penalty);
    }
    Ok(total / pairs.len() as f64)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut dp = vec![0usize; b.len() + 1];
    for x in a {
        let mut prev = 0;
        for (j, y) in b.iter().enumerate() {
            let diag = prev;
            prev = dp[j + 1];
            dp[j + 1] = if x == y {
                diag + 1
            } else {
                dp[j + 1].max(dp[j])
            };
        }
    }
    dp[b.len()]
}

/// Mean per-pair ROUGE-L F1: recall = LCS/|ref|, precision = LCS/|hyp|.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut total = 0.0;
    for pair in pairs {
        let hyp = lower_tokens(&pair.hypothesis);
        let rf = lower_tokens(&pair.reference);
        let l = lcs_len(&rf, &hyp) as f64;
        if l == 0.0 || hyp.is_empty() {
            continue;
        }
        let r = l / rf.len() as f64;
        let p = l / hyp.len() as f64;
        total += 2.0 * p * r / (p + r);
    }
    Ok(total / pairs.len() as f64)
}

/// Fraction of byte-identical pairs. Case- and space-sensitive.
pub fn exact_match(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hits = pairs
        .iter()
        .filter(|p| p.reference == p.hypothesis)
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(format!(
            "{} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        // Equal vectors (both zero) count as identical.
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

/// Mean cosine similarity under a caller-supplied text embedder, clamped to
/// [0,1] per pair.
pub fn sem_sim<E>(pairs: &[EvalPair], embedder: E) -> Result<f64, MetricError>
where
    E: Fn(&str) -> Vec<f64>,
{
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut total = 0.0;
    for pair in pairs {
        total += cosine(&embedder(&pair.reference), &embedder(&pair.hypothesis))?;
    }
    Ok(total / pairs.len() as f64)
}

/// The default semantic-similarity proxy: a TF-IDF embedder fitted on the
/// references. Reports using it must be labeled as proxy scores; supply
/// precomputed vectors to use an external sentence encoder instead.
pub fn sem_sim_tfidf_proxy(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let refs: Vec<String> = pairs.iter().map(|p| p.reference.clone()).collect();
    let vocab = fit_tfidf(&refs).map_err(|_| MetricError::EmptyInput)?;
    sem_sim(pairs, |text| embed(&vocab, text))
}

/// Mean cosine over precomputed (reference, hypothesis) vector pairs.
pub fn sem_sim_precomputed(vectors: &[(Vec<f64>, Vec<f64>)]) -> Result<f64, MetricError> {
    if vectors.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut total = 0.0;
    for (r, h) in vectors {
        total += cosine(r, h)?;
    }
    Ok(total / vectors.len() as f64)
}

/// Computes the full report with the TF-IDF proxy for semantic similarity.
pub fn report(pairs: &[EvalPair]) -> Result<MetricReport, MetricError> {
    Ok(MetricReport {
        bleu: bleu(pairs)?,
        meteor: meteor(pairs)?,
        rouge_l_f1: rouge_l(pairs)?,
        exact_match_rate: exact_match(pairs)?,
        sem_sim: sem_sim_tfidf_proxy(pairs)?,
    })
}
