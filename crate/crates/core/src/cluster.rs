//! Description-similarity clustering: TF-IDF embedding plus deterministic
//! k-means. Group labels feed the dual training objective.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::tokenize;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("input is empty")]
    EmptyInput,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file {path}: {reason}")]
    Malformed { path: String, reason: String },
}

/// Fitted TF-IDF vocabulary: lexicographically ordered terms with
/// `idf(t) = ln((1+N)/(1+df(t))) + 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TfidfVocabulary {
    pub terms: Vec<String>,
    pub idf: Vec<f64>,
    pub doc_count: usize,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl TfidfVocabulary {
    fn rebuild_index(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }
}

/// Fits the TF-IDF vocabulary on lowercased, tokenized descriptions.
pub fn fit_tfidf(descriptions: &[String]) -> Result<TfidfVocabulary, ClusterError> {
    if descriptions.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let n = descriptions.len();
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for d in descriptions {
        let uniq: BTreeSet<String> = tokenize(&d.to_lowercase()).into_iter().collect();
        for t in uniq {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let terms: Vec<String> = df.keys().cloned().collect();
    let idf: Vec<f64> = terms
        .iter()
        .map(|t| ((1.0 + n as f64) / (1.0 + df[t] as f64)).ln() + 1.0)
        .collect();
    let mut vocab = TfidfVocabulary {
        terms,
        idf,
        doc_count: n,
        index: BTreeMap::new(),
    };
    vocab.rebuild_index();
    Ok(vocab)
}

/// Embeds a description as an L2-normalized tf·idf vector. Fully
/// out-of-vocabulary input yields the zero vector.
pub fn embed(vocab: &TfidfVocabulary, description: &str) -> Vec<f64> {
    let mut v = vec![0.0; vocab.dim()];
    for tok in tokenize(&description.to_lowercase()) {
        if let Some(i) = vocab.term_index(&tok) {
            v[i] += vocab.idf[i];
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Fitted clustering model: TF-IDF vocabulary plus k-means centroids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub vocabulary: TfidfVocabulary,
    pub centroids: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_pp_init(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k);
    let first = rng.gen_range(0..vectors.len());
    centroids.push(vectors[first].clone());
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut dart = rng.gen::<f64>() * total;
            let mut pick = vectors.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                dart -= w;
                if dart <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..vectors.len())
        };
        centroids.push(vectors[chosen].clone());
        for (i, v) in vectors.iter().enumerate() {
            let d = sq_dist(v, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Runs seeded k-means++ plus Lloyd iterations to an assignment fixpoint (or
/// `max_iter`). `k` is reduced to the number of distinct vectors when larger.
/// Empty clusters are re-seeded with the point farthest from its assigned
/// centroid. Fully deterministic given `(vectors, k, seed)`.
pub fn fit_kmeans(
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    vocabulary: TfidfVocabulary,
) -> Result<ClusterModel, ClusterError> {
    if vectors.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    assert!(k >= 1, "k must be >= 1");
    let distinct: BTreeSet<Vec<u64>> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x.to_bits()).collect())
        .collect();
    let mut k = k;
    if k > distinct.len() {
        eprintln!(
            "warning: k={} exceeds {} distinct vectors; reducing",
            k,
            distinct.len()
        );
        k = distinct.len();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(vectors, k, &mut rng);
    let mut assignments: Vec<usize> = vec![0; vectors.len()];
    let mut prev_objective = f64::INFINITY;
    for _ in 0..max_iter {
        let mut changed = false;
        let mut objective = 0.0;
        for (i, v) in vectors.iter().enumerate() {
            let (c, d) = nearest(&centroids, v);
            objective += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        debug_assert!(
            objective <= prev_objective + 1e-9,
            "k-means objective increased: {prev_objective} -> {objective}"
        );
        prev_objective = objective;

        let dim = vectors[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (v, &c) in vectors.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(v) {
                *s += x;
            }
        }
        let mut taken: BTreeSet<usize> = BTreeSet::new();
        for c in 0..k {
            if counts[c] > 0 {
                for s in &mut sums[c] {
                    *s /= counts[c] as f64;
                }
                centroids[c] = std::mem::take(&mut sums[c]);
            } else {
                // Re-seed with the farthest point not already taken.
                let far = vectors
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .map(|(i, v)| (i, sq_dist(v, &centroids[assignments[i]])))
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken.insert(far);
                centroids[c] = vectors[far].clone();
                changed = true;
                // The objective may rise transiently after a re-seed.
                prev_objective = f64::INFINITY;
            }
        }
        if !changed {
            break;
        }
    }

    Ok(ClusterModel {
        k,
        seed,
        vocabulary,
        centroids,
    })
}

/// Convenience wrapper: fit TF-IDF on the descriptions, embed, and cluster.
pub fn fit_descriptions(
    descriptions: &[String],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterModel, ClusterError> {
    let vocab = fit_tfidf(descriptions)?;
    let vectors: Vec<Vec<f64>> = descriptions.iter().map(|d| embed(&vocab, d)).collect();
    fit_kmeans(&vectors, k, seed, max_iter, vocab)
}

/// Rule-of-thumb cluster count when the configuration does not pin one.
pub fn default_cluster_count(n_train: usize) -> usize {
    ((n_train as f64 / 2.0).sqrt().round() as usize).max(2)
}

impl ClusterModel {
    /// Assigns a description to its nearest centroid (Euclidean distance,
    /// ties toward the lowest cluster index).
    pub fn assign(&self, description: &str) -> usize {
        let v = embed(&self.vocabulary, description);
        self.assign_vector(&v)
    }

    pub fn assign_vector(&self, v: &[f64]) -> usize {
        nearest(&self.centroids, v).0
    }

    pub fn save(&self, path: &Path) -> Result<(), ClusterError> {
        let json = serde_json::json!({
            "k": self.k,
            "seed": self.seed,
            "terms": self.vocabulary.terms,
            "idf": self.vocabulary.idf,
            "doc_count": self.vocabulary.doc_count,
            "centroids": self.centroids,
        });
        std::fs::write(path, format!("{json}\n")).map_err(|source| ClusterError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        let text = std::fs::read_to_string(path).map_err(|source| ClusterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let malformed = |reason: &str| ClusterError::Malformed {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        #[derive(Deserialize)]
        struct Repr {
            k: usize,
            seed: u64,
            terms: Vec<String>,
            idf: Vec<f64>,
            doc_count: usize,
            centroids: Vec<Vec<f64>>,
        }
        let repr: Repr =
            serde_json::from_str(&text).map_err(|e| malformed(&e.to_string()))?;
        if repr.terms.len() != repr.idf.len() {
            return Err(malformed("terms/idf length mismatch"));
        }
        if repr.centroids.len() != repr.k {
            return Err(malformed("centroid count != k"));
        }
        let mut vocabulary = TfidfVocabulary {
            terms: repr.terms,
            idf: repr.idf,
            doc_count: repr.doc_count,
            index: BTreeMap::new(),
        };
        vocabulary.rebuild_index();
        Ok(ClusterModel {
            k: repr.k,
            seed: repr.seed,
            vocabulary,
            centroids: repr.centroids,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tfidf_formula_by_hand() {
        let vocab = fit_tfidf(&["a b".into(), "a c".into()]).unwrap();
        assert_eq!(vocab.terms, vec!["a", "b", "c"]);
        let idf_a = vocab.idf[vocab.term_index("a").unwrap()];
        let idf_b = vocab.idf[vocab.term_index("b").unwrap()];
        assert!((idf_a - 1.0).abs() < 1e-12);
        assert!((idf_b - ((3.0f64 / 2.0).ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn single_document_uniform_idf() {
        let vocab = fit_tfidf(&["one two three".into()]).unwrap();
        assert!(vocab.idf.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn fit_empty_is_error() {
        assert!(matches!(fit_tfidf(&[]), Err(ClusterError::EmptyInput)));
    }

    #[test]
    fn embed_matches_hand_arithmetic() {
        // Both idf values are 1 when each term appears in every document.
        let vocab = fit_tfidf(&["a b".into(), "a b".into()]).unwrap();
        let v = embed(&vocab, "a a b");
        let norm = (5.0f64).sqrt();
        assert!((v[0] - 2.0 / norm).abs() < 1e-12);
        assert!((v[1] - 1.0 / norm).abs() < 1e-12);
    }

    #[test]
    fn embed_oov_is_zero_and_order_free() {
        let vocab = fit_tfidf(&["a b".into()]).unwrap();
        assert!(embed(&vocab, "z q").iter().all(|&x| x == 0.0));
        assert_eq!(embed(&vocab, "a b"), embed(&vocab, "b a"));
    }

    fn two_blobs(n_per: usize) -> Vec<Vec<f64>> {
        // Well-separated 3-d groups with tiny intra-group jitter.
        let mut out = Vec::new();
        for i in 0..n_per {
            let eps = (i % 5) as f64 * 0.01;
            out.push(vec![1.0 + eps, 0.0, 0.0]);
            out.push(vec![0.0, 0.0, 9.0 + eps]);
        }
        out
    }

    #[test]
    fn kmeans_separates_two_blobs() {
        let vectors = two_blobs(50);
        let vocab = fit_tfidf(&["a".into()]).unwrap();
        let model = fit_kmeans(&vectors, 2, 7, 100, vocab).unwrap();
        let a = model.assign_vector(&vectors[0]);
        let b = model.assign_vector(&vectors[1]);
        assert_ne!(a, b);
        for (i, v) in vectors.iter().enumerate() {
            let expect = if i % 2 == 0 { a } else { b };
            assert_eq!(model.assign_vector(v), expect);
        }
    }

    #[test]
    fn identical_vectors_collapse_k() {
        let vectors = vec![vec![1.0, 2.0]; 10];
        let vocab = fit_tfidf(&["a".into()]).unwrap();
        let model = fit_kmeans(&vectors, 4, 1, 100, vocab).unwrap();
        assert_eq!(model.k, 1);
        assert!(vectors.iter().all(|v| model.assign_vector(v) == 0));
    }

    #[test]
    fn kmeans_is_bitwise_deterministic() {
        let vectors = two_blobs(20);
        let vocab = fit_tfidf(&["a".into()]).unwrap();
        let m1 = fit_kmeans(&vectors, 2, 42, 100, vocab.clone()).unwrap();
        let m2 = fit_kmeans(&vectors, 2, 42, 100, vocab).unwrap();
        assert_eq!(m1.centroids, m2.centroids);
    }

    #[test]
    fn assign_tie_breaks_low_index() {
        let vocab = fit_tfidf(&["a".into()]).unwrap();
        let model = ClusterModel {
            k: 2,
            seed: 0,
            vocabulary: vocab,
            centroids: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
        };
        // The zero vector is equidistant from both centroids.
        assert_eq!(model.assign_vector(&[0.0, 0.0]), 0);
    }

    #[test]
    fn model_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cluster.json");
        let model =
            fit_descriptions(&["fix leak now".into(), "add bound check".into()], 2, 3, 50).unwrap();
        model.save(&path).unwrap();
        let back = ClusterModel::load(&path).unwrap();
        assert_eq!(back.k, model.k);
        assert_eq!(back.centroids, model.centroids);
        assert_eq!(back.assign("fix leak now"), model.assign("fix leak now"));
    }

    proptest! {
        #[test]
        fn assign_is_argmin(
            coords in proptest::collection::vec(-10.0f64..10.0, 3),
            seed in 0..20u64,
        ) {
            let vectors = two_blobs(10);
            let vocab = fit_tfidf(&["a".into()]).unwrap();
            let model = fit_kmeans(&vectors, 2, seed, 100, vocab).unwrap();
            let got = model.assign_vector(&coords);
            let best = model
                .centroids
                .iter()
                .enumerate()
                .min_by(|(i, a), (j, b)| {
                    sq_dist(a, &coords)
                        .partial_cmp(&sq_dist(b, &coords))
                        .unwrap()
                        .then(i.cmp(j))
                })
                .unwrap()
                .0;
            prop_assert_eq!(got, best);
        }

        #[test]
        fn positive_scaling_preserves_assignments(scale in 0.1f64..10.0, seed in 0..20u64) {
            let vectors = two_blobs(15);
            let scaled: Vec<Vec<f64>> =
                vectors.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
            let vocab = fit_tfidf(&["a".into()]).unwrap();
            let m1 = fit_kmeans(&vectors, 2, seed, 100, vocab.clone()).unwrap();
            let m2 = fit_kmeans(&scaled, 2, seed, 100, vocab).unwrap();
            let a1: Vec<usize> = vectors.iter().map(|v| m1.assign_vector(v)).collect();
            let a2: Vec<usize> = scaled.iter().map(|v| m2.assign_vector(v)).collect();
            prop_assert_eq!(a1, a2);
        }
    }
}
