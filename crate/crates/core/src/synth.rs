//! Synthetic clustered corpora for tests and experiments.
//!
//! Each cluster pairs a description template ("fix null deref in {fn}") with
//! a cluster-indicative changed statement, so the cluster is recoverable both
//! from the description (for TF-IDF clustering) and from the patch code (for
//! affiliation prediction). Function names come from a shared pool and appear
//! in the function-definition line and the scope, never in the sliced
//! statements themselves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::model::{Change, ChangeOp, Patch};

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub clusters: usize,
    pub patches_per_cluster: usize,
    /// Probability of appending a noise token to a description.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clusters: 8,
            patches_per_cluster: 40,
            noise_rate: 0.0,
            seed: 0,
        }
    }
}

/// (description template before the function name, cluster-indicative call)
const TOPICS: &[(&str, &str)] = &[
    ("fix null deref in", "null_guard(acc);"),
    ("fix memory leak in", "release_buffer(acc);"),
    ("add bounds check in", "bounds_assert(acc);"),
    ("remove unused variable in", "drop_temp(acc);"),
    ("prevent integer overflow in", "clamp_wide(acc);"),
    ("avoid double free in", "own_once(acc);"),
    ("reject invalid input in", "deny_bad(acc);"),
    ("replace magic constant in", "named_limit(acc);"),
    ("check return status in", "status_probe(acc);"),
    ("fix off by one in", "shift_index(acc);"),
    ("delete dead branch in", "prune_branch(acc);"),
    ("avoid race window in", "hold_lock(acc);"),
];

const FUNCTION_POOL: &[&str] = &[
    "read_block",
    "write_cache",
    "parse_header",
    "alloc_buffer",
    "close_stream",
    "open_file",
    "init_table",
    "update_index",
    "flush_queue",
    "copy_region",
    "scan_input",
    "map_symbol",
    "sort_entries",
    "merge_lists",
    "hash_key",
    "load_config",
    "save_state",
    "reset_timer",
    "grow_array",
    "trim_slice",
    "decode_frame",
    "encode_chunk",
    "seek_offset",
    "lock_mutex",
    "free_handle",
];

const PROJECTS: &[&str] = &["alpha", "beta", "gamma"];
const AUTHORS: &[&str] = &["alice", "bob", "carol", "dan"];

fn buggy_code(function: &str) -> Vec<String> {
    vec![
        format!("int {function}(int value) {{"),
        "int acc = value;".to_string(),
        "int limit = 100;".to_string(),
        "acc = acc + value;".to_string(),
        "return acc;".to_string(),
        "}".to_string(),
    ]
}

/// Generates a clustered corpus. Patches are emitted in round-robin cluster
/// order with strictly increasing times, so a time-based 80/20 split leaves
/// every cluster and function name represented on both sides.
pub fn generate_corpus(cfg: &SynthConfig) -> Corpus {
    assert!(
        cfg.clusters >= 1 && cfg.clusters <= TOPICS.len(),
        "clusters must be in 1..={}",
        TOPICS.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut patches = Vec::with_capacity(cfg.clusters * cfg.patches_per_cluster);
    let mut counter = 0usize;
    for i in 0..cfg.patches_per_cluster {
        for c in 0..cfg.clusters {
            let (template, indicator) = TOPICS[c];
            let function = FUNCTION_POOL[rng.gen_range(0..FUNCTION_POOL.len())];
            let project = PROJECTS[counter % PROJECTS.len()];
            let author = AUTHORS[(counter / PROJECTS.len()) % AUTHORS.len()];
            let mut description = format!("{template} {function}");
            if rng.gen::<f64>() < cfg.noise_rate {
                description.push_str(" again");
            }
            let mut changes = vec![Change {
                op: ChangeOp::Added,
                statement: indicator.to_string(),
                line: 5,
            }];
            if rng.gen::<f64>() < 0.3 {
                // A modification: delete the accumulate line, add a variant.
                changes.push(Change {
                    op: ChangeOp::Deleted,
                    statement: "acc = acc + value;".to_string(),
                    line: 4,
                });
                changes.push(Change {
                    op: ChangeOp::Added,
                    statement: "acc = acc + value + 1;".to_string(),
                    line: 4,
                });
            }
            patches.push(Patch {
                id: format!("syn_{c}_{i}"),
                project: project.to_string(),
                file_path: format!("src/mod{}.c", c % 4),
                function_name: None,
                author: author.to_string(),
                time: 1_000 + counter as i64 * 10,
                description,
                buggy_code: buggy_code(function),
                changes,
            });
            counter += 1;
        }
    }
    Corpus {
        patches,
        provenance: format!("synth(seed={})", cfg.seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{build_dependency_graph, extract_patch_related_code, extract_scope};
    use crate::corpus::{filter_by_length, split, SplitSpec, SplitStrategy};

    #[test]
    fn corpus_shape_and_determinism() {
        let cfg = SynthConfig {
            clusters: 8,
            patches_per_cluster: 5,
            noise_rate: 0.0,
            seed: 3,
        };
        let a = generate_corpus(&cfg);
        let b = generate_corpus(&cfg);
        assert_eq!(a.patches.len(), 40);
        assert_eq!(a.patches, b.patches);
    }

    #[test]
    fn descriptions_survive_filtering() {
        let corpus = generate_corpus(&SynthConfig::default());
        let kept = filter_by_length(&corpus, 3, 15);
        assert_eq!(kept.patches.len(), corpus.patches.len());
    }

    #[test]
    fn function_name_reaches_scope_but_not_slice() {
        let corpus = generate_corpus(&SynthConfig {
            clusters: 4,
            patches_per_cluster: 2,
            noise_rate: 0.0,
            seed: 1,
        });
        for p in &corpus.patches {
            let scope = extract_scope(p);
            assert_eq!(scope.function_names.len(), 1);
            let fname = &scope.function_names[0];
            assert!(FUNCTION_POOL.contains(&fname.as_str()));
            let graph = build_dependency_graph(&p.buggy_code, &p.changes);
            let related = extract_patch_related_code(p, &graph, 10);
            assert!(!related.statements.is_empty());
            for (_, text) in &related.statements {
                assert!(
                    !text.contains(fname.as_str()),
                    "slice leaked the function name: {text}"
                );
            }
        }
    }

    #[test]
    fn splits_cover_all_clusters() {
        let corpus = generate_corpus(&SynthConfig {
            clusters: 8,
            patches_per_cluster: 10,
            noise_rate: 0.0,
            seed: 9,
        });
        let (train, test) = split(
            &corpus,
            &SplitSpec {
                strategy: SplitStrategy::DevProcess,
                ratio: 0.8,
                seed: 0,
            },
        )
        .unwrap();
        for side in [&train, &test] {
            for c in 0..8 {
                assert!(
                    side.patches.iter().any(|p| p.id.starts_with(&format!("syn_{c}_"))),
                    "cluster {c} missing from a split side"
                );
            }
        }
    }
}
