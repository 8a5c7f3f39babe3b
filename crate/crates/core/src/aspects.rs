//! Rule-based what/how/where analysis of patch descriptions.
//!
//! `what`: the description mentions a bug type (substring match).
//! `how`: it names a fixing action (token-prefix match on verb stems).
//! `where`: it starts with a file/module/function name from the patch scope.

use serde::Serialize;
use thiserror::Error;

use crate::context::extract_scope;
use crate::corpus::Corpus;
use crate::model::PatchScope;

/// Bug-type keywords for the `what` aspect (substring match, lowercased).
pub const WHAT_KEYWORDS: &[&str] = &[
    "mem", "null", "leak", "overflow", "injection", "typo", "bound", "crash", "unused", "uninit",
];

/// Action stems for the `how` aspect (token-prefix match, lowercased).
pub const HOW_STEMS: &[&str] = &[
    "add", "fix", "check", "remove", "delete", "avoid", "prevent", "reject", "replace",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AspectReport {
    pub what: bool,
    pub how: bool,
    pub r#where: bool,
}

#[derive(Debug, Error)]
pub enum AspectError {
    #[error("corpus is empty")]
    EmptyCorpus,
}

fn matches_where(description: &str, scope: &PatchScope) -> bool {
    let Some(first_raw) = description.split_whitespace().next() else {
        return false;
    };
    let first = first_raw.trim_end_matches(':').to_lowercase();
    if first.is_empty() {
        return false;
    }
    let mut candidates: Vec<String> = Vec::new();
    let path = scope.file_path.to_lowercase();
    if !path.is_empty() {
        let stem = path.rsplit_once('.').map(|(s, _)| s.to_string());
        candidates.push(path.clone());
        if let Some(s) = stem {
            candidates.push(s);
        }
        for seg in path.split('/') {
            candidates.push(seg.to_string());
            if let Some((s, _)) = seg.rsplit_once('.') {
                candidates.push(s.to_string());
            }
        }
    }
    candidates.extend(scope.function_names.iter().map(|f| f.to_lowercase()));
    candidates
        .iter()
        .any(|c| !c.is_empty() && (c == &first || c.starts_with(&first) || c.ends_with(&first)))
}

/// Classifies which of the what/how/where aspects a description conveys.
pub fn analyze_aspects(description: &str, scope: &PatchScope) -> AspectReport {
    let lower = description.to_lowercase();
    let what = WHAT_KEYWORDS.iter().any(|k| lower.contains(k));
    let how = lower
        .split_whitespace()
        .any(|tok| HOW_STEMS.iter().any(|s| tok.starts_with(s)));
    let r#where = matches_where(description, scope);
    AspectReport { what, how, r#where }
}

/// Fractions of descriptions conveying all three, at least two, and at least
/// one aspect, over the whole corpus. Scopes come from [`extract_scope`].
pub fn corpus_aspect_stats(corpus: &Corpus) -> Result<(f64, f64, f64), AspectError> {
    if corpus.patches.is_empty() {
        return Err(AspectError::EmptyCorpus);
    }
    let (mut all3, mut ge2, mut ge1) = (0usize, 0usize, 0usize);
    for p in &corpus.patches {
        let scope = extract_scope(p);
        let r = analyze_aspects(&p.description, &scope);
        let count = r.what as usize + r.how as usize + r.r#where as usize;
        all3 += (count == 3) as usize;
        ge2 += (count >= 2) as usize;
        ge1 += (count >= 1) as usize;
    }
    let n = corpus.patches.len() as f64;
    Ok((all3 as f64 / n, ge2 as f64 / n, ge1 as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Change, ChangeOp, Patch};
    use proptest::prelude::*;

    fn fig1_scope() -> PatchScope {
        PatchScope {
            file_path: "libavformat/avio.c".into(),
            function_names: vec!["url_find_protocol".into()],
        }
    }

    #[test]
    fn worked_example_has_all_aspects() {
        let r = analyze_aspects(
            "avformat/avio: Fix null pointer dereference in case of memleak",
            &fig1_scope(),
        );
        assert_eq!(
            r,
            AspectReport {
                what: true,
                how: true,
                r#where: true
            }
        );
    }

    #[test]
    fn no_rule_matches() {
        let r = analyze_aspects("update docs", &PatchScope::default());
        assert_eq!(
            r,
            AspectReport {
                what: false,
                how: false,
                r#where: false
            }
        );
    }

    #[test]
    fn keyword_miss_example() {
        let r = analyze_aspects("Reduce picture size for yadif.", &PatchScope::default());
        assert_eq!(
            r,
            AspectReport {
                what: false,
                how: false,
                r#where: false
            }
        );
    }

    #[test]
    fn how_matches_stem_prefixes() {
        for d in ["fixes a thing", "fixed a thing", "fixing a thing"] {
            assert!(analyze_aspects(d, &PatchScope::default()).how, "{d}");
        }
    }

    #[test]
    fn where_matches_function_name_start() {
        let scope = PatchScope {
            file_path: "src/io.c".into(),
            function_names: vec!["read_header".into()],
        };
        assert!(analyze_aspects("read_header: handle EOF", &scope).r#where);
        assert!(analyze_aspects("io: handle EOF", &scope).r#where);
        assert!(!analyze_aspects("handle EOF in reader", &scope).r#where);
    }

    #[test]
    fn stats_on_mixed_corpus() {
        let mk = |desc: &str| Patch {
            id: desc.into(),
            project: "p".into(),
            file_path: "m/io.c".into(),
            function_name: Some("io_read".into()),
            author: "a".into(),
            time: 1,
            description: desc.into(),
            buggy_code: vec!["x = 1;".into()],
            changes: vec![Change {
                op: ChangeOp::Deleted,
                statement: "x = 1;".into(),
                line: 1,
            }],
        };
        let corpus = Corpus {
            patches: vec![
                mk("io_read: fix null deref"), // what+how+where
                mk("fix the leak"),            // what+how
                mk("update docs"),             // none
                mk("io_read: cleanup"),        // where only
            ],
            provenance: "test".into(),
        };
        let (all3, ge2, ge1) = corpus_aspect_stats(&corpus).unwrap();
        assert!((all3 - 0.25).abs() < 1e-12);
        assert!((ge2 - 0.5).abs() < 1e-12);
        assert!((ge1 - 0.75).abs() < 1e-12);

        let empty = Corpus::default();
        assert!(matches!(corpus_aspect_stats(&empty), Err(AspectError::EmptyCorpus)));
    }

    proptest! {
        #[test]
        fn case_insensitive(desc in "[a-zA-Z :/._]{0,40}") {
            let scope = fig1_scope();
            prop_assert_eq!(
                analyze_aspects(&desc, &scope),
                analyze_aspects(&desc.to_lowercase(), &scope)
            );
        }

        #[test]
        fn adding_fix_keeps_how_true(desc in "[a-z ]{0,30}") {
            let scope = PatchScope::default();
            let with_fix = format!("{desc} fix");
            prop_assert!(analyze_aspects(&with_fix, &scope).how);
        }
    }
}
