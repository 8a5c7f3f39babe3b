//! Corpus loading, description cleaning, length filtering, and train/test
//! splitting.
//!
//! Corpora are JSONL, one patch per line. Cleaning strips tokens a generator
//! could never reproduce (URLs, emails, commit ids, bug ids, sign-off
//! trailers); filtering keeps descriptions within a token-count band; the two
//! split strategies mirror development-process (time-ordered) and
//! cross-project (project-disjoint) evaluation settings.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{tokenize, Change, ChangeOp, Patch};

/// A loaded patch corpus. Ids are unique within a corpus.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub patches: Vec<Patch>,
    pub provenance: String,
}

/// Train/test split strategy and parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub strategy: SplitStrategy,
    /// Train fraction, strictly between 0 and 1.
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitStrategy {
    /// Sort by time ascending; the earliest `ceil(ratio * n)` patches train.
    DevProcess,
    /// Assign whole projects to train (seeded shuffle) until the train side
    /// first reaches `ratio * n` patches.
    CrossProject,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("split would leave an empty side (corpus of {n} patches, ratio {ratio})")]
    DegenerateSplit { n: usize, ratio: f64 },
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// Per-rule toggles for [`clean_description`]. All rules default to on.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CleanConfig {
    pub remove_urls: bool,
    pub remove_emails: bool,
    pub remove_hex_ids: bool,
    pub remove_bug_ids: bool,
    pub remove_trailers: bool,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            remove_urls: true,
            remove_emails: true,
            remove_hex_ids: true,
            remove_bug_ids: true,
            remove_trailers: true,
        }
    }
}

fn is_url(tok: &str) -> bool {
    tok.starts_with("http://") || tok.starts_with("https://")
}

fn is_email(tok: &str) -> bool {
    match tok.find('@') {
        Some(at) => tok[at + 1..].contains('.'),
        None => false,
    }
}

/// 7-40 characters, all lowercase hex: the shape of an abbreviated or full
/// commit id.
fn is_hex_id(tok: &str) -> bool {
    let len = tok.chars().count();
    (7..=40).contains(&len) && tok.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase())
}

/// `#123` style tracker references and `CVE-YYYY-NNNN` identifiers.
fn is_bug_id(tok: &str) -> bool {
    if let Some(rest) = tok.strip_prefix('#') {
        return !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit());
    }
    if let Some(rest) = tok.strip_prefix("CVE-") {
        let mut parts = rest.splitn(2, '-');
        let (a, b) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
        return !a.is_empty()
            && !b.is_empty()
            && a.chars().all(|c| c.is_ascii_digit())
            && b.chars().all(|c| c.is_ascii_digit());
    }
    false
}

fn is_trailer_line(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with("Signed-off-by:") || t.starts_with("Reviewed-by:")
}

/// Removes unreproducible tokens from a raw description: URL tokens, email
/// tokens, 7-40 char lowercase-hex tokens, `#N`/`CVE-N-N` bug ids, and
/// `Signed-off-by:`/`Reviewed-by:` trailer lines; collapses whitespace and
/// trims. Idempotent.
pub fn clean_description(raw: &str) -> String {
    clean_description_with(raw, &CleanConfig::default())
}

pub fn clean_description_with(raw: &str, cfg: &CleanConfig) -> String {
    let mut kept: Vec<&str> = Vec::new();
    for line in raw.lines() {
        if cfg.remove_trailers && is_trailer_line(line) {
            continue;
        }
        for tok in line.split_whitespace() {
            if cfg.remove_urls && is_url(tok) {
                continue;
            }
            if cfg.remove_emails && is_email(tok) {
                continue;
            }
            if cfg.remove_hex_ids && is_hex_id(tok) {
                continue;
            }
            if cfg.remove_bug_ids && is_bug_id(tok) {
                continue;
            }
            kept.push(tok);
        }
    }
    kept.join(" ")
}

/// On-disk record shape: one JSON object per line. Unknown fields ignored.
#[derive(Debug, Deserialize)]
struct PatchRecord {
    id: String,
    project: String,
    file_path: String,
    #[serde(default)]
    function_name: Option<String>,
    author: String,
    time: i64,
    description: String,
    buggy_code: Vec<String>,
    changes: Vec<ChangeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChangeRecord {
    op: String,
    line: usize,
    statement: String,
}

fn validate(rec: PatchRecord, line_no: usize) -> Result<Patch, CorpusError> {
    let parse_err = |reason: String| CorpusError::Parse {
        line: line_no,
        reason,
    };
    if rec.changes.is_empty() {
        return Err(parse_err(format!("patch {}: changes empty", rec.id)));
    }
    let mut changes = Vec::with_capacity(rec.changes.len());
    for c in rec.changes {
        let op = match c.op.as_str() {
            "add" => ChangeOp::Added,
            "del" => ChangeOp::Deleted,
            other => return Err(parse_err(format!("unknown change op {other:?}"))),
        };
        if c.statement.trim().is_empty() {
            return Err(parse_err("change statement empty".into()));
        }
        if c.line < 1 {
            return Err(parse_err("change line must be >= 1".into()));
        }
        if op == ChangeOp::Deleted && c.line > rec.buggy_code.len() {
            return Err(parse_err(format!(
                "deleted line {} outside buggy code of {} statements",
                c.line,
                rec.buggy_code.len()
            )));
        }
        changes.push(Change {
            op,
            statement: c.statement,
            line: c.line,
        });
    }
    Ok(Patch {
        id: rec.id,
        project: rec.project,
        file_path: rec.file_path,
        function_name: rec.function_name,
        author: rec.author,
        time: rec.time,
        description: rec.description,
        buggy_code: rec.buggy_code,
        changes,
    })
}

/// Loads a JSONL corpus. Malformed lines are reported with their 1-based
/// line number; blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut patches = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PatchRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::Parse {
                line: line_no,
                reason: format!("duplicate patch id {:?}", rec.id),
            });
        }
        patches.push(validate(rec, line_no)?);
    }
    Ok(Corpus {
        patches,
        provenance: path.display().to_string(),
    })
}

/// Writes a corpus back out as JSONL, one patch per line, field order fixed.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for p in &corpus.patches {
        let changes: Vec<ChangeRecord> = p
            .changes
            .iter()
            .map(|c| ChangeRecord {
                op: match c.op {
                    ChangeOp::Added => "add".into(),
                    ChangeOp::Deleted => "del".into(),
                },
                line: c.line,
                statement: c.statement.clone(),
            })
            .collect();
        let rec = serde_json::json!({
            "id": p.id,
            "project": p.project,
            "file_path": p.file_path,
            "function_name": p.function_name,
            "author": p.author,
            "time": p.time,
            "description": p.description,
            "buggy_code": p.buggy_code,
            "changes": changes,
        });
        writeln!(out, "{rec}").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Keeps exactly the patches whose description tokenizes to a length within
/// `[min_tokens, max_tokens]` (inclusive).
pub fn filter_by_length(corpus: &Corpus, min_tokens: usize, max_tokens: usize) -> Corpus {
    assert!(min_tokens >= 1 && max_tokens >= min_tokens);
    let patches = corpus
        .patches
        .iter()
        .filter(|p| {
            let n = tokenize(&p.description).len();
            (min_tokens..=max_tokens).contains(&n)
        })
        .cloned()
        .collect();
    Corpus {
        patches,
        provenance: corpus.provenance.clone(),
    }
}

/// Splits a corpus into train and test per the spec'd strategy. Both sides
/// are non-empty on success, disjoint by id, and cover the whole corpus.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus), CorpusError> {
    assert!(spec.ratio > 0.0 && spec.ratio < 1.0, "ratio must be in (0,1)");
    let n = corpus.patches.len();
    if n == 0 {
        return Err(CorpusError::EmptyCorpus);
    }
    let degenerate = || CorpusError::DegenerateSplit {
        n,
        ratio: spec.ratio,
    };
    let (train, test): (Vec<Patch>, Vec<Patch>) = match spec.strategy {
        SplitStrategy::DevProcess => {
            let mut sorted: Vec<Patch> = corpus.patches.clone();
            // Ties in time break by id ascending.
            sorted.sort_by(|a, b| a.time.cmp(&b.time).then_with(|| a.id.cmp(&b.id)));
            let cut = (spec.ratio * n as f64).ceil() as usize;
            let test = sorted.split_off(cut.min(n));
            (sorted, test)
        }
        SplitStrategy::CrossProject => {
            let mut projects: Vec<String> = Vec::new();
            for p in &corpus.patches {
                if !projects.contains(&p.project) {
                    projects.push(p.project.clone());
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            projects.shuffle(&mut rng);
            let target = spec.ratio * n as f64;
            let mut train_projects = BTreeSet::new();
            let mut count = 0usize;
            for proj in &projects {
                if (count as f64) >= target {
                    break;
                }
                count += corpus.patches.iter().filter(|p| &p.project == proj).count();
                train_projects.insert(proj.clone());
            }
            corpus
                .patches
                .iter()
                .cloned()
                .partition(|p| train_projects.contains(&p.project))
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(degenerate());
    }
    let mk = |patches: Vec<Patch>| Corpus {
        patches,
        provenance: corpus.provenance.clone(),
    };
    Ok((mk(train), mk(test)))
}
