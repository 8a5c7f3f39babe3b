//! Domain types for software patches and the deterministic assembly of
//! model inputs and outputs.
//!
//! A patch is a 5-tuple of buggy code, change set, author, time, and
//! description. The model input is built from three context segments —
//! patch-related code, patch scope, and historical descriptions — joined
//! by literal marker tokens.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker opening the annotated-code segment of a source sequence.
pub const CODE_MARKER: &str = "<code>";
/// Marker opening the scope segment (file path + function names).
pub const SCOPE_MARKER: &str = "<scope>";
/// Marker opening the historical-descriptions segment.
pub const HIST_MARKER: &str = "<hist>";
/// Separator between consecutive historical descriptions.
pub const SEP_MARKER: &str = "<sep>";
/// Per-statement annotation markers inside the code segment.
pub const ADD_MARKER: &str = "<add>";
pub const DEL_MARKER: &str = "<del>";
pub const CTX_MARKER: &str = "<ctx>";

/// Renders the group-affiliation token for cluster `k`.
pub fn group_token(k: usize) -> String {
    format!("<grp_{k}>")
}

/// Parses a `<grp_K>` token back to its cluster index.
pub fn parse_group_token(tok: &str) -> Option<usize> {
    tok.strip_prefix("<grp_")?.strip_suffix('>')?.parse().ok()
}

/// Change operation. A modification is represented as a Deleted+Added pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChangeOp {
    Added,
    Deleted,
}

/// One changed statement of a patch.
///
/// `line` is the 1-based line in the buggy version for Deleted statements;
/// for Added statements it is the insertion anchor (the statement is placed
/// immediately before that buggy line, with `n + 1` meaning append).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub op: ChangeOp,
    pub statement: String,
    pub line: usize,
}

/// A software patch: buggy code, change set, author, time, and description,
/// plus the scope carriers (project, file path, optional function name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub id: String,
    pub project: String,
    pub file_path: String,
    #[serde(default)]
    pub function_name: Option<String>,
    pub author: String,
    /// UTC seconds since epoch.
    pub time: i64,
    pub description: String,
    pub buggy_code: Vec<String>,
    pub changes: Vec<Change>,
}

/// Annotation attached to each statement of the patch-related code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Annotation {
    Added,
    Deleted,
    Context,
}

/// The compact code representation fed to the model: changed statements plus
/// the unchanged statements reachable from them via data/control dependencies,
/// in buggy-code order (Added statements sit at their anchors).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchRelatedCode {
    pub statements: Vec<(Annotation, String)>,
}

/// Where the patch applies: file path and the touched function names.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PatchScope {
    pub file_path: String,
    pub function_names: Vec<String>,
}

/// Assembled model input. Always contains the `<code>`, `<scope>` and
/// `<hist>` markers exactly once, in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSequence {
    pub tokens: Vec<String>,
}

/// Assembled model target: the tokenized description, optionally preceded by
/// a `<grp_K>` affiliation token in dual-objective mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSequence {
    pub group_token: Option<String>,
    pub description_tokens: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("description tokenizes to zero tokens")]
    EmptyDescription,
}

/// Characters split off as standalone tokens.
const PUNCT: &[char] = &[
    '.', ',', ':', ';', '(', ')', '[', ']', '{', '}', '<', '>', '=', '+', '-', '*', '/', '&', '|',
    '!', '"', '\'',
];

/// Splits text on whitespace, then splits the punctuation characters
/// `.,:;()[]{}<>=+-*/&|!"'` off as standalone tokens. Case-preserving;
/// identifiers with `_` stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut run = String::new();
        for ch in word.chars() {
            if PUNCT.contains(&ch) {
                if !run.is_empty() {
                    out.push(std::mem::take(&mut run));
                }
                out.push(ch.to_string());
            } else {
                run.push(ch);
            }
        }
        if !run.is_empty() {
            out.push(run);
        }
    }
    out
}

/// Assembles the source sequence
/// `<code> annotated-code <scope> path + functions <hist> h_1 <sep> h_2 ...`.
///
/// Marker tokens are inserted atomically; only payload text goes through
/// [`tokenize`], so a literal `<code>` inside a statement cannot collide
/// with the segment markers.
pub fn build_source_sequence(
    related: &PatchRelatedCode,
    scope: &PatchScope,
    history: &[String],
) -> SourceSequence {
    let mut tokens = Vec::new();
    tokens.push(CODE_MARKER.to_string());
    for (ann, text) in &related.statements {
        let marker = match ann {
            Annotation::Added => ADD_MARKER,
            Annotation::Deleted => DEL_MARKER,
            Annotation::Context => CTX_MARKER,
        };
        tokens.push(marker.to_string());
        tokens.extend(tokenize(text));
    }
    tokens.push(SCOPE_MARKER.to_string());
    tokens.extend(tokenize(&scope.file_path));
    for name in &scope.function_names {
        tokens.extend(tokenize(name));
    }
    tokens.push(HIST_MARKER.to_string());
    for (i, h) in history.iter().enumerate() {
        if i > 0 {
            tokens.push(SEP_MARKER.to_string());
        }
        tokens.extend(tokenize(h));
    }
    SourceSequence { tokens }
}

/// Builds the target sequence for a description, prepending the group token
/// when a cluster id is given (dual-objective mode).
pub fn build_target_sequence(
    description: &str,
    group: Option<usize>,
) -> Result<TargetSequence, BuildError> {
    let description_tokens = tokenize(description);
    if description_tokens.is_empty() {
        return Err(BuildError::EmptyDescription);
    }
    Ok(TargetSequence {
        group_token: group.map(group_token),
        description_tokens,
    })
}
