//! Contextual information extraction: patch-related code via an approximate
//! statement-level dependency analysis, patch scope, and historical
//! descriptions.
//!
//! The dependency analyzer is a deterministic intra-procedural approximation
//! for C-like statement syntax: data edges come from reaching definitions
//! over the linear statement order, control edges from brace-delimited body
//! membership. An externally computed edge list can be substituted through
//! [`DependencyGraph`] directly (the CLI accepts a sidecar file).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{tokenize, Annotation, Change, ChangeOp, Patch, PatchRelatedCode, PatchScope};

/// Dependency edge label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Data,
    Control,
}

/// Statement-level dependency graph for one patch.
///
/// Nodes `0..buggy_count` are the buggy-code statements; nodes
/// `buggy_count..node_count` are synthetic nodes for the Added statements,
/// in change-list order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    pub buggy_count: usize,
    pub node_count: usize,
    pub edges: Vec<(usize, usize, EdgeKind)>,
}

impl DependencyGraph {
    /// Undirected adjacency lists (Definition-2 relatedness is symmetric).
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v, _) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }
}

/// One statement in display order: the buggy statements with Added
/// statements interleaved at their anchors.
#[derive(Debug, Clone)]
pub struct OrderedStatement {
    pub node: usize,
    pub text: String,
    pub annotation: Annotation,
}

/// Interleaves buggy statements and Added statements. An Added change with
/// anchor line `L` is placed immediately before buggy line `L`; anchors past
/// the end append; several Added at one anchor keep change-list order.
pub fn statement_order(buggy_code: &[String], changes: &[Change]) -> Vec<OrderedStatement> {
    let n = buggy_code.len();
    let deleted_lines: BTreeSet<usize> = changes
        .iter()
        .filter(|c| c.op == ChangeOp::Deleted)
        .map(|c| c.line)
        .collect();
    let mut added_at: BTreeMap<usize, Vec<(usize, &str)>> = BTreeMap::new();
    let mut added_idx = 0usize;
    for c in changes {
        if c.op == ChangeOp::Added {
            let anchor = c.line.min(n + 1);
            added_at.entry(anchor).or_default().push((added_idx, &c.statement));
            added_idx += 1;
        }
    }
    let mut out = Vec::with_capacity(n + added_idx);
    for line in 1..=n + 1 {
        if let Some(adds) = added_at.get(&line) {
            for &(j, text) in adds {
                out.push(OrderedStatement {
                    node: n + j,
                    text: text.to_string(),
                    annotation: Annotation::Added,
                });
            }
        }
        if line <= n {
            out.push(OrderedStatement {
                node: line - 1,
                text: buggy_code[line - 1].clone(),
                annotation: if deleted_lines.contains(&line) {
                    Annotation::Deleted
                } else {
                    Annotation::Context
                },
            });
        }
    }
    out
}

const TYPE_KEYWORDS: &[&str] = &[
    "int", "char", "long", "short", "unsigned", "signed", "void", "float", "double", "struct",
    "union", "enum", "const", "static", "size_t", "bool", "auto", "register", "volatile",
];

const KEYWORDS: &[&str] = &[
    "if", "else", "for", "while", "switch", "do", "return", "break", "continue", "case",
    "default", "goto", "sizeof", "NULL", "true", "false",
];

const CONTROL_KEYWORDS: &[&str] = &["if", "for", "while", "switch", "else"];

fn is_identifier(tok: &str) -> bool {
    let mut chars = tok.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&tok)
        && !TYPE_KEYWORDS.contains(&tok)
}

#[derive(Debug, Default)]
struct StmtInfo {
    def: Option<String>,
    uses: BTreeSet<String>,
    is_header: bool,
}

/// Best-effort defs/uses extraction for one C-like statement. Statements the
/// heuristic cannot read yield no defs/uses and so stay isolated.
fn analyze_statement(text: &str) -> StmtInfo {
    let tokens = tokenize(text);
    let first_word = tokens.iter().find(|t| *t != "{" && *t != "}");
    let is_header = matches!(first_word, Some(w) if CONTROL_KEYWORDS.contains(&w.as_str()));

    // Locate a top-level assignment `=` (not ==, <=, >=, !=, and not the
    // second char of a compound operator like +=).
    let mut assign: Option<(usize, bool)> = None; // (index, compound)
    for (i, t) in tokens.iter().enumerate() {
        if t != "=" {
            continue;
        }
        let next_eq = tokens.get(i + 1).map(|n| n == "=").unwrap_or(false);
        let prev = if i > 0 { tokens[i - 1].as_str() } else { "" };
        if next_eq || matches!(prev, "=" | "!" | "<" | ">") {
            continue;
        }
        let compound = matches!(prev, "+" | "-" | "*" | "/" | "&" | "|" | "%" | "^");
        assign = Some((i, compound));
        break;
    }

    let mut info = StmtInfo {
        is_header,
        ..StmtInfo::default()
    };
    // Nearest identifier strictly before `pos`. Identifiers further left are
    // type names, not data.
    let ident_before = |pos: usize| -> Option<usize> {
        (0..pos).rev().find(|&i| is_identifier(&tokens[i]))
    };
    match assign {
        Some((eq, compound)) => {
            let lhs_end = if compound { eq - 1 } else { eq };
            // `a[i] = ...` defines a; `TypeName **var = ...` defines var.
            let anchor = tokens[..lhs_end]
                .iter()
                .position(|t| t == "[")
                .unwrap_or(lhs_end);
            let def_idx = ident_before(anchor);
            info.def = def_idx.map(|i| tokens[i].clone());
            for (i, t) in tokens[..lhs_end].iter().enumerate() {
                if Some(i) != def_idx && def_idx.map(|d| i > d).unwrap_or(false) && is_identifier(t)
                {
                    info.uses.insert(t.clone());
                }
            }
            for t in &tokens[eq + 1..] {
                if is_identifier(t) {
                    info.uses.insert(t.clone());
                }
            }
            if compound {
                if let Some(d) = &info.def {
                    info.uses.insert(d.clone());
                }
            }
        }
        None => {
            let is_decl = !is_header
                && tokens
                    .first()
                    .map(|t| TYPE_KEYWORDS.contains(&t.as_str()))
                    .unwrap_or(false);
            if is_decl {
                let anchor = tokens
                    .iter()
                    .position(|t| t == "(" || t == "[" || t == ";")
                    .unwrap_or(tokens.len());
                let def_idx = ident_before(anchor);
                info.def = def_idx.map(|i| tokens[i].clone());
                for (i, t) in tokens.iter().enumerate() {
                    if i > anchor && is_identifier(t) {
                        info.uses.insert(t.clone());
                    }
                }
            } else {
                for t in &tokens {
                    if is_identifier(t) {
                        info.uses.insert(t.clone());
                    }
                }
            }
        }
    }
    info
}

fn leading_closes(text: &str) -> usize {
    text.chars()
        .take_while(|c| *c == '}' || c.is_whitespace())
        .filter(|c| *c == '}')
        .count()
}

/// Builds the statement-level dependency graph for a patch's code.
///
/// Data edge `u -> v`: a variable defined in `u` is used in `v` with no
/// intervening redefinition (reaching definitions over the interleaved
/// statement order). Control edge `h -> v`: `h` is a control header and `v`
/// lies inside its brace-delimited body (or is the single next statement for
/// brace-less headers). Added statements participate at their anchors.
pub fn build_dependency_graph(buggy_code: &[String], changes: &[Change]) -> DependencyGraph {
    let order = statement_order(buggy_code, changes);
    let n_added = changes.iter().filter(|c| c.op == ChangeOp::Added).count();
    let node_count = buggy_code.len() + n_added;
    let mut edges: BTreeSet<(usize, usize, EdgeKind)> = BTreeSet::new();

    // Reaching definitions for data edges.
    let mut last_def: BTreeMap<String, usize> = BTreeMap::new();
    let infos: Vec<StmtInfo> = order.iter().map(|s| analyze_statement(&s.text)).collect();
    for (stmt, info) in order.iter().zip(&infos) {
        for used in &info.uses {
            if let Some(&d) = last_def.get(used) {
                if d != stmt.node {
                    edges.insert((d, stmt.node, EdgeKind::Data));
                }
            }
        }
        if let Some(def) = &info.def {
            last_def.insert(def.clone(), stmt.node);
        }
    }

    // Control-body membership.
    struct OpenHeader {
        node: usize,
        body_depth: usize,
    }
    let mut depth = 0usize;
    let mut open: Vec<OpenHeader> = Vec::new();
    let mut pending_single: Vec<usize> = Vec::new();
    for (stmt, info) in order.iter().zip(&infos) {
        let lead = leading_closes(&stmt.text);
        let item_depth = depth.saturating_sub(lead);
        while open.last().map(|h| h.body_depth > item_depth).unwrap_or(false) {
            open.pop();
        }
        for h in &open {
            if h.node != stmt.node {
                edges.insert((h.node, stmt.node, EdgeKind::Control));
            }
        }
        for h in pending_single.drain(..) {
            if h != stmt.node {
                edges.insert((h, stmt.node, EdgeKind::Control));
            }
        }
        let opens = stmt.text.chars().filter(|c| *c == '{').count();
        let closes = stmt.text.chars().filter(|c| *c == '}').count();
        let after = (item_depth + opens).saturating_sub(closes - lead);
        if info.is_header {
            if after > item_depth {
                open.push(OpenHeader {
                    node: stmt.node,
                    body_depth: item_depth + 1,
                });
            } else if opens == 0 {
                pending_single.push(stmt.node);
            }
        } else if opens > closes && !pending_single.is_empty() {
            // A bare `{` line opening the body of a brace-less header.
            let body_depth = item_depth + 1;
            for h in pending_single.drain(..) {
                open.push(OpenHeader { node: h, body_depth });
            }
        }
        depth = after;
    }

    DependencyGraph {
        buggy_count: buggy_code.len(),
        node_count,
        edges: edges.into_iter().collect(),
    }
}

fn changed_nodes(patch: &Patch, graph: &DependencyGraph) -> BTreeSet<usize> {
    let mut set = BTreeSet::new();
    let mut added_idx = 0usize;
    for c in &patch.changes {
        match c.op {
            ChangeOp::Deleted => {
                set.insert(c.line - 1);
            }
            ChangeOp::Added => {
                set.insert(graph.buggy_count + added_idx);
                added_idx += 1;
            }
        }
    }
    set
}

/// BFS distance from the changed-statement set over undirected edges.
fn distances_from_changed(patch: &Patch, graph: &DependencyGraph) -> Vec<Option<usize>> {
    let adj = graph.adjacency();
    let mut dist = vec![None; graph.node_count];
    let mut queue = VecDeque::new();
    for &c in &changed_nodes(patch, graph) {
        dist[c] = Some(0);
        queue.push_back(c);
    }
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// The full (uncapped) set of related statement nodes: changed statements
/// plus every statement transitively connected to one of them.
pub fn related_statement_nodes(patch: &Patch, graph: &DependencyGraph) -> BTreeSet<usize> {
    distances_from_changed(patch, graph)
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|_| i))
        .collect()
}

/// Extracts the patch-related code: the dependency closure of the changed
/// statements, emitted in original statement order. When the closure exceeds
/// `max_statements`, changed statements are always kept and context
/// statements are kept by increasing graph distance from the nearest changed
/// statement, ties by original order.
pub fn extract_patch_related_code(
    patch: &Patch,
    graph: &DependencyGraph,
    max_statements: usize,
) -> PatchRelatedCode {
    let order = statement_order(&patch.buggy_code, &patch.changes);
    let dist = distances_from_changed(patch, graph);
    let changed = changed_nodes(patch, graph);

    let mut selected: BTreeSet<usize> = changed.clone();
    let mut context: Vec<(usize, usize, usize)> = Vec::new(); // (dist, display pos, node)
    for (pos, stmt) in order.iter().enumerate() {
        if changed.contains(&stmt.node) {
            continue;
        }
        if let Some(d) = dist[stmt.node] {
            context.push((d, pos, stmt.node));
        }
    }
    context.sort();
    for &(_, _, node) in &context {
        if selected.len() >= max_statements {
            break;
        }
        selected.insert(node);
    }

    let statements = order
        .into_iter()
        .filter(|s| selected.contains(&s.node))
        .map(|s| (s.annotation, s.text))
        .collect();
    PatchRelatedCode { statements }
}

fn function_def_name(text: &str, item_depth: usize) -> Option<String> {
    if item_depth != 0 {
        return None;
    }
    let tokens = tokenize(text);
    let open = tokens.iter().position(|t| t == "(")?;
    if open == 0 {
        return None;
    }
    let name = &tokens[open - 1];
    if !is_identifier(name) {
        return None;
    }
    let close = tokens.iter().rposition(|t| t == ")")?;
    let brace = tokens.iter().position(|t| t == "{")?;
    if close < open || brace < close {
        return None;
    }
    if let Some(first) = tokens.first() {
        if CONTROL_KEYWORDS.contains(&first.as_str()) || first == "return" {
            return None;
        }
    }
    Some(name.clone())
}

/// Extracts the patch scope. An explicit `function_name` on the record wins;
/// otherwise each changed statement is resolved to the nearest preceding
/// function-definition statement (identifier, parens, `{`) at brace depth 0.
pub fn extract_scope(patch: &Patch) -> PatchScope {
    if let Some(name) = &patch.function_name {
        return PatchScope {
            file_path: patch.file_path.clone(),
            function_names: vec![name.clone()],
        };
    }
    let order = statement_order(&patch.buggy_code, &patch.changes);
    // Precompute each statement's depth and definition-name candidate.
    let mut depth = 0usize;
    let mut defs: Vec<Option<String>> = Vec::with_capacity(order.len());
    let mut changed_pos: Vec<usize> = Vec::new();
    let changed = {
        let mut set = BTreeSet::new();
        let n = patch.buggy_code.len();
        let mut added_idx = 0;
        for c in &patch.changes {
            match c.op {
                ChangeOp::Deleted => {
                    set.insert(c.line - 1);
                }
                ChangeOp::Added => {
                    set.insert(n + added_idx);
                    added_idx += 1;
                }
            }
        }
        set
    };
    for (pos, stmt) in order.iter().enumerate() {
        let lead = leading_closes(&stmt.text);
        let item_depth = depth.saturating_sub(lead);
        defs.push(function_def_name(&stmt.text, item_depth));
        if changed.contains(&stmt.node) {
            changed_pos.push(pos);
        }
        let opens = stmt.text.chars().filter(|c| *c == '{').count();
        let closes = stmt.text.chars().filter(|c| *c == '}').count();
        depth = (item_depth + opens).saturating_sub(closes - lead);
    }
    let mut names: Vec<String> = Vec::new();
    for pos in changed_pos {
        let found = (0..=pos).rev().find_map(|i| defs[i].clone());
        if let Some(name) = found {
            if !names.contains(&name) {
                names.push(name);
            }
        }
    }
    PatchScope {
        file_path: patch.file_path.clone(),
        function_names: names,
    }
}

/// Time-ordered descriptions per (project, author), for historical-context
/// lookup.
#[derive(Debug, Clone, Default)]
pub struct HistoryIndex {
    map: BTreeMap<(String, String), Vec<(i64, String)>>,
}

impl HistoryIndex {
    /// Builds an index over the given patches. Callers choose the population:
    /// for train-split lookups index the train split only; for test-split
    /// lookups index train plus test (the time filter keeps lookups causal).
    pub fn build<'a>(patches: impl IntoIterator<Item = &'a Patch>) -> Self {
        let mut map: BTreeMap<(String, String), Vec<(i64, String)>> = BTreeMap::new();
        for p in patches {
            map.entry((p.project.clone(), p.author.clone()))
                .or_default()
                .push((p.time, p.description.clone()));
        }
        for list in map.values_mut() {
            list.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        }
        Self { map }
    }

    /// Descriptions by the same author in the same project strictly before
    /// the patch's time, most recent first, truncated to `max_items`.
    pub fn lookup(&self, patch: &Patch, max_items: usize) -> Vec<String> {
        let key = (patch.project.clone(), patch.author.clone());
        let Some(list) = self.map.get(&key) else {
            return Vec::new();
        };
        list.iter()
            .filter(|(t, _)| *t < patch.time)
            .rev()
            .take(max_items)
            .map(|(_, d)| d.clone())
            .collect()
    }
}
