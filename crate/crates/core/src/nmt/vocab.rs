//! Token vocabulary with fixed reserved indices, the marker tokens, and a
//! contiguous block of group-affiliation tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{
    group_token, ADD_MARKER, CODE_MARKER, CTX_MARKER, DEL_MARKER, HIST_MARKER, SCOPE_MARKER,
    SEP_MARKER,
};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: &[&str] = &["<pad>", "<bos>", "<eos>", "<unk>"];
const MARKERS: &[&str] = &[
    CODE_MARKER,
    SCOPE_MARKER,
    HIST_MARKER,
    SEP_MARKER,
    ADD_MARKER,
    DEL_MARKER,
    CTX_MARKER,
];

/// Bijective token/index mapping. Layout: 4 reserved tokens, 7 markers, the
/// `<grp_*>` block, then corpus tokens in lexicographic order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    group_count: usize,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from token sequences, keeping corpus tokens whose
    /// frequency is at least `min_freq`. `group_count` group tokens are always
    /// present.
    pub fn build<'a, I>(sequences: I, group_count: usize, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for seq in sequences {
            for tok in seq {
                *freq.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(MARKERS.iter().map(|s| s.to_string()));
        for k in 0..group_count {
            tokens.push(group_token(k));
        }
        let fixed: BTreeMap<&str, ()> = tokens.iter().map(|t| (t.as_str(), ())).collect();
        let corpus_tokens: Vec<String> = freq
            .iter()
            .filter(|(t, &n)| n >= min_freq && !fixed.contains_key(*t))
            .map(|(t, _)| t.to_string())
            .collect();
        drop(fixed);
        tokens.extend(corpus_tokens);
        Self::from_tokens(tokens, group_count)
    }

    pub fn from_tokens(tokens: Vec<String>, group_count: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            group_count,
            index,
        }
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// First index of the `<grp_*>` block.
    pub fn group_start(&self) -> usize {
        RESERVED.len() + MARKERS.len()
    }

    pub fn group_token_id(&self, group: usize) -> usize {
        debug_assert!(group < self.group_count);
        self.group_start() + group
    }

    /// Maps a token id inside the group block back to its group index.
    pub fn group_of_id(&self, id: usize) -> Option<usize> {
        let start = self.group_start();
        (start..start + self.group_count).contains(&id).then(|| id - start)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_layout_is_fixed() {
        let v = Vocabulary::build(std::iter::empty(), 3, 2);
        assert_eq!(v.token(PAD), "<pad>");
        assert_eq!(v.token(BOS), "<bos>");
        assert_eq!(v.token(EOS), "<eos>");
        assert_eq!(v.token(UNK), "<unk>");
        assert_eq!(v.token(4), "<code>");
        assert_eq!(v.group_start(), 11);
        assert_eq!(v.token(v.group_token_id(2)), "<grp_2>");
        assert_eq!(v.group_of_id(11), Some(0));
        assert_eq!(v.group_of_id(14), None);
    }

    #[test]
    fn min_freq_cutoff_and_unk() {
        let a: Vec<String> = ["fix", "leak", "fix"].iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = ["rare"].iter().map(|s| s.to_string()).collect();
        let v = Vocabulary::build([a.as_slice(), b.as_slice()], 0, 2);
        assert_ne!(v.id("fix"), UNK);
        assert_eq!(v.id("rare"), UNK);
        assert_eq!(v.id("leak"), UNK);
    }

    #[test]
    fn bijection_over_domain() {
        let a: Vec<String> = ["x", "y"].iter().map(|s| s.to_string()).collect();
        let v = Vocabulary::build([a.as_slice(), a.as_slice()], 2, 1);
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id)), id);
        }
    }
}
