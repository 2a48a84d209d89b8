//! Note tokenization and vocabularies.
//!
//! Notes are minimally processed: lowercase, split on whitespace, and every
//! punctuation character becomes its own token. The vocabulary keeps tokens
//! whose training-split frequency reaches `min_count` (default 5); all other
//! tokens map to a single out-of-vocabulary id. Bigram vocabularies are fit
//! the same way over adjacent token pairs within a note.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const DEFAULT_MIN_COUNT: usize = 5;

/// Reserved id for out-of-vocabulary tokens.
pub const OOV_ID: usize = 0;
pub const OOV_TOKEN: &str = "<unk>";

/// Lowercase, split on whitespace, split punctuation into separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for piece in text.split_whitespace() {
        let mut word = String::new();
        for ch in piece.chars() {
            if ch.is_alphanumeric() {
                word.extend(ch.to_lowercase());
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(ch.to_string());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: HashMap<String, usize>,
    pub min_count: usize,
}

impl Vocabulary {
    /// Fit from tokenized notes. Tokens below `min_count` map to OOV.
    pub fn fit<'a>(notes: impl IntoIterator<Item = &'a [String]>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for note in notes {
            for token in note {
                *counts.entry(token.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<&str> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count)
            .map(|(&t, _)| t)
            .collect();
        kept.sort_unstable();
        let mut id_to_token = Vec::with_capacity(kept.len() + 1);
        id_to_token.push(OOV_TOKEN.to_string());
        id_to_token.extend(kept.iter().map(|t| t.to_string()));
        let mut v = Self {
            id_to_token,
            token_to_id: HashMap::new(),
            min_count,
        };
        v.rebuild_index();
        v
    }

    /// Rebuild the token index (needed after deserialization).
    pub fn rebuild_index(&mut self) {
        self.token_to_id = self
            .id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BigramVocabulary {
    id_to_pair: Vec<(String, String)>,
    #[serde(skip)]
    pair_to_id: HashMap<(String, String), usize>,
    pub min_count: usize,
}

impl BigramVocabulary {
    pub fn fit<'a>(notes: impl IntoIterator<Item = &'a [String]>, min_count: usize) -> Self {
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for note in notes {
            for pair in note.windows(2) {
                *counts
                    .entry((pair[0].as_str(), pair[1].as_str()))
                    .or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, &str)> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count)
            .map(|(&p, _)| p)
            .collect();
        kept.sort_unstable();
        let id_to_pair = kept
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let mut v = Self {
            id_to_pair,
            pair_to_id: HashMap::new(),
            min_count,
        };
        v.rebuild_index();
        v
    }

    pub fn rebuild_index(&mut self) {
        self.pair_to_id = self
            .id_to_pair
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.id_to_pair.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_pair.is_empty()
    }

    /// In-vocabulary bigram ids for adjacent pairs; unseen pairs are
    /// dropped rather than mapped to OOV.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .windows(2)
            .filter_map(|p| {
                self.pair_to_id
                    .get(&(p[0].clone(), p[1].clone()))
                    .copied()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_and_splits_punctuation() {
        let toks = tokenize("Discharge Diagnoses: CHF, stable.");
        assert_eq!(
            toks,
            vec!["discharge", "diagnoses", ":", "chf", ",", "stable", "."]
        );
    }

    #[test]
    fn numbers_stay_whole() {
        assert_eq!(tokenize("bp 120/80"), vec!["bp", "120", "/", "80"]);
    }

    #[test]
    fn vocabulary_min_count_and_oov() {
        let notes: Vec<Vec<String>> = vec![
            tokenize("alpha alpha beta"),
            tokenize("alpha beta gamma"),
        ];
        let refs: Vec<&[String]> = notes.iter().map(|n| n.as_slice()).collect();
        let v = Vocabulary::fit(refs.iter().copied(), 2);
        assert_eq!(v.id("gamma"), OOV_ID);
        assert_ne!(v.id("alpha"), OOV_ID);
        assert_ne!(v.id("beta"), OOV_ID);
        assert_eq!(v.token(v.id("alpha")), "alpha");
    }

    #[test]
    fn bigrams_drop_unseen_pairs() {
        let notes: Vec<Vec<String>> = vec![tokenize("a b a b"), tokenize("a b c")];
        let refs: Vec<&[String]> = notes.iter().map(|n| n.as_slice()).collect();
        let bv = BigramVocabulary::fit(refs.iter().copied(), 2);
        // "a b" occurs 3 times; "b a" and "b c" once each.
        assert_eq!(bv.len(), 1);
        let enc = bv.encode(&tokenize("a b c a b"));
        assert_eq!(enc.len(), 2);
    }
}
