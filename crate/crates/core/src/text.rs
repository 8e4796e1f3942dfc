//! Tokenization, set similarity and a small inverted index shared by model
//! search, the output cache and the memory stream.

use std::collections::{BTreeMap, BTreeSet};

/// Lowercase tokens split on every non-alphanumeric character.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokens(text).collect()
}

/// |a ∩ b| / |a ∪ b|. Two empty sets are identical, so they score 1.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let (inter, union) = jaccard_counts(a, b);
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection and union sizes, for callers that need exact comparisons.
pub fn jaccard_counts(a: &BTreeSet<String>, b: &BTreeSet<String>) -> (usize, usize) {
    let inter = a.intersection(b).count();
    (inter, a.len() + b.len() - inter)
}

/// Token → set of document keys.
#[derive(Debug, Clone)]
pub struct InvertedIndex<K: Ord + Clone> {
    postings: BTreeMap<String, BTreeSet<K>>,
}

impl<K: Ord + Clone> Default for InvertedIndex<K> {
    fn default() -> Self {
        Self { postings: BTreeMap::new() }
    }
}

impl<K: Ord + Clone> InvertedIndex<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<'a>(&mut self, key: &K, toks: impl IntoIterator<Item = &'a String>) {
        for t in toks {
            self.postings.entry(t.clone()).or_default().insert(key.clone());
        }
    }

    /// Remove `key` from the postings of `toks`, dropping postings that empty out.
    pub fn remove<'a>(&mut self, key: &K, toks: impl IntoIterator<Item = &'a String>) {
        for t in toks {
            if let Some(set) = self.postings.get_mut(t) {
                set.remove(key);
                if set.is_empty() {
                    self.postings.remove(t);
                }
            }
        }
    }

    pub fn postings(&self, token: &str) -> Option<&BTreeSet<K>> {
        self.postings.get(token)
    }

    /// Number of distinct query tokens each matching key contains.
    pub fn overlap_counts<'a>(
        &self,
        query: impl IntoIterator<Item = &'a String>,
    ) -> BTreeMap<K, usize> {
        let mut counts = BTreeMap::new();
        for t in query {
            if let Some(keys) = self.postings.get(t) {
                for k in keys {
                    *counts.entry(k.clone()).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    /// Union of postings for any of `query`'s tokens.
    pub fn candidates<'a>(&self, query: impl IntoIterator<Item = &'a String>) -> BTreeSet<K> {
        self.overlap_counts(query).into_keys().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<K>)> {
        self.postings.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }
}
