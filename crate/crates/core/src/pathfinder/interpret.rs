//! Keyword-driven request interpreter.
//!
//! Each lexicon keyword found in the text becomes one subtask requiring the
//! keyword's tag. Matches separated by `then` or `;` run in sequence: every
//! subtask of the earlier group becomes a prerequisite of the later ones.
//! Matches with no connective between them are independent.

use std::collections::{BTreeMap, BTreeSet};

use crate::text::tokens;
use crate::workflow::{Subtask, TaskError, TaskSpec};

pub const DEFAULT_DIFFICULTY: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum InterpretError {
    #[error("no lexicon keyword matches the request")]
    UnrecognizedIntent,
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("lexicon line {line}: {reason}")]
    LexiconSyntax { line: usize, reason: String },
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// Keyword → capability tag. Keywords may span several words.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<Vec<String>, String>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, keyword: &str, tag: &str) -> &mut Self {
        let words: Vec<String> = tokens(keyword).collect();
        if !words.is_empty() {
            self.entries.insert(words, tag.to_string());
        }
        self
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut l = Self::new();
        for (k, t) in pairs {
            l.insert(k, t);
        }
        l
    }

    /// Parse `keyword = tag` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, InterpretError> {
        let mut l = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| InterpretError::LexiconSyntax { line: i + 1, reason: reason.into() };
            let (k, t) = line.split_once('=').ok_or_else(|| err("expected `keyword = tag`"))?;
            let (k, t) = (k.trim(), t.trim());
            if k.is_empty() || t.is_empty() {
                return Err(err("keyword and tag must be non-empty"));
            }
            if tokens(k).next().is_none() {
                return Err(err("keyword has no alphanumeric characters"));
            }
            l.insert(k, t);
        }
        Ok(l)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        self.entries.iter().map(|(k, t)| (k.join(" "), t.clone())).collect()
    }

    fn longest_match(&self, words: &[Word]) -> Option<(usize, &String)> {
        let mut best = None;
        for (kw, tag) in &self.entries {
            let fits = kw.len() <= words.len()
                && kw.iter().zip(words).all(|(k, w)| matches!(w, Word::Text(t) if t == k));
            if fits && best.is_none_or(|(n, _)| kw.len() > n) {
                best = Some((kw.len(), tag));
            }
        }
        best
    }
}

#[derive(Debug, PartialEq)]
enum Word {
    Text(String),
    Semicolon,
}

fn words(text: &str) -> Vec<Word> {
    let mut out = Vec::new();
    for (i, part) in text.split(';').enumerate() {
        if i > 0 {
            out.push(Word::Semicolon);
        }
        out.extend(tokens(part).map(Word::Text));
    }
    out
}

pub fn interpret_request(text: &str, lexicon: &Lexicon) -> Result<TaskSpec, InterpretError> {
    if lexicon.is_empty() {
        return Err(InterpretError::EmptyLexicon);
    }
    let ws = words(text);
    let mut subtasks = BTreeMap::new();
    let mut deps = BTreeSet::new();
    let mut previous: Vec<String> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut connective = false;
    let mut i = 0;
    while i < ws.len() {
        if let Some((len, tag)) = lexicon.longest_match(&ws[i..]) {
            if connective {
                previous = std::mem::take(&mut current);
                connective = false;
            }
            let id = format!("s{}", subtasks.len() + 1);
            for p in &previous {
                deps.insert((p.clone(), id.clone()));
            }
            subtasks.insert(id.clone(), Subtask::new(&[tag], DEFAULT_DIFFICULTY));
            current.push(id);
            i += len;
            continue;
        }
        if !current.is_empty() && is_connective(&ws[i]) {
            connective = true;
        }
        i += 1;
    }
    if subtasks.is_empty() {
        return Err(InterpretError::UnrecognizedIntent);
    }
    Ok(TaskSpec::new(subtasks, deps, None, None)?)
}

fn is_connective(w: &Word) -> bool {
    match w {
        Word::Semicolon => true,
        Word::Text(t) => t == "then",
    }
}
