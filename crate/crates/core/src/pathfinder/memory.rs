//! Memory stream with recency/importance/relevance retrieval and reflection.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::clock::TimestampMs;
use crate::text::{jaccard, token_set};

pub const DEFAULT_REFLECTION_THRESHOLD: u32 = 150;
const MS_PER_HOUR: f64 = 3_600_000.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MemoryError {
    #[error("importance {0} is outside 1..=10")]
    ImportanceOutOfRange(i64),
    #[error("invalid retrieval weights: {0}")]
    InvalidWeights(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryRecord {
    /// Insertion sequence number within the stream.
    pub id: u64,
    pub text: String,
    pub created_at: TimestampMs,
    pub last_access: TimestampMs,
    pub importance: u8,
    pub tokens: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalWeights {
    pub recency: f64,
    pub importance: f64,
    pub relevance: f64,
    /// Recency multiplier per hour since last access.
    pub decay_per_hour: f64,
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        Self { recency: 1.0, importance: 1.0, relevance: 1.0, decay_per_hour: 0.995 }
    }
}

impl RetrievalWeights {
    pub fn only(recency: f64, importance: f64, relevance: f64) -> Self {
        Self { recency, importance, relevance, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        let w = [self.recency, self.importance, self.relevance];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(MemoryError::InvalidWeights("weights must be finite and non-negative"));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(MemoryError::InvalidWeights("weights must not all be zero"));
        }
        if !(self.decay_per_hour > 0.0 && self.decay_per_hour < 1.0) {
            return Err(MemoryError::InvalidWeights("decay must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Normalized weighted sum of the three retrieval signals.
pub fn retrieval_score(r: &MemoryRecord, query: &BTreeSet<String>, w: &RetrievalWeights, now: TimestampMs) -> f64 {
    let hours = now.saturating_sub(r.last_access) as f64 / MS_PER_HOUR;
    let recency = w.decay_per_hour.powf(hours);
    let importance = r.importance as f64 / 10.0;
    let relevance = jaccard(query, &r.tokens);
    (w.recency * recency + w.importance * importance + w.relevance * relevance)
        / (w.recency + w.importance + w.relevance)
}

/// Turns the memories chosen for a reflection into its text.
pub trait Synthesizer {
    fn synthesize(&self, sources: &[MemoryRecord]) -> String;
}

/// `"reflection: " + texts joined by "; "`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConcatSynthesizer;

impl Synthesizer for ConcatSynthesizer {
    fn synthesize(&self, sources: &[MemoryRecord]) -> String {
        let texts: Vec<&str> = sources.iter().map(|r| r.text.as_str()).collect();
        format!("reflection: {}", texts.join("; "))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryStream {
    records: Vec<MemoryRecord>,
    next_id: u64,
    /// Sum of importance added since the last reflection.
    pending_importance: u32,
    /// Records with `id >= reflection_mark` arrived after the last reflection.
    reflection_mark: u64,
}

impl MemoryStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Append a memory, keeping the stream ordered by `created_at` with
    /// insertion order among equal timestamps.
    pub fn add(&mut self, text: &str, importance: i64, now: TimestampMs) -> Result<MemoryRecord, MemoryError> {
        if !(1..=10).contains(&importance) {
            return Err(MemoryError::ImportanceOutOfRange(importance));
        }
        let r = self.push(text.to_string(), importance as u8, now);
        self.pending_importance += importance as u32;
        Ok(r)
    }

    fn push(&mut self, text: String, importance: u8, now: TimestampMs) -> MemoryRecord {
        let r = MemoryRecord {
            id: self.next_id,
            tokens: token_set(&text),
            text,
            created_at: now,
            last_access: now,
            importance,
        };
        self.next_id += 1;
        let at = self.records.partition_point(|x| x.created_at <= now);
        self.records.insert(at, r.clone());
        r
    }

    /// Top `k` memories for `query`. Ties go to the more recently created
    /// record. Returned records have their access time moved to `now`; the
    /// scores are computed before that update.
    pub fn retrieve(
        &mut self,
        query: &str,
        k: usize,
        w: &RetrievalWeights,
        now: TimestampMs,
    ) -> Result<Vec<MemoryRecord>, MemoryError> {
        w.validate()?;
        let q = token_set(query);
        let mut scored: Vec<(f64, usize)> =
            self.records.iter().enumerate().map(|(i, r)| (retrieval_score(r, &q, w, now), i)).collect();
        scored.sort_by(|a, b| {
            let (ra, rb) = (&self.records[a.1], &self.records[b.1]);
            b.0.total_cmp(&a.0).then(rb.created_at.cmp(&ra.created_at)).then(rb.id.cmp(&ra.id))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(_, i)| {
                let r = &mut self.records[i];
                r.last_access = r.last_access.max(now);
                r.clone()
            })
            .collect())
    }

    /// Once enough importance has accumulated since the last reflection,
    /// summarize the three memories most related to recent events into a new
    /// memory as important as the most important of them.
    pub fn reflect(
        &mut self,
        threshold: u32,
        now: TimestampMs,
        synth: &dyn Synthesizer,
    ) -> Option<MemoryRecord> {
        if self.records.is_empty() || self.pending_importance < threshold {
            return None;
        }
        let mut recent: Vec<&MemoryRecord> = self.records.iter().filter(|r| r.id >= self.reflection_mark).collect();
        recent.sort_by_key(|r| r.id);
        let query = recent.iter().map(|r| r.text.as_str()).collect::<Vec<_>>().join(" ");
        let top = self.retrieve(&query, 3, &RetrievalWeights::default(), now).expect("default weights are valid");
        let importance = top.iter().map(|r| r.importance).max()?;
        let text = synth.synthesize(&top);
        let r = self.push(text, importance, now);
        self.pending_importance = 0;
        self.reflection_mark = self.next_id;
        Some(r)
    }
}
