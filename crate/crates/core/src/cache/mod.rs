//! Output cache keyed by canonical request digest, with LRU eviction,
//! lazy TTL expiry and an inverted index over prompt tokens.
//!
//! Only exact-key hits are served. [`OutputCache::similar`] lists entries whose
//! prompts resemble the query; those are suggestions, never substitutes.

mod request;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use base64::Engine as _;
use serde::{Deserialize, Serialize};

pub use request::{normalize_request, CanonicalRequest, ParamValue, RawRequest};

use crate::canonical::to_canonical_string;
use crate::clock::TimestampMs;
use crate::digest::Digest;
use crate::text::{jaccard, InvertedIndex};

pub const DEFAULT_MAX_ENTRY_BYTES: usize = 1024 * 1024;

/// Cadence at which the gateway calls [`OutputCache::sweep`].
pub const SWEEP_INTERVAL_MS: u64 = 60_000;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("request is missing field {0}")]
    MissingField(&'static str),
    #[error("parameter {0:?} must be a scalar")]
    InvalidParam(String),
    #[error("output of {size} bytes exceeds the per-entry cap of {cap}")]
    OutputTooLarge { size: usize, cap: usize },
    #[error("ttl_ms must be positive")]
    InvalidTtl,
    #[error("cache capacity must be at least one entry")]
    ZeroCapacity,
    #[error("warm-up line {line}: {reason}")]
    Warmup { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheConfig {
    pub capacity: usize,
    pub max_entry_bytes: usize,
}

impl CacheConfig {
    pub fn with_capacity(capacity: usize) -> Self {
        Self { capacity, max_entry_bytes: DEFAULT_MAX_ENTRY_BYTES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheEntry {
    pub key: Digest,
    pub request: CanonicalRequest,
    #[serde(with = "crate::canonical::base64_bytes")]
    pub output: Vec<u8>,
    pub created_at: TimestampMs,
    pub last_access: TimestampMs,
    pub access_count: u64,
    pub ttl_ms: Option<u64>,
}

impl CacheEntry {
    pub fn is_expired(&self, now: TimestampMs) -> bool {
        self.ttl_ms.is_some_and(|ttl| self.created_at.saturating_add(ttl) < now)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub expirations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inserted {
    pub key: Digest,
    /// The least-recently-used entry removed to make room, if any.
    pub evicted: Option<Digest>,
}

struct Slot {
    entry: CacheEntry,
    tokens: BTreeSet<String>,
    /// Position in the recency order; larger is more recent.
    stamp: u64,
}

pub struct OutputCache {
    config: CacheConfig,
    slots: HashMap<Digest, Slot>,
    recency: BTreeMap<u64, Digest>,
    next_stamp: u64,
    index: InvertedIndex<Digest>,
    stats: CacheStats,
}

impl OutputCache {
    pub fn new(config: CacheConfig) -> Result<Self, CacheError> {
        if config.capacity == 0 {
            return Err(CacheError::ZeroCapacity);
        }
        Ok(Self {
            config,
            slots: HashMap::new(),
            recency: BTreeMap::new(),
            next_stamp: 0,
            index: InvertedIndex::new(),
            stats: CacheStats::default(),
        })
    }

    pub fn config(&self) -> CacheConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    fn touch(&mut self, key: &Digest) {
        let stamp = self.next_stamp;
        self.next_stamp += 1;
        let slot = self.slots.get_mut(key).expect("touch of resident key");
        self.recency.remove(&slot.stamp);
        slot.stamp = stamp;
        self.recency.insert(stamp, *key);
    }

    fn remove(&mut self, key: &Digest) -> Option<CacheEntry> {
        let slot = self.slots.remove(key)?;
        self.recency.remove(&slot.stamp);
        self.index.remove(key, &slot.tokens);
        Some(slot.entry)
    }

    pub fn put(
        &mut self,
        req: &CanonicalRequest,
        output: Vec<u8>,
        ttl_ms: Option<u64>,
        now: TimestampMs,
    ) -> Result<Inserted, CacheError> {
        if output.len() > self.config.max_entry_bytes {
            return Err(CacheError::OutputTooLarge { size: output.len(), cap: self.config.max_entry_bytes });
        }
        if ttl_ms == Some(0) {
            return Err(CacheError::InvalidTtl);
        }
        let key = req.key();
        if let Some(slot) = self.slots.get_mut(&key) {
            let e = &mut slot.entry;
            e.output = output;
            e.created_at = now;
            e.last_access = now;
            e.ttl_ms = ttl_ms;
            self.touch(&key);
            return Ok(Inserted { key, evicted: None });
        }
        let mut evicted = None;
        if self.slots.len() >= self.config.capacity {
            let lru = *self.recency.values().next().expect("full cache has entries");
            self.remove(&lru);
            self.stats.evictions += 1;
            evicted = Some(lru);
        }
        let tokens = req.prompt_tokens();
        self.index.insert(&key, &tokens);
        let entry = CacheEntry {
            key,
            request: req.clone(),
            output,
            created_at: now,
            last_access: now,
            access_count: 0,
            ttl_ms,
        };
        let stamp = self.next_stamp;
        self.next_stamp += 1;
        self.recency.insert(stamp, key);
        self.slots.insert(key, Slot { entry, tokens, stamp });
        Ok(Inserted { key, evicted })
    }

    /// Exact lookup. A hit refreshes recency; an expired entry is dropped and
    /// reported as a miss.
    pub fn get(&mut self, req: &CanonicalRequest, now: TimestampMs) -> Option<Vec<u8>> {
        self.get_key(&req.key(), now)
    }

    pub fn get_key(&mut self, key: &Digest, now: TimestampMs) -> Option<Vec<u8>> {
        let expired = match self.slots.get(key) {
            None => {
                self.stats.misses += 1;
                return None;
            }
            Some(slot) => slot.entry.is_expired(now),
        };
        if expired {
            self.remove(key);
            self.stats.expirations += 1;
            self.stats.misses += 1;
            return None;
        }
        self.touch(key);
        let e = &mut self.slots.get_mut(key).expect("resident").entry;
        e.access_count += 1;
        e.last_access = e.last_access.max(now);
        self.stats.hits += 1;
        Some(e.output.clone())
    }

    /// Inspect an entry without touching its recency.
    pub fn peek(&self, key: &Digest) -> Option<&CacheEntry> {
        self.slots.get(key).map(|s| &s.entry)
    }

    /// Resident keys from least to most recently used.
    pub fn lru_order(&self) -> Vec<Digest> {
        self.recency.values().copied().collect()
    }

    /// Drop every expired entry; returns how many were removed.
    pub fn sweep(&mut self, now: TimestampMs) -> usize {
        let expired: Vec<Digest> = self
            .slots
            .iter()
            .filter(|(_, s)| s.entry.is_expired(now))
            .map(|(k, _)| *k)
            .collect();
        for k in &expired {
            self.remove(k);
        }
        self.stats.expirations += expired.len() as u64;
        expired.len()
    }

    /// Resident entries for the same model whose prompt token sets have
    /// Jaccard similarity ≥ `threshold`, best first, ties by key.
    pub fn similar(&self, req: &CanonicalRequest, threshold: f64, k: usize) -> Vec<(Digest, f64)> {
        let q = req.prompt_tokens();
        let candidates: Vec<Digest> = if threshold <= 0.0 || q.is_empty() {
            self.slots.keys().copied().collect()
        } else {
            self.index.candidates(&q).into_iter().collect()
        };
        let mut out: Vec<(Digest, f64)> = candidates
            .into_iter()
            .filter_map(|key| {
                let slot = &self.slots[&key];
                if slot.entry.request.model_name != req.model_name {
                    return None;
                }
                let sim = jaccard(&q, &slot.tokens);
                (sim >= threshold).then_some((key, sim))
            })
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.truncate(k);
        out
    }

    /// Every resident entry's tokens are posted, and every posting names a resident entry.
    pub fn index_is_consistent(&self) -> bool {
        let posted = self.slots.iter().all(|(k, s)| {
            s.tokens.iter().all(|t| self.index.postings(t).is_some_and(|p| p.contains(k)))
        });
        let no_dangling = self
            .index
            .iter()
            .all(|(t, keys)| keys.iter().all(|k| self.slots.get(k).is_some_and(|s| s.tokens.contains(t))));
        posted && no_dangling && self.recency.len() == self.slots.len()
    }

    /// Load `{request, output_base64, ttl_ms}` lines. Blank lines are skipped.
    pub fn warm_up(&mut self, text: &str, now: TimestampMs) -> Result<usize, CacheError> {
        let mut n = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| CacheError::Warmup { line: i + 1, reason };
            let rec: WarmupRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let req = normalize_request(&rec.request).map_err(|e| bad(e.to_string()))?;
            let output = base64::engine::general_purpose::STANDARD
                .decode(&rec.output_base64)
                .map_err(|e| bad(e.to_string()))?;
            self.put(&req, output, rec.ttl_ms, now).map_err(|e| bad(e.to_string()))?;
            n += 1;
        }
        Ok(n)
    }

    /// Resident entries as warm-up lines, least recently used first so that
    /// reloading reproduces the recency order.
    pub fn export_warm_up(&self) -> String {
        let mut out = String::new();
        for key in self.recency.values() {
            let e = &self.slots[key].entry;
            let rec = WarmupRecord {
                request: RawRequest::from(&e.request),
                output_base64: base64::engine::general_purpose::STANDARD.encode(&e.output),
                ttl_ms: e.ttl_ms,
            };
            out.push_str(&to_canonical_string(&rec));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WarmupRecord {
    request: RawRequest,
    output_base64: String,
    ttl_ms: Option<u64>,
}
