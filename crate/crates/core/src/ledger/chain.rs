use serde::{Deserialize, Serialize};

use super::Payload;
use crate::canonical::{canonical_digest, to_canonical_string};
use crate::clock::TimestampMs;
use crate::digest::Digest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerRecord {
    pub index: u64,
    pub prev_hash: Digest,
    pub payload: Payload,
    pub timestamp: TimestampMs,
    pub hash: Digest,
}

#[derive(Serialize)]
struct Hashed<'a> {
    index: u64,
    prev_hash: &'a Digest,
    payload: &'a Payload,
    timestamp: TimestampMs,
}

pub fn record_hash(index: u64, prev_hash: &Digest, payload: &Payload, timestamp: TimestampMs) -> Digest {
    canonical_digest(&Hashed { index, prev_hash, payload, timestamp })
}

impl LedgerRecord {
    pub fn new(index: u64, prev_hash: Digest, payload: Payload, timestamp: TimestampMs) -> Self {
        let hash = record_hash(index, &prev_hash, &payload, timestamp);
        Self { index, prev_hash, payload, timestamp, hash }
    }

    fn links_to(&self, position: u64, prev: &Digest) -> bool {
        self.index == position
            && self.prev_hash == *prev
            && self.hash == record_hash(self.index, &self.prev_hash, &self.payload, self.timestamp)
    }
}

/// Index of the first record whose position, linkage or hash is wrong.
pub fn verify_chain(records: &[LedgerRecord]) -> Result<(), u64> {
    let mut prev = Digest::ZERO;
    for (i, r) in records.iter().enumerate() {
        if !r.links_to(i as u64, &prev) {
            return Err(i as u64);
        }
        prev = r.hash;
    }
    Ok(())
}

/// Verify a raw log: one canonical record per newline-terminated line.
/// A line that does not parse, or parses but is not byte-for-byte its own
/// canonical form, fails like a bad hash. Returns the parsed chain or the
/// first bad index.
pub fn verify_log(raw: &[u8]) -> Result<Vec<LedgerRecord>, u64> {
    let mut records = Vec::new();
    let mut prev = Digest::ZERO;
    let mut rest = raw;
    while !rest.is_empty() {
        let i = records.len() as u64;
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return Err(i);
        };
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| i)?;
        let r: LedgerRecord = serde_json::from_str(line).map_err(|_| i)?;
        if to_canonical_string(&r) != line || !r.links_to(i, &prev) {
            return Err(i);
        }
        prev = r.hash;
        records.push(r);
        rest = &rest[end + 1..];
    }
    Ok(records)
}
