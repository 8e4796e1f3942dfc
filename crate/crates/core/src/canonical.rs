//! Canonical document form: compact UTF-8 JSON with object keys sorted.
//!
//! Every digest computed over a structured value (task hashes, cache keys,
//! lock digests, ledger record hashes) goes through [`to_canonical_string`],
//! so the same value always hashes the same regardless of field order.

use serde::Serialize;

use crate::digest::Digest;

/// Serialize `value` with keys sorted at every nesting level.
///
/// `serde_json::Value` keeps objects in a `BTreeMap`, so a round trip through
/// it yields lexicographic key order.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("domain types serialize to JSON");
    serde_json::to_string(&v).expect("JSON values always serialize")
}

pub fn canonical_digest<T: Serialize + ?Sized>(value: &T) -> Digest {
    Digest::of(to_canonical_string(value).as_bytes())
}

/// Serde adapter storing byte payloads as standard base64 strings.
pub mod base64_bytes {
    use base64::Engine as _;
    use base64::engine::general_purpose::STANDARD;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}
