use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::CacheError;
use crate::canonical::canonical_digest;
use crate::digest::Digest;
use crate::text::token_set;

/// A scalar request setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
}

/// A request as a client sends it. Everything is optional so that missing
/// fields can be reported by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRequest {
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default)]
    pub model_version: Option<u32>,
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalRequest {
    pub model_name: String,
    pub model_version: u32,
    pub prompt: String,
    pub params: BTreeMap<String, ParamValue>,
}

impl CanonicalRequest {
    /// Digest of the canonical serialization; the cache key.
    pub fn key(&self) -> Digest {
        canonical_digest(self)
    }

    pub fn prompt_tokens(&self) -> BTreeSet<String> {
        token_set(&self.prompt)
    }
}

impl From<&CanonicalRequest> for RawRequest {
    fn from(c: &CanonicalRequest) -> Self {
        RawRequest {
            model_name: Some(c.model_name.clone()),
            model_version: Some(c.model_version),
            prompt: Some(c.prompt.clone()),
            params: c
                .params
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("scalar")))
                .collect(),
        }
    }
}

fn round3(x: f64) -> f64 {
    let r = (x * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn normalize_request(raw: &RawRequest) -> Result<CanonicalRequest, CacheError> {
    let model_name = raw.model_name.clone().ok_or(CacheError::MissingField("model_name"))?;
    let model_version = raw.model_version.ok_or(CacheError::MissingField("model_version"))?;
    if model_name.is_empty() {
        return Err(CacheError::MissingField("model_name"));
    }
    if model_version == 0 {
        return Err(CacheError::InvalidParam("model_version".into()));
    }
    let prompt = raw.prompt.as_deref().ok_or(CacheError::MissingField("prompt"))?.trim().to_string();
    let mut params = BTreeMap::new();
    for (k, v) in &raw.params {
        let value = match v {
            serde_json::Value::Bool(b) => ParamValue::Bool(*b),
            serde_json::Value::String(s) => ParamValue::Text(s.clone()),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(i) => ParamValue::Int(i),
                None => ParamValue::Real(round3(n.as_f64().ok_or_else(|| CacheError::InvalidParam(k.clone()))?)),
            },
            _ => return Err(CacheError::InvalidParam(k.clone())),
        };
        params.insert(k.clone(), value);
    }
    Ok(CanonicalRequest { model_name, model_version, prompt, params })
}
