use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use serde::{Deserialize, Serialize};

use imo_core::digest::Digest;
use imo_core::registry::{EnvironmentSpec, ModelMeta, VersionSelector};

use super::{document, lock, ok, AppState, Doc, RawBody};
use crate::envelope::ApiError;

fn digest_param(s: &str) -> Result<Digest, ApiError> {
    s.parse().map_err(|_| ApiError::invalid(format!("{s:?} is not a lowercase hex SHA-256 digest")))
}

/// `bytes start-end/total`
pub fn parse_content_range(v: &str) -> Option<(u64, u64, u64)> {
    let rest = v.trim().strip_prefix("bytes ")?;
    let (range, total) = rest.split_once('/')?;
    let (a, b) = range.split_once('-')?;
    let (a, b, total) = (a.parse().ok()?, b.parse().ok()?, total.parse().ok()?);
    (a <= b && b < total).then_some((a, b, total))
}

#[derive(Serialize)]
struct Stored {
    digest: Digest,
    size: u64,
}

#[derive(Serialize)]
struct Partial {
    digest: Digest,
    received: u64,
    total: u64,
}

fn store(state: &AppState, expected: Digest, bytes: &[u8]) -> Result<Response, ApiError> {
    let actual = Digest::of(bytes);
    if actual != expected {
        return Err(ApiError::invalid("uploaded bytes do not match the digest in the path")
            .with_detail(serde_json::json!({ "expected": expected, "actual": actual })));
    }
    state.registry.blobs().put(bytes)?;
    Ok(document(StatusCode::CREATED, &Stored { digest: expected, size: bytes.len() as u64 }))
}

/// Whole-blob upload, or one piece of a chunked upload when `Content-Range`
/// is present. Pieces must arrive in order.
pub async fn put_blob(
    State(state): State<Arc<AppState>>,
    Path(digest): Path<String>,
    headers: HeaderMap,
    RawBody(body): RawBody,
) -> Result<Response, ApiError> {
    let digest = digest_param(&digest)?;
    let Some(range) = headers.get(header::CONTENT_RANGE) else {
        return store(&state, digest, &body);
    };
    let (start, end, total) = range
        .to_str()
        .ok()
        .and_then(parse_content_range)
        .ok_or_else(|| ApiError::invalid("Content-Range must be `bytes start-end/total`"))?;
    if end - start + 1 != body.len() as u64 {
        return Err(ApiError::invalid("Content-Range length does not match the body"));
    }
    if let Some(quota) = state.config.storage_quota_bytes {
        if total > quota {
            return Err(ApiError::new(crate::envelope::ErrorCode::TooLarge, "blob exceeds the storage quota"));
        }
    }
    let complete = {
        let mut uploads = lock(&state.uploads);
        let buf = uploads.entry(digest).or_default();
        if start != buf.len() as u64 {
            let received = buf.len();
            if start == 0 {
                buf.clear();
            } else {
                return Err(ApiError::conflict("chunk does not continue the upload")
                    .with_detail(serde_json::json!({ "received": received })));
            }
        }
        buf.extend_from_slice(&body);
        if buf.len() as u64 == total {
            uploads.remove(&digest)
        } else {
            return Ok(document(
                StatusCode::ACCEPTED,
                &Partial { digest, received: buf.len() as u64, total },
            ));
        }
    };
    store(&state, digest, &complete.expect("finished upload"))
}

pub async fn get_blob(State(state): State<Arc<AppState>>, Path(digest): Path<String>) -> Result<Response, ApiError> {
    let digest = digest_param(&digest)?;
    let bytes = state.registry.blobs().get(&digest)?;
    let mut r = (StatusCode::OK, bytes).into_response();
    r.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    Ok(r)
}

/// A manifest submission: the uploader-controlled fields plus the digest of
/// a blob already stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishRequest {
    pub blob_hash: Digest,
    #[serde(default)]
    pub capabilities: BTreeMap<String, f64>,
    #[serde(default)]
    pub cost_per_call: u64,
    pub latency_ms: u64,
    pub designer_account: String,
    #[serde(default)]
    pub env: EnvironmentSpec,
    #[serde(default)]
    pub changelog: String,
}

impl PublishRequest {
    pub fn into_meta(self) -> (Digest, ModelMeta) {
        let meta = ModelMeta {
            capabilities: self.capabilities,
            cost_per_call: self.cost_per_call,
            latency_ms: self.latency_ms,
            designer_account: self.designer_account,
            env: self.env,
            changelog: self.changelog,
            metadata_only: false,
        };
        (self.blob_hash, meta)
    }
}

pub async fn publish(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
    Doc(req): Doc<PublishRequest>,
) -> Result<Response, ApiError> {
    let (blob, meta) = req.into_meta();
    let m = state.registry.publish(&name, blob, meta)?;
    Ok(document(StatusCode::CREATED, &m))
}

#[derive(Serialize)]
struct VersionEntry {
    version: u32,
    created_at: u64,
    changelog: String,
}

pub async fn list_versions(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
) -> Result<Response, ApiError> {
    let versions: Vec<VersionEntry> = state
        .registry
        .list_versions(&name)?
        .into_iter()
        .map(|(version, created_at, changelog)| VersionEntry { version, created_at, changelog })
        .collect();
    Ok(ok(&versions))
}

pub async fn get_version(
    State(state): State<Arc<AppState>>,
    Path((name, version)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let sel: VersionSelector = version.parse().map_err(ApiError::invalid)?;
    Ok(ok(&state.registry.manifest(&name, sel)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollbackRequest {
    pub target: u32,
}

pub async fn rollback(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
    Doc(req): Doc<RollbackRequest>,
) -> Result<Response, ApiError> {
    Ok(document(StatusCode::CREATED, &state.registry.rollback(&name, req.target)?))
}

pub async fn search(
    State(state): State<Arc<AppState>>,
    query: Result<Query<BTreeMap<String, String>>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::invalid(e.body_text()))?;
    let limit = match q.get("limit") {
        None => 20,
        Some(l) => l.parse().map_err(|_| ApiError::invalid("limit must be a non-negative integer"))?,
    };
    let text = q.get("q").map(String::as_str).unwrap_or("");
    let found = if text.trim().is_empty() {
        let mut all = state.registry.latest_models();
        all.truncate(limit);
        all
    } else {
        state.registry.search_models(text, limit)
    };
    Ok(ok(&found))
}

#[cfg(test)]
mod tests {
    use super::parse_content_range;

    #[test]
    fn content_range() {
        assert_eq!(parse_content_range("bytes 0-9/20"), Some((0, 9, 20)));
        assert_eq!(parse_content_range("bytes 10-19/20"), Some((10, 19, 20)));
        assert_eq!(parse_content_range("bytes 10-20/20"), None);
        assert_eq!(parse_content_range("bytes 5-4/20"), None);
        assert_eq!(parse_content_range("items 0-1/2"), None);
    }
}
