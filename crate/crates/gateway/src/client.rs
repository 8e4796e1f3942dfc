//! Blocking client for the `/v1` API.

use reqwest::blocking::{Client as Http, RequestBuilder};
use reqwest::header::{AUTHORIZATION, CONTENT_RANGE};
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use imo_core::canonical::to_canonical_string;
use imo_core::digest::Digest;

use crate::envelope::{ErrorCode, ErrorEnvelope};
use crate::server::{PROTOCOL_HEADER, PROTOCOL_VERSION};

/// Blobs above this size are sent in `Content-Range` pieces of this size.
pub const UPLOAD_CHUNK: usize = 4 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{} ({status}): {}", envelope_code(.envelope), .envelope.message)]
    Api { status: u16, envelope: ErrorEnvelope },
    #[error("cannot reach server: {0}")]
    Transport(String),
}

fn envelope_code(e: &ErrorEnvelope) -> String {
    serde_json::to_value(e.code).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

impl ClientError {
    /// The envelope to show the user; transport failures get a synthetic one.
    pub fn envelope(&self) -> ErrorEnvelope {
        match self {
            ClientError::Api { envelope, .. } => envelope.clone(),
            ClientError::Transport(m) => {
                ErrorEnvelope { code: ErrorCode::Internal, message: format!("cannot reach server: {m}"), detail: None }
            }
        }
    }
}

pub struct Client {
    base: String,
    token: Option<String>,
    http: Http,
}

impl Client {
    pub fn new(base: &str, token: Option<String>) -> Self {
        Self { base: base.trim_end_matches('/').to_string(), token, http: Http::new() }
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        let mut b = self.http.request(method, format!("{}/v1{}", self.base, path)).header(PROTOCOL_HEADER, PROTOCOL_VERSION);
        if let Some(t) = &self.token {
            b = b.header(AUTHORIZATION, format!("Bearer {t}"));
        }
        b
    }

    fn send(&self, b: RequestBuilder) -> Result<Vec<u8>, ClientError> {
        let resp = b.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| ClientError::Transport(e.to_string()))?.to_vec();
        if status.is_success() {
            return Ok(bytes);
        }
        let envelope = serde_json::from_slice(&bytes).unwrap_or_else(|_| ErrorEnvelope {
            code: ErrorCode::Internal,
            message: format!("server answered {status} without an error document"),
            detail: None,
        });
        Err(ClientError::Api { status: status.as_u16(), envelope })
    }

    fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ClientError> {
        serde_json::from_slice(bytes).map_err(|e| ClientError::Transport(format!("unreadable response: {e}")))
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(&self.send(self.request(Method::GET, path))?)
    }

    pub fn get_query<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T, ClientError> {
        Self::decode(&self.send(self.request(Method::GET, path).query(query))?)
    }

    pub fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let b = self
            .request(Method::POST, path)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(to_canonical_string(body));
        Self::decode(&self.send(b)?)
    }

    pub fn get_bytes(&self, path: &str) -> Result<Vec<u8>, ClientError> {
        self.send(self.request(Method::GET, path))
    }

    /// Upload `bytes`, chunking large blobs. Returns their digest.
    pub fn put_blob(&self, bytes: &[u8]) -> Result<Digest, ClientError> {
        let digest = Digest::of(bytes);
        let path = format!("/blobs/{digest}");
        if bytes.len() <= UPLOAD_CHUNK {
            self.send(self.request(Method::PUT, &path).body(bytes.to_vec()))?;
            return Ok(digest);
        }
        let total = bytes.len();
        for (i, piece) in bytes.chunks(UPLOAD_CHUNK).enumerate() {
            let start = i * UPLOAD_CHUNK;
            let range = format!("bytes {}-{}/{}", start, start + piece.len() - 1, total);
            self.send(self.request(Method::PUT, &path).header(CONTENT_RANGE, range).body(piece.to_vec()))?;
        }
        Ok(digest)
    }

    pub fn health(&self) -> Result<Value, ClientError> {
        self.get("/healthz")
    }
}
