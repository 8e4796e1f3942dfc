//! The `/v1` HTTP service.

mod ledger;
mod models;
mod planning;

use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;

use imo_core::cache::{CacheConfig, OutputCache, SWEEP_INTERVAL_MS};
use imo_core::canonical::to_canonical_string;
use imo_core::clock::{Clock, SystemClock};
use imo_core::digest::Digest;
use imo_core::ledger::Ledger;
use imo_core::pathfinder::{Lexicon, MemoryStream, PathRecords};
use imo_core::registry::Registry;

use crate::config::{ConfigError, ServeConfig};
use crate::envelope::{ApiError, ErrorCode};

pub const PROTOCOL_HEADER: &str = "x-smip-protocol";
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot open {what}: {reason}")]
    Open { what: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct AppState {
    pub config: ServeConfig,
    pub registry: Registry,
    pub cache: Mutex<OutputCache>,
    pub ledger: Mutex<Ledger>,
    pub records: Mutex<PathRecords>,
    pub memory: Mutex<MemoryStream>,
    pub lexicon: Lexicon,
    /// Partial chunked uploads by target digest.
    pub uploads: Mutex<HashMap<Digest, Vec<u8>>>,
    pub clock: Arc<dyn Clock>,
}

fn open_err(what: &'static str) -> impl Fn(String) -> ServeError {
    move |reason| ServeError::Open { what, reason }
}

impl AppState {
    pub fn open(config: ServeConfig) -> Result<Self, ServeError> {
        Self::open_with(config, Arc::new(SystemClock))
    }

    pub fn open_with(config: ServeConfig, clock: Arc<dyn Clock>) -> Result<Self, ServeError> {
        config.validate()?;
        fs::create_dir_all(&config.data_dir)?;
        let registry =
            Registry::open_with(config.data_dir.join("registry"), config.storage_quota_bytes, clock.clone())
                .map_err(|e| open_err("registry")(e.to_string()))?;
        let cache = OutputCache::new(CacheConfig::with_capacity(config.cache_capacity))
            .map_err(|e| open_err("cache")(e.to_string()))?;
        let ledger =
            Ledger::open(config.data_dir.join("ledger.log")).map_err(|e| open_err("ledger")(e.to_string()))?;
        let records = PathRecords::open(config.data_dir.join("records.jsonl"), config.planner.record_epsilon)
            .map_err(|e| open_err("path records")(e.to_string()))?;
        let lexicon = match &config.lexicon {
            None => Lexicon::new(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| open_err("lexicon")(e.to_string()))?;
                Lexicon::parse(&text).map_err(|e| open_err("lexicon")(e.to_string()))?
            }
        };
        Ok(Self {
            config,
            registry,
            cache: Mutex::new(cache),
            ledger: Mutex::new(ledger),
            records: Mutex::new(records),
            memory: Mutex::new(MemoryStream::new()),
            lexicon,
            uploads: Mutex::new(HashMap::new()),
            clock,
        })
    }

    pub fn now(&self) -> u64 {
        self.clock.now_ms()
    }
}

/// Poisoning only follows a panic in another handler; the guarded state is
/// still consistent because every mutation is a single call.
pub(crate) fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// A key-sorted JSON response.
pub fn document<T: Serialize + ?Sized>(status: StatusCode, body: &T) -> Response {
    let mut r = (status, to_canonical_string(body)).into_response();
    r.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    r
}

pub(crate) fn ok<T: Serialize + ?Sized>(body: &T) -> Response {
    document(StatusCode::OK, body)
}

/// A raw request body whose rejections become envelopes.
pub struct RawBody(pub Bytes);

impl<S: Send + Sync> FromRequest<S> for RawBody {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Bytes::from_request(req, state).await.map(RawBody).map_err(|rej| {
            if rej.status() == StatusCode::PAYLOAD_TOO_LARGE {
                ApiError::new(ErrorCode::TooLarge, "request body exceeds the size limit")
            } else {
                ApiError::invalid(rej.body_text())
            }
        })
    }
}

/// A JSON request body whose rejections become envelopes.
pub struct Doc<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Doc<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let RawBody(bytes) = RawBody::from_request(req, state).await?;
        serde_json::from_slice(&bytes).map(Doc).map_err(|e| {
            ApiError::invalid("malformed document").with_detail(serde_json::json!({ "error": e.to_string() }))
        })
    }
}

async fn protocol(req: Request, next: Next) -> Response {
    let mut response = match req.headers().get(PROTOCOL_HEADER) {
        None => next.run(req).await,
        Some(v) => match v.to_str().ok().and_then(|s| s.trim().parse::<u32>().ok()) {
            None => ApiError::invalid("X-SMIP-Protocol must be a positive integer")
                .with_detail(serde_json::json!({ "supported": PROTOCOL_VERSION }))
                .into_response(),
            Some(v) if v == 0 || v > PROTOCOL_VERSION => ApiError::invalid(format!("protocol version {v} is not supported"))
                .with_detail(serde_json::json!({ "supported": PROTOCOL_VERSION }))
                .into_response(),
            Some(_) => next.run(req).await,
        },
    };
    response.headers_mut().insert(PROTOCOL_HEADER, HeaderValue::from(PROTOCOL_VERSION));
    response
}

async fn auth(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if req.method() == Method::GET || req.method() == Method::HEAD {
        return next.run(req).await;
    }
    let token = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    match token {
        Some(t) if state.config.tokens.iter().any(|k| k == t) => next.run(req).await,
        _ => ApiError::new(ErrorCode::Unauthorized, "a valid bearer token is required").into_response(),
    }
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::invalid("method not allowed on this endpoint").with_status(StatusCode::METHOD_NOT_ALLOWED)
}

async fn healthz() -> Response {
    ok(&serde_json::json!({ "status": "ok", "protocol": PROTOCOL_VERSION }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/healthz", get(healthz))
        .route("/blobs/{digest}", put(models::put_blob).get(models::get_blob))
        .route("/models", get(models::search))
        .route("/models/{name}/versions", post(models::publish).get(models::list_versions))
        .route("/models/{name}/versions/{version}", get(models::get_version))
        .route("/models/{name}/rollback", post(models::rollback))
        .route("/cache/lookup", post(planning::cache_lookup))
        .route("/interpret", post(planning::interpret))
        .route("/plans", post(planning::plan))
        .route("/execute", post(planning::execute))
        .route("/paths/records/{task_hash}", get(planning::records))
        .route("/sim/run", post(ledger::sim_run))
        .route("/ledger/accounts", post(ledger::open_account))
        .route("/ledger/agreements", post(ledger::agreement))
        .route("/ledger/contributions", post(ledger::contribution))
        .route("/ledger/revenue", post(ledger::revenue))
        .route("/ledger/records", get(ledger::records))
        .route("/ledger/accounts/{id}/balance", get(ledger::balance))
        .method_not_allowed_fallback(method_not_allowed);
    Router::new()
        .nest("/v1", v1)
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(state.config.max_body_bytes))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .layer(middleware::from_fn(protocol))
        .with_state(state)
}

fn spawn_sweeper(state: Arc<AppState>) {
    tokio::spawn(async move {
        let mut every = tokio::time::interval(std::time::Duration::from_millis(SWEEP_INTERVAL_MS));
        every.tick().await;
        loop {
            every.tick().await;
            let now = state.now();
            lock(&state.cache).sweep(now);
        }
    });
}

/// Run until the process is stopped.
pub async fn serve(config: ServeConfig) -> Result<(), ServeError> {
    let bind = config.bind;
    let state = Arc::new(AppState::open(config)?);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    spawn_sweeper(state.clone());
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// A server on its own thread and runtime; stops when dropped.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Start serving `config` on its bind address (port 0 picks a free port).
pub fn spawn_background(config: ServeConfig) -> Result<BackgroundServer, ServeError> {
    let bind = config.bind;
    let state = Arc::new(AppState::open(config)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(bind))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            spawn_sweeper(state.clone());
            let _ = axum::serve(listener, router(state))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(BackgroundServer { addr, shutdown: Some(tx), thread: Some(thread) })
}
