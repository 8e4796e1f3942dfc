use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::Response;
use serde::{Deserialize, Serialize};

use imo_core::sim::{post_contributions, SimConfig, SimReport};

use super::{document, lock, ok, AppState, Doc};
use crate::envelope::ApiError;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountRequest {
    pub account: String,
}

pub async fn open_account(
    State(state): State<Arc<AppState>>,
    Doc(req): Doc<AccountRequest>,
) -> Result<Response, ApiError> {
    let now = state.now();
    let r = lock(&state.ledger).open_account(&req.account, now)?;
    Ok(document(StatusCode::CREATED, &r))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementRequest {
    pub model: String,
    pub designer: String,
    pub p_num: u64,
    pub p_den: u64,
    /// Defaults to the index the agreement is recorded at.
    #[serde(default)]
    pub effective_from: Option<u64>,
}

pub async fn agreement(
    State(state): State<Arc<AppState>>,
    Doc(req): Doc<AgreementRequest>,
) -> Result<Response, ApiError> {
    let now = state.now();
    let mut ledger = lock(&state.ledger);
    let from = req.effective_from.unwrap_or(ledger.len());
    let r = ledger.add_agreement(&req.model, &req.designer, req.p_num, req.p_den, from, now)?;
    Ok(document(StatusCode::CREATED, &r))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContributionRequest {
    pub provider: String,
    pub gpu_seconds: u64,
    #[serde(default = "default_source")]
    pub source: String,
}

fn default_source() -> String {
    "manual".into()
}

pub async fn contribution(
    State(state): State<Arc<AppState>>,
    Doc(req): Doc<ContributionRequest>,
) -> Result<Response, ApiError> {
    let now = state.now();
    let r = lock(&state.ledger).add_contribution(&req.provider, req.gpu_seconds, &req.source, now)?;
    Ok(document(StatusCode::CREATED, &r))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevenueRequest {
    pub model: String,
    pub amount: i64,
    #[serde(default)]
    pub as_of: Option<u64>,
    /// Contribution record window `[from, to)`.
    #[serde(default)]
    pub window: Option<(u64, u64)>,
}

pub async fn revenue(State(state): State<Arc<AppState>>, Doc(req): Doc<RevenueRequest>) -> Result<Response, ApiError> {
    let now = state.now();
    let d = lock(&state.ledger).distribute_revenue(&req.model, req.amount, req.as_of, req.window, now)?;
    Ok(document(StatusCode::CREATED, &d))
}

pub async fn records(
    State(state): State<Arc<AppState>>,
    query: Result<Query<BTreeMap<String, String>>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::invalid(e.body_text()))?;
    let from = match q.get("from") {
        None => 0,
        Some(f) => f.parse().map_err(|_| ApiError::invalid("from must be a record index"))?,
    };
    Ok(ok(lock(&state.ledger).records_from(from)))
}

#[derive(Serialize)]
struct Balance<'a> {
    account: &'a str,
    balance: u64,
}

pub async fn balance(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let balance = lock(&state.ledger).balance(&id)?;
    Ok(ok(&Balance { account: &id, balance }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimRequest {
    pub config: SimConfig,
    /// Record each owner's GPU-seconds on the ledger.
    #[serde(default)]
    pub post: bool,
    #[serde(default = "default_sim_source")]
    pub source: String,
}

fn default_sim_source() -> String {
    "sim".into()
}

#[derive(Serialize)]
struct SimResponse {
    report: SimReport,
    records: Vec<u64>,
}

pub async fn sim_run(State(state): State<Arc<AppState>>, Doc(req): Doc<SimRequest>) -> Result<Response, ApiError> {
    let report = req.config.run()?;
    let records = if req.post {
        let now = state.now();
        post_contributions(&report, &mut *lock(&state.ledger), &req.source, now)?
    } else {
        Vec::new()
    };
    Ok(ok(&SimResponse { report, records }))
}
