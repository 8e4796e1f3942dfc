use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::response::Response;
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use imo_core::cache::{normalize_request, CanonicalRequest, ParamValue, RawRequest};
use imo_core::canonical::{canonical_digest, to_canonical_string};
use imo_core::digest::Digest;
use imo_core::ledger::Distributed;
use imo_core::pathfinder::{
    interpret_request, plan_with, BreakthroughEvent, ModelPool, OptimalPathRecord, PathPlan, PlanError,
    PlannerWeights, Restrictions,
};
use imo_core::registry::VersionSelector;
use imo_core::runtime::{execute_plan, responsiveness_probe, score_report, ExecutionReport, Scorecard};
use imo_core::workflow::TaskSpec;

use super::{lock, ok, AppState, Doc};
use crate::envelope::ApiError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheLookup {
    pub request: RawRequest,
    /// When set, also list resident entries at least this similar.
    #[serde(default)]
    pub similar_threshold: Option<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    5
}

#[derive(Serialize)]
struct Similar {
    key: Digest,
    score: f64,
}

#[derive(Serialize)]
struct LookupResult {
    key: Digest,
    hit: bool,
    output: Option<String>,
    similar: Vec<Similar>,
}

pub async fn cache_lookup(State(state): State<Arc<AppState>>, Doc(req): Doc<CacheLookup>) -> Result<Response, ApiError> {
    let canonical = normalize_request(&req.request)?;
    let now = state.now();
    let mut cache = lock(&state.cache);
    let output = cache.get(&canonical, now);
    let similar = match req.similar_threshold {
        None => Vec::new(),
        Some(t) => cache.similar(&canonical, t, req.k).into_iter().map(|(key, score)| Similar { key, score }).collect(),
    };
    Ok(ok(&LookupResult {
        key: canonical.key(),
        hit: output.is_some(),
        output: output.map(|o| STANDARD.encode(o)),
        similar,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpretRequest {
    pub text: String,
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub deadline_ms: Option<u64>,
}

pub async fn interpret(
    State(state): State<Arc<AppState>>,
    Doc(req): Doc<InterpretRequest>,
) -> Result<Response, ApiError> {
    let task = interpret_request(&req.text, &state.lexicon)?.with_limits(req.budget, req.deadline_ms)?;
    Ok(ok(&task))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    pub task: TaskSpec,
    #[serde(default)]
    pub weights: Option<PlannerWeights>,
    #[serde(default)]
    pub restrictions: Restrictions,
    /// Account credited if the plan sets a new record.
    #[serde(default)]
    pub submitter: Option<String>,
}

#[derive(Debug, Serialize)]
struct PlanResponse {
    plan: PathPlan,
    cached: bool,
    record: Option<OptimalPathRecord>,
    breakthrough: Option<BreakthroughEvent>,
    reward: Option<Distributed>,
}

/// The cache key of a plan request: the planner inputs as the prompt and
/// the model pool's digest as a parameter, so publishing invalidates it.
fn plan_cache_request(req: &PlanRequest, weights: &PlannerWeights, pool: &ModelPool) -> CanonicalRequest {
    #[derive(Serialize)]
    struct Inputs<'a> {
        task: &'a TaskSpec,
        weights: &'a PlannerWeights,
        restrictions: &'a Restrictions,
    }
    let manifests: Vec<_> = pool.manifests().collect();
    CanonicalRequest {
        model_name: "planner".into(),
        model_version: 1,
        prompt: to_canonical_string(&Inputs { task: &req.task, weights, restrictions: &req.restrictions }),
        params: BTreeMap::from([("pool".to_string(), ParamValue::Text(canonical_digest(&manifests).to_hex()))]),
    }
}

pub async fn plan(State(state): State<Arc<AppState>>, Doc(req): Doc<PlanRequest>) -> Result<Response, ApiError> {
    let weights = req.weights.unwrap_or(state.config.planner);
    weights.validate()?;
    let pool = ModelPool::new(state.registry.latest_models());
    let key = plan_cache_request(&req, &weights, &pool);
    let now = state.now();

    let cached = lock(&state.cache).get(&key, now);
    let (plan, cached) = match cached.and_then(|bytes| serde_json::from_slice::<PathPlan>(&bytes).ok()) {
        Some(p) => (p, true),
        None => {
            let p = plan_with(&req.task, &pool, &weights, &req.restrictions)?;
            let bytes = to_canonical_string(&p).into_bytes();
            lock(&state.cache).put(&key, bytes, state.config.cache_ttl_ms, now)?;
            (p, false)
        }
    };

    let submitter = req.submitter.as_deref().unwrap_or("anonymous");
    let breakthrough = if plan.utility.feasible {
        lock(&state.records).record_if_best(&plan, submitter, now)?
    } else {
        None
    };
    let record = lock(&state.records).best(&plan.task_hash).cloned();

    let mut reward = None;
    if let (Some(event), Some(_), true) = (&breakthrough, &req.submitter, state.config.breakthrough_reward > 0) {
        let mut ledger = lock(&state.ledger);
        if ledger.is_open(&event.submitter) && ledger.is_open(&state.config.treasury) {
            reward = Some(ledger.post_breakthrough(
                event,
                state.config.breakthrough_reward,
                &BTreeMap::new(),
                &state.config.treasury,
                now,
            )?);
        }
    }
    Ok(ok(&PlanResponse { plan, cached, record, breakthrough, reward }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecuteRequest {
    pub plan: PathPlan,
    pub task: TaskSpec,
    #[serde(default)]
    pub input: String,
    /// Run the failure-injection probe against this subtask.
    #[serde(default)]
    pub probe: Option<String>,
}

#[derive(Debug, Serialize)]
struct ExecuteResponse {
    report: ExecutionReport,
    scorecard: Scorecard,
    refined: Option<PathPlan>,
}

pub async fn execute(State(state): State<Arc<AppState>>, Doc(req): Doc<ExecuteRequest>) -> Result<Response, ApiError> {
    if req.plan.task_hash != req.task.task_hash {
        return Err(PlanError::MismatchedReport.into());
    }
    let mut models = state.registry.latest_models();
    for r in req.plan.assignment.values() {
        models.push(state.registry.manifest(&r.name, VersionSelector::Exact(r.version))?);
    }
    let pool = ModelPool::new(models);
    let report = execute_plan(&req.plan, &req.task, req.input.as_bytes(), &pool)?;
    let mut scorecard = score_report(&report, &req.task, &req.plan)?;
    let mut refined = None;
    if let Some(sid) = &req.probe {
        let weights = state.config.planner;
        let mut memory = lock(&state.memory);
        let out = responsiveness_probe(
            &req.task,
            &req.plan,
            sid,
            &pool,
            &weights,
            &mut memory,
            req.input.as_bytes(),
            state.now(),
        )?;
        scorecard.responsiveness = Some(out.responsiveness);
        refined = Some(out.refined);
    }
    Ok(ok(&ExecuteResponse { report, scorecard, refined }))
}

#[derive(Serialize)]
struct RecordHistory<'a> {
    best: &'a OptimalPathRecord,
    history: &'a [OptimalPathRecord],
}

pub async fn records(State(state): State<Arc<AppState>>, Path(hash): Path<String>) -> Result<Response, ApiError> {
    let hash: Digest = hash.parse().map_err(|_| ApiError::invalid("task hash must be a lowercase hex digest"))?;
    let records = lock(&state.records);
    let best = records.best(&hash).ok_or_else(|| ApiError::not_found(format!("no record for task {hash}")))?;
    Ok(ok(&RecordHistory { best, history: records.history(&hash) }))
}
