//! Deterministic plan execution against mock model adapters, execution
//! scorecards, and the co-training capability update.

mod cotrain;
mod score;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

pub use cotrain::{co_train, co_train_round, publish_co_trained, Capabilities, DEFAULT_ETA};
pub use score::{responsiveness_probe, score_report, Scorecard};

use crate::canonical::base64_bytes;
use crate::digest::Digest;
use crate::pathfinder::{match_quality, ModelPool, PathPlan, PlanError};
use crate::registry::{ModelManifest, ModelRef, RegistryError};
use crate::workflow::{Subtask, TaskSpec};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("unknown model {0}")]
    UnknownModel(ModelRef),
    #[error("plan does not assign subtask {0:?}")]
    Unassigned(String),
    #[error("unknown subtask {0:?}")]
    UnknownSubtask(String),
    #[error("report does not match the task and plan")]
    MismatchedReport,
    #[error("co-training needs at least two models, got {0}")]
    TooFewModels(usize),
    #[error("learning rate {0} is outside (0, 1]")]
    InvalidRate(f64),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// What one model call produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub pass: bool,
    pub output: Vec<u8>,
}

/// A model backend. Implementations must be pure functions of their inputs.
pub trait Adapter: Sync {
    fn call(&self, model: &ModelManifest, subtask_id: &str, subtask: &Subtask, input: &[u8]) -> Completion;
}

/// Passes a subtask iff the model's weakest-link match reaches its
/// difficulty. Output is `<model>:<subtask>:<first 8 hex of sha256(input)>`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockAdapter;

impl Adapter for MockAdapter {
    fn call(&self, model: &ModelManifest, subtask_id: &str, subtask: &Subtask, input: &[u8]) -> Completion {
        let h = hex::encode(Sha256::digest(input));
        Completion {
            pass: match_quality(model, subtask) >= subtask.difficulty,
            output: format!("{}:{}:{}", model.name, subtask_id, &h[..8]).into_bytes(),
        }
    }
}

/// Wraps another adapter and forces one (subtask, model) pair to fail.
#[derive(Debug, Clone)]
pub struct FailingAdapter<A> {
    pub inner: A,
    pub subtask: String,
    pub model: ModelRef,
}

impl<A: Adapter> Adapter for FailingAdapter<A> {
    fn call(&self, model: &ModelManifest, subtask_id: &str, subtask: &Subtask, input: &[u8]) -> Completion {
        let mut c = self.inner.call(model, subtask_id, subtask, input);
        if subtask_id == self.subtask && model.model_ref() == self.model {
            c.pass = false;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtaskOutcome {
    pub model: ModelRef,
    pub pass: bool,
    #[serde(with = "base64_bytes")]
    pub output: Vec<u8>,
    pub latency_ms: u64,
    pub cost: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionReport {
    pub task_hash: Digest,
    pub outcomes: BTreeMap<String, SubtaskOutcome>,
    pub total_cost: u64,
    pub critical_path_latency: u64,
}

impl ExecutionReport {
    /// Totals agree with the per-subtask values on `task`'s DAG.
    pub fn totals_consistent(&self, task: &TaskSpec) -> bool {
        self.total_cost == self.outcomes.values().map(|o| o.cost).sum::<u64>()
            && self.critical_path_latency
                == task.longest_path(|id| self.outcomes.get(id).map_or(0, |o| o.latency_ms))
    }
}

pub fn execute_plan(
    plan: &PathPlan,
    task: &TaskSpec,
    input: &[u8],
    pool: &ModelPool,
) -> Result<ExecutionReport, RuntimeError> {
    execute_plan_with(plan, task, input, pool, &MockAdapter)
}

/// Run every subtask in dependency order. Subtasks whose prerequisites are
/// all done run concurrently; the report does not depend on completion order.
pub fn execute_plan_with(
    plan: &PathPlan,
    task: &TaskSpec,
    input: &[u8],
    pool: &ModelPool,
    adapter: &dyn Adapter,
) -> Result<ExecutionReport, RuntimeError> {
    let mut models = BTreeMap::new();
    for id in task.subtasks.keys() {
        let r = plan.assignment.get(id).ok_or_else(|| RuntimeError::Unassigned(id.clone()))?;
        let m = pool.get(r).ok_or_else(|| RuntimeError::UnknownModel(r.clone()))?;
        models.insert(id.as_str(), m);
    }

    let mut level: BTreeMap<&str, usize> = BTreeMap::new();
    for id in task.topo_order() {
        let l = task.prerequisites(&id).iter().map(|p| level[*p] + 1).max().unwrap_or(0);
        level.insert(task.subtasks.get_key_value(&id).expect("topo order lists subtasks").0, l);
    }
    let depth = level.values().max().map_or(0, |d| d + 1);

    let mut outcomes: BTreeMap<String, SubtaskOutcome> = BTreeMap::new();
    for d in 0..depth {
        let wave: Vec<&str> = level.iter().filter(|(_, l)| **l == d).map(|(id, _)| *id).collect();
        let inputs: Vec<Vec<u8>> = wave
            .iter()
            .map(|id| {
                let mut buf = input.to_vec();
                for p in task.prerequisites(id) {
                    buf.extend_from_slice(&outcomes[p].output);
                }
                buf
            })
            .collect();
        let done: Vec<Completion> = std::thread::scope(|s| {
            let handles: Vec<_> = wave
                .iter()
                .zip(&inputs)
                .map(|(id, buf)| {
                    let (m, st) = (models[id], &task.subtasks[*id]);
                    s.spawn(move || adapter.call(m, id, st, buf))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("adapter panicked")).collect()
        });
        for (id, c) in wave.iter().zip(done) {
            let m = models[id];
            outcomes.insert(
                id.to_string(),
                SubtaskOutcome {
                    model: m.model_ref(),
                    pass: c.pass,
                    output: c.output,
                    latency_ms: m.latency_ms,
                    cost: m.cost_per_call,
                },
            );
        }
    }

    let total_cost = outcomes.values().map(|o| o.cost).sum();
    let critical_path_latency = task.longest_path(|id| outcomes[id].latency_ms);
    Ok(ExecutionReport { task_hash: task.task_hash, outcomes, total_cost, critical_path_latency })
}
