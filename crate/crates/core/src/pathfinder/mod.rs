//! Plan which model handles each subtask of a task.
//!
//! A plan is scored by [`evaluate_plan`]: the mean weakest-link match quality
//! of the assigned models, minus budget- and deadline-normalized cost and
//! critical-path latency. [`plan`] runs a beam search with an admissible
//! bound; [`brute_force_plan`] enumerates everything and serves as its oracle.

mod interpret;
mod memory;
mod records;
mod search;
mod utility;

use std::collections::BTreeSet;

pub use interpret::{interpret_request, InterpretError, Lexicon, DEFAULT_DIFFICULTY};
pub use memory::{
    retrieval_score, ConcatSynthesizer, MemoryError, MemoryRecord, MemoryStream, RetrievalWeights, Synthesizer,
    DEFAULT_REFLECTION_THRESHOLD,
};
pub use records::{BreakthroughEvent, OptimalPathRecord, PathRecords};
pub use search::{brute_force_plan, plan, plan_with, PathPlan, Restrictions, BRUTE_FORCE_LIMIT};
pub use utility::{evaluate_plan, is_feasible, match_quality, ModelPool, PlannerWeights, UtilityBreakdown};

use crate::clock::TimestampMs;
use crate::registry::ModelRef;
use crate::runtime::ExecutionReport;
use crate::workflow::TaskSpec;

/// Importance given to the memory recorded for each failed subtask.
pub const FAILURE_IMPORTANCE: i64 = 6;

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("model pool is empty")]
    EmptyPool,
    #[error("task has no subtasks")]
    EmptyTask,
    #[error("unknown model {0}")]
    UnknownModel(ModelRef),
    #[error("assignment does not cover subtask {0:?} exactly once")]
    IncompleteAssignment(String),
    #[error("no candidate model left for subtask {0:?}")]
    NoCandidates(String),
    #[error("{combinations} assignments exceed the exhaustive search limit")]
    TooLarge { combinations: u128 },
    #[error("plan is infeasible")]
    InfeasiblePlan,
    #[error("execution report does not belong to this plan and task")]
    MismatchedReport,
    #[error("invalid planner weights: {0}")]
    InvalidWeights(String),
    #[error("corrupt path records: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Replan after an execution: each failed subtask loses the model that failed
/// it. A subtask whose every candidate has now failed gets its full candidate
/// set back. One memory per failure is appended to `memory`.
pub fn refine_plan(
    plan: &PathPlan,
    report: &ExecutionReport,
    task: &TaskSpec,
    pool: &ModelPool,
    weights: &PlannerWeights,
    memory: &mut MemoryStream,
    now: TimestampMs,
) -> Result<PathPlan, PlanError> {
    if report.task_hash != plan.task_hash || plan.task_hash != task.task_hash {
        return Err(PlanError::MismatchedReport);
    }
    let matches = report.outcomes.len() == plan.assignment.len()
        && report
            .outcomes
            .iter()
            .all(|(id, o)| plan.assignment.get(id).is_some_and(|m| *m == o.model));
    if !matches {
        return Err(PlanError::MismatchedReport);
    }
    let mut restrictions = Restrictions::default();
    for (id, outcome) in report.outcomes.iter().filter(|(_, o)| !o.pass) {
        restrictions.exclude(id, outcome.model.clone());
        memory
            .add(&format!("subtask {id} failed with {}", outcome.model), FAILURE_IMPORTANCE, now)
            .expect("constant importance is in range");
    }
    let exhausted: BTreeSet<String> = task
        .subtasks
        .keys()
        .filter(|id| pool.refs().all(|r| restrictions.excluded.contains(&((*id).clone(), r.clone()))))
        .cloned()
        .collect();
    restrictions.excluded.retain(|(id, _)| !exhausted.contains(id));
    plan_with(task, pool, weights, &restrictions)
}
