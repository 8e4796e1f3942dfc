use serde::{Deserialize, Serialize};

use super::{execute_plan_with, ExecutionReport, FailingAdapter, MockAdapter, RuntimeError};
use crate::clock::TimestampMs;
use crate::pathfinder::{refine_plan, MemoryStream, ModelPool, PathPlan, PlanError, PlannerWeights};
use crate::workflow::TaskSpec;

/// Execution quality on six axes. `None` marks a metric whose population is
/// empty and serializes as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scorecard {
    pub functional: f64,
    pub multi_step: f64,
    pub adaptability: Option<f64>,
    pub transparency: f64,
    pub comprehensive: Option<f64>,
    pub responsiveness: Option<f64>,
}

fn rate(passes: impl Iterator<Item = bool>) -> Option<f64> {
    let (n, k) = passes.fold((0usize, 0usize), |(n, k), p| (n + 1, k + p as usize));
    (n > 0).then(|| k as f64 / n as f64)
}

pub fn score_report(report: &ExecutionReport, task: &TaskSpec, plan: &PathPlan) -> Result<Scorecard, RuntimeError> {
    let same_subtasks = report.outcomes.len() == task.subtasks.len()
        && task.subtasks.keys().all(|id| report.outcomes.contains_key(id));
    if report.task_hash != task.task_hash || plan.task_hash != task.task_hash || !same_subtasks {
        return Err(RuntimeError::MismatchedReport);
    }
    let passed = |id: &str| report.outcomes[id].pass;
    let functional = rate(report.outcomes.values().map(|o| o.pass)).unwrap_or(0.0);
    let multi_step = rate(task.maximal_chains().iter().map(|c| c.iter().all(|id| passed(id)))).unwrap_or(0.0);
    let adaptability = rate(task.subtasks.iter().filter(|(_, s)| s.novel).map(|(id, _)| passed(id)));
    let comprehensive =
        rate(task.subtasks.keys().filter(|id| task.prerequisites(id).len() >= 2).map(|id| passed(id)));
    let transparency = task
        .subtasks
        .keys()
        .all(|id| plan.rationale.get(id).is_some_and(|r| !r.trim().is_empty())) as u8 as f64;
    Ok(Scorecard { functional, multi_step, adaptability, transparency, comprehensive, responsiveness: None })
}

/// Result of a failure-injection run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub responsiveness: f64,
    pub refined: PathPlan,
    pub first: ExecutionReport,
    pub second: ExecutionReport,
}

/// Execute `plan` with `failing` subtask's model forced to fail, refine once,
/// and re-execute under the same fault. Responsiveness is 1 when the refined
/// plan passes that subtask.
#[allow(clippy::too_many_arguments)]
pub fn responsiveness_probe(
    task: &TaskSpec,
    plan: &PathPlan,
    failing: &str,
    pool: &ModelPool,
    weights: &PlannerWeights,
    memory: &mut MemoryStream,
    input: &[u8],
    now: TimestampMs,
) -> Result<ProbeOutcome, RuntimeError> {
    if !task.subtasks.contains_key(failing) {
        return Err(RuntimeError::UnknownSubtask(failing.to_string()));
    }
    if !plan.utility.feasible {
        return Err(PlanError::InfeasiblePlan.into());
    }
    let model = plan.assignment.get(failing).ok_or_else(|| RuntimeError::Unassigned(failing.to_string()))?;
    let fault = FailingAdapter { inner: MockAdapter, subtask: failing.to_string(), model: model.clone() };
    let first = execute_plan_with(plan, task, input, pool, &fault)?;
    let refined = refine_plan(plan, &first, task, pool, weights, memory, now)?;
    let second = execute_plan_with(&refined, task, input, pool, &fault)?;
    let responsiveness = if second.outcomes[failing].pass { 1.0 } else { 0.0 };
    Ok(ProbeOutcome { responsiveness, refined, first, second })
}
