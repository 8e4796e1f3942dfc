//! Model-assignment search: exhaustive enumeration and beam search.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::utility::{evaluate_plan, is_feasible, match_quality, ModelPool, PlannerWeights, UtilityBreakdown};
use super::PlanError;
use crate::digest::Digest;
use crate::registry::{ModelManifest, ModelRef};
use crate::workflow::TaskSpec;

/// Upper limit on assignments the exhaustive search will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathPlan {
    pub task_hash: Digest,
    pub assignment: BTreeMap<String, ModelRef>,
    pub rationale: BTreeMap<String, String>,
    pub utility: UtilityBreakdown,
}

/// Per-subtask limits on which models may be chosen.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Restrictions {
    /// When present for a subtask, only these models are candidates.
    pub allowed: BTreeMap<String, BTreeSet<ModelRef>>,
    pub excluded: BTreeSet<(String, ModelRef)>,
}

impl Restrictions {
    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty() && self.excluded.is_empty()
    }

    pub fn pin(&mut self, subtask: &str, model: ModelRef) {
        self.allowed.insert(subtask.to_string(), BTreeSet::from([model]));
    }

    pub fn exclude(&mut self, subtask: &str, model: ModelRef) {
        self.excluded.insert((subtask.to_string(), model));
    }
}

fn candidates<'p>(
    task: &TaskSpec,
    pool: &'p ModelPool,
    restrictions: &Restrictions,
) -> Result<BTreeMap<String, Vec<&'p ModelManifest>>, PlanError> {
    let mut out = BTreeMap::new();
    for id in task.subtasks.keys() {
        let list: Vec<&ModelManifest> = pool
            .manifests()
            .filter(|m| {
                let r = m.model_ref();
                restrictions.allowed.get(id).is_none_or(|a| a.contains(&r))
                    && !restrictions.excluded.contains(&(id.clone(), r))
            })
            .collect();
        if list.is_empty() {
            return Err(PlanError::NoCandidates(id.clone()));
        }
        out.insert(id.clone(), list);
    }
    Ok(out)
}

fn rationale_for(task: &TaskSpec, pool: &ModelPool, assignment: &BTreeMap<String, ModelRef>) -> BTreeMap<String, String> {
    assignment
        .iter()
        .map(|(id, r)| {
            let m = pool.get(r).expect("assigned from pool");
            let q = match_quality(m, &task.subtasks[id]);
            (id.clone(), format!("chose {r} match {q:.4} cost {}", m.cost_per_call))
        })
        .collect()
}

fn finish(task: &TaskSpec, pool: &ModelPool, assignment: BTreeMap<String, ModelRef>, utility: UtilityBreakdown) -> PathPlan {
    PathPlan {
        task_hash: task.task_hash,
        rationale: rationale_for(task, pool, &assignment),
        assignment,
        utility,
    }
}

/// Feasible beats infeasible, then higher utility; equal candidates keep
/// whichever came first in enumeration order.
fn better(a: &UtilityBreakdown, b: &UtilityBreakdown) -> bool {
    match (a.feasible, b.feasible) {
        (true, false) => true,
        (false, true) => false,
        _ => a.utility > b.utility,
    }
}

/// Enumerate every assignment. Ties go to the lexicographically smallest
/// assignment vector (subtasks by id, models by name then version).
pub fn brute_force_plan(task: &TaskSpec, pool: &ModelPool, weights: &PlannerWeights) -> Result<PathPlan, PlanError> {
    weights.validate()?;
    if pool.is_empty() {
        return Err(PlanError::EmptyPool);
    }
    if task.subtasks.is_empty() {
        return Err(PlanError::EmptyTask);
    }
    let combinations = (pool.len() as u128).checked_pow(task.subtasks.len() as u32).unwrap_or(u128::MAX);
    if combinations > BRUTE_FORCE_LIMIT {
        return Err(PlanError::TooLarge { combinations });
    }
    let ids: Vec<&String> = task.subtasks.keys().collect();
    let refs: Vec<&ModelRef> = pool.refs().collect();
    let mut digits = vec![0usize; ids.len()];
    let mut best: Option<(BTreeMap<String, ModelRef>, UtilityBreakdown)> = None;
    loop {
        let assignment: BTreeMap<String, ModelRef> =
            ids.iter().zip(&digits).map(|(id, &d)| ((*id).clone(), refs[d].clone())).collect();
        let u = evaluate_plan(&assignment, task, pool, weights)?;
        if best.as_ref().is_none_or(|(_, b)| better(&u, b)) {
            best = Some((assignment, u));
        }
        // Odometer with the last subtask id as the fastest digit, which walks
        // assignments in lexicographic order.
        let mut pos = ids.len();
        loop {
            if pos == 0 {
                let (a, u) = best.expect("at least one assignment");
                return Ok(finish(task, pool, a, u));
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < refs.len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}

struct State {
    /// Candidate index per subtask, aligned with the topological order.
    picks: Vec<usize>,
    quality_sum: f64,
    cost: u64,
    /// Finish time per assigned subtask, aligned with `picks`.
    finish: Vec<u64>,
}

struct Scored {
    state: State,
    can_be_feasible: bool,
    bound: f64,
    /// Model refs ordered by subtask id, for tie-breaking.
    key: Vec<ModelRef>,
}

/// Beam search over subtasks in topological order.
///
/// Partial assignments are ranked by an optimistic completion (every
/// unassigned subtask matched perfectly at zero cost and latency), which
/// never underestimates the utility of any completion. The `beam_width` best
/// survive each depth; the final depth is evaluated exactly. With a beam at
/// least as wide as the number of assignments this is exhaustive and agrees
/// with [`brute_force_plan`].
pub fn plan(task: &TaskSpec, pool: &ModelPool, weights: &PlannerWeights) -> Result<PathPlan, PlanError> {
    plan_with(task, pool, weights, &Restrictions::default())
}

pub fn plan_with(
    task: &TaskSpec,
    pool: &ModelPool,
    weights: &PlannerWeights,
    restrictions: &Restrictions,
) -> Result<PathPlan, PlanError> {
    weights.validate()?;
    if pool.is_empty() {
        return Err(PlanError::EmptyPool);
    }
    if task.subtasks.is_empty() {
        return Err(PlanError::EmptyTask);
    }
    let cands = candidates(task, pool, restrictions)?;
    let order = task.topo_order();
    let n = order.len();
    let position: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let prereqs: Vec<Vec<usize>> =
        order.iter().map(|id| task.prerequisites(id).iter().map(|p| position[p]).collect()).collect();
    let quality: Vec<Vec<f64>> = order
        .iter()
        .map(|id| cands[id].iter().map(|m| match_quality(m, &task.subtasks[id])).collect())
        .collect();
    // Subtask ids sorted, each with its index in `order`.
    let by_id: Vec<usize> = cands.keys().map(|id| position[id.as_str()]).collect();

    let mut beam = vec![State { picks: vec![], quality_sum: 0.0, cost: 0, finish: vec![] }];
    for depth in 0..n {
        let id = &order[depth];
        let mut next = Vec::with_capacity(beam.len() * cands[id].len());
        for s in &beam {
            for (c, m) in cands[id].iter().enumerate() {
                let start = prereqs[depth].iter().map(|&p| s.finish[p]).max().unwrap_or(0);
                let mut picks = s.picks.clone();
                picks.push(c);
                let mut finish = s.finish.clone();
                finish.push(start + m.latency_ms);
                next.push(State {
                    picks,
                    quality_sum: s.quality_sum + quality[depth][c],
                    cost: s.cost + m.cost_per_call,
                    finish,
                });
            }
        }
        if depth + 1 == n {
            beam = next;
            break;
        }
        let unassigned = (n - depth - 1) as f64;
        let mut scored: Vec<Scored> = next
            .into_iter()
            .map(|state| {
                // Unassigned subtasks contribute zero latency, so the longest
                // path so far is the largest finish time.
                let latency = state.finish.iter().copied().max().unwrap_or(0);
                let q = (state.quality_sum + unassigned) / n as f64;
                let key = by_id
                    .iter()
                    .filter(|&&i| i < state.picks.len())
                    .map(|&i| cands[&order[i]][state.picks[i]].model_ref())
                    .collect();
                Scored {
                    can_be_feasible: is_feasible(state.cost, latency, task),
                    bound: weights.utility(q, state.cost, latency, task),
                    key,
                    state,
                }
            })
            .collect();
        scored.sort_by(|a, b| {
            b.can_be_feasible
                .cmp(&a.can_be_feasible)
                .then(b.bound.partial_cmp(&a.bound).unwrap_or(Ordering::Equal))
                .then_with(|| a.key.cmp(&b.key))
        });
        scored.truncate(weights.beam_width);
        beam = scored.into_iter().map(|s| s.state).collect();
    }

    let mut complete: Vec<(BTreeMap<String, ModelRef>, UtilityBreakdown)> = beam
        .iter()
        .map(|s| {
            let assignment: BTreeMap<String, ModelRef> = order
                .iter()
                .zip(&s.picks)
                .map(|(id, &c)| (id.clone(), cands[id][c].model_ref()))
                .collect();
            let u = evaluate_plan(&assignment, task, pool, weights).expect("assignment drawn from pool");
            (assignment, u)
        })
        .collect();
    complete.sort_by(|a, b| a.0.cmp(&b.0));
    let mut best = 0;
    for i in 1..complete.len() {
        if better(&complete[i].1, &complete[best].1) {
            best = i;
        }
    }
    let (assignment, utility) = complete.swap_remove(best);
    Ok(finish(task, pool, assignment, utility))
}
