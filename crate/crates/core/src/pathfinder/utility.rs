use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::registry::{ModelManifest, ModelRef};
use crate::workflow::{Subtask, TaskSpec};

/// Weights of the plan utility
///
/// `U = quality·Q − cost·(C / budget) − latency·(L / deadline)`
///
/// where a term whose limit is unset is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerWeights {
    pub quality: f64,
    pub cost: f64,
    pub latency: f64,
    pub beam_width: usize,
    /// Minimum improvement for a plan to replace an optimal-path record.
    pub record_epsilon: f64,
}

impl Default for PlannerWeights {
    fn default() -> Self {
        Self { quality: 1.0, cost: 0.25, latency: 0.25, beam_width: 8, record_epsilon: 1e-9 }
    }
}

impl PlannerWeights {
    pub fn validate(&self) -> Result<(), PlanError> {
        let w = [self.quality, self.cost, self.latency];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(PlanError::InvalidWeights("weights must be finite and non-negative".into()));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(PlanError::InvalidWeights("at least one weight must be positive".into()));
        }
        if self.beam_width == 0 {
            return Err(PlanError::InvalidWeights("beam_width must be at least 1".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { quality: self.quality * k, cost: self.cost * k, latency: self.latency * k, ..*self }
    }

    pub(crate) fn utility(&self, quality: f64, cost: u64, latency: u64, task: &TaskSpec) -> f64 {
        let mut u = self.quality * quality;
        if let Some(b) = task.budget {
            u -= self.cost * (cost as f64 / b as f64);
        }
        if let Some(d) = task.deadline_ms {
            u -= self.latency * (latency as f64 / d as f64);
        }
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityBreakdown {
    pub quality: f64,
    pub cost: u64,
    pub latency_ms: u64,
    pub utility: f64,
    pub feasible: bool,
}

/// Models available to a planning run, keyed and ordered by (name, version).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelPool {
    models: BTreeMap<ModelRef, ModelManifest>,
}

impl ModelPool {
    pub fn new(models: impl IntoIterator<Item = ModelManifest>) -> Self {
        Self { models: models.into_iter().map(|m| (m.model_ref(), m)).collect() }
    }

    pub fn get(&self, r: &ModelRef) -> Option<&ModelManifest> {
        self.models.get(r)
    }

    pub fn manifests(&self) -> impl Iterator<Item = &ModelManifest> {
        self.models.values()
    }

    pub fn refs(&self) -> impl Iterator<Item = &ModelRef> {
        self.models.keys()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Weakest-link match: the model's lowest capability over the subtask's tags.
pub fn match_quality(model: &ModelManifest, subtask: &Subtask) -> f64 {
    subtask
        .required_tags
        .iter()
        .map(|t| model.capability(t))
        .fold(f64::INFINITY, f64::min)
        .min(1.0)
}

pub fn is_feasible(cost: u64, latency: u64, task: &TaskSpec) -> bool {
    task.budget.is_none_or(|b| cost <= b) && task.deadline_ms.is_none_or(|d| latency <= d)
}

/// Score a complete assignment.
pub fn evaluate_plan(
    assignment: &BTreeMap<String, ModelRef>,
    task: &TaskSpec,
    pool: &ModelPool,
    weights: &PlannerWeights,
) -> Result<UtilityBreakdown, PlanError> {
    if task.subtasks.is_empty() {
        return Err(PlanError::EmptyTask);
    }
    if let Some(extra) = assignment.keys().find(|id| !task.subtasks.contains_key(*id)) {
        return Err(PlanError::IncompleteAssignment(extra.clone()));
    }
    let mut models = BTreeMap::new();
    for id in task.subtasks.keys() {
        let r = assignment.get(id).ok_or_else(|| PlanError::IncompleteAssignment(id.clone()))?;
        let m = pool.get(r).ok_or_else(|| PlanError::UnknownModel(r.clone()))?;
        models.insert(id.as_str(), m);
    }
    let quality_sum: f64 = task.subtasks.iter().map(|(id, s)| match_quality(models[id.as_str()], s)).sum();
    let quality = quality_sum / task.subtasks.len() as f64;
    let cost = models.values().map(|m| m.cost_per_call).sum();
    let latency_ms = task.longest_path(|id| models[id].latency_ms);
    Ok(UtilityBreakdown {
        quality,
        cost,
        latency_ms,
        utility: weights.utility(quality, cost, latency_ms, task),
        feasible: is_feasible(cost, latency_ms, task),
    })
}
