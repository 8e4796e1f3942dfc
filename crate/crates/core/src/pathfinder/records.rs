//! Per-task optimal-path records. A record only moves when a feasible plan
//! beats it by more than the configured epsilon.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::search::PathPlan;
use super::PlanError;
use crate::canonical::to_canonical_string;
use crate::clock::TimestampMs;
use crate::digest::Digest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimalPathRecord {
    pub task_hash: Digest,
    pub best_utility: f64,
    pub holder_plan: PathPlan,
    pub set_at: TimestampMs,
    pub submitter: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakthroughEvent {
    pub task_hash: Digest,
    pub old_utility: Option<f64>,
    pub new_utility: f64,
    pub submitter: String,
    pub at: TimestampMs,
}

#[derive(Debug)]
pub struct PathRecords {
    epsilon: f64,
    history: BTreeMap<Digest, Vec<OptimalPathRecord>>,
    log: Option<PathBuf>,
}

impl PathRecords {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, history: BTreeMap::new(), log: None }
    }

    /// Records persisted as one canonical document per line at `path`.
    pub fn open(path: impl AsRef<Path>, epsilon: f64) -> Result<Self, PlanError> {
        let path = path.as_ref().to_path_buf();
        let mut rec = Self::new(epsilon);
        if path.exists() {
            for (i, line) in fs::read_to_string(&path)?.lines().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let r: OptimalPathRecord = serde_json::from_str(line)
                    .map_err(|e| PlanError::Corrupt(format!("{} line {}: {e}", path.display(), i + 1)))?;
                rec.history.entry(r.task_hash).or_default().push(r);
            }
        }
        rec.log = Some(path);
        Ok(rec)
    }

    pub fn best(&self, task_hash: &Digest) -> Option<&OptimalPathRecord> {
        self.history.get(task_hash).and_then(|v| v.last())
    }

    pub fn history(&self, task_hash: &Digest) -> &[OptimalPathRecord] {
        self.history.get(task_hash).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn record_if_best(
        &mut self,
        plan: &PathPlan,
        submitter: &str,
        now: TimestampMs,
    ) -> Result<Option<BreakthroughEvent>, PlanError> {
        if !plan.utility.feasible {
            return Err(PlanError::InfeasiblePlan);
        }
        let new_utility = plan.utility.utility;
        let old_utility = self.best(&plan.task_hash).map(|r| r.best_utility);
        if old_utility.is_some_and(|old| new_utility <= old + self.epsilon) {
            return Ok(None);
        }
        let record = OptimalPathRecord {
            task_hash: plan.task_hash,
            best_utility: new_utility,
            holder_plan: plan.clone(),
            set_at: now,
            submitter: submitter.to_string(),
        };
        if let Some(path) = &self.log {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", to_canonical_string(&record))?;
        }
        self.history.entry(plan.task_hash).or_default().push(record);
        Ok(Some(BreakthroughEvent {
            task_hash: plan.task_hash,
            old_utility,
            new_utility,
            submitter: submitter.to_string(),
            at: now,
        }))
    }
}
