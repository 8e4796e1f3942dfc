use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canonical::canonical_digest;
use crate::digest::Digest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subtask {
    pub required_tags: BTreeSet<String>,
    pub difficulty: f64,
    #[serde(default)]
    pub novel: bool,
}

impl Subtask {
    pub fn new(tags: &[&str], difficulty: f64) -> Self {
        Subtask { required_tags: tags.iter().map(|t| t.to_string()).collect(), difficulty, novel: false }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error("dependency references unknown subtask {0:?}")]
    UnknownSubtask(String),
    #[error("dependencies form a cycle")]
    Cycle,
    #[error("subtask {0:?} has no required tags")]
    NoRequirements(String),
    #[error("subtask {0:?} difficulty must be in [0, 1]")]
    Difficulty(String),
    #[error("budget and deadline must be positive when set")]
    ZeroLimit,
    #[error("task_hash does not match content")]
    HashMismatch,
}

/// A DAG of subtasks with optional cost and latency limits.
///
/// `task_hash` is derived from every other field and is checked whenever a
/// task is deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskDocument")]
pub struct TaskSpec {
    pub subtasks: BTreeMap<String, Subtask>,
    pub deps: BTreeSet<(String, String)>,
    pub budget: Option<u64>,
    pub deadline_ms: Option<u64>,
    pub task_hash: Digest,
}

#[derive(Serialize)]
struct HashedContent<'a> {
    subtasks: &'a BTreeMap<String, Subtask>,
    deps: &'a BTreeSet<(String, String)>,
    budget: Option<u64>,
    deadline_ms: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskDocument {
    subtasks: BTreeMap<String, Subtask>,
    deps: BTreeSet<(String, String)>,
    budget: Option<u64>,
    deadline_ms: Option<u64>,
    task_hash: Digest,
}

impl TryFrom<TaskDocument> for TaskSpec {
    type Error = TaskError;

    fn try_from(d: TaskDocument) -> Result<Self, TaskError> {
        let t = TaskSpec::new(d.subtasks, d.deps, d.budget, d.deadline_ms)?;
        if t.task_hash != d.task_hash {
            return Err(TaskError::HashMismatch);
        }
        Ok(t)
    }
}

impl TaskSpec {
    pub fn new(
        subtasks: BTreeMap<String, Subtask>,
        deps: BTreeSet<(String, String)>,
        budget: Option<u64>,
        deadline_ms: Option<u64>,
    ) -> Result<Self, TaskError> {
        if budget == Some(0) || deadline_ms == Some(0) {
            return Err(TaskError::ZeroLimit);
        }
        for (id, s) in &subtasks {
            if s.required_tags.is_empty() {
                return Err(TaskError::NoRequirements(id.clone()));
            }
            if !(0.0..=1.0).contains(&s.difficulty) {
                return Err(TaskError::Difficulty(id.clone()));
            }
        }
        for (a, b) in &deps {
            for id in [a, b] {
                if !subtasks.contains_key(id) {
                    return Err(TaskError::UnknownSubtask(id.clone()));
                }
            }
        }
        let mut t = TaskSpec { subtasks, deps, budget, deadline_ms, task_hash: Digest::ZERO };
        if t.topo_order().len() != t.subtasks.len() {
            return Err(TaskError::Cycle);
        }
        t.task_hash = t.compute_hash();
        Ok(t)
    }

    fn compute_hash(&self) -> Digest {
        canonical_digest(&HashedContent {
            subtasks: &self.subtasks,
            deps: &self.deps,
            budget: self.budget,
            deadline_ms: self.deadline_ms,
        })
    }

    pub fn verify_hash(&self) -> bool {
        self.compute_hash() == self.task_hash
    }

    /// The same task with different limits (and therefore a different hash).
    pub fn with_limits(&self, budget: Option<u64>, deadline_ms: Option<u64>) -> Result<Self, TaskError> {
        TaskSpec::new(self.subtasks.clone(), self.deps.clone(), budget, deadline_ms)
    }

    /// Kahn's algorithm, always releasing the smallest ready id first. Shorter
    /// than `subtasks` iff the dependencies are cyclic.
    pub fn topo_order(&self) -> Vec<String> {
        let mut indegree: BTreeMap<&str, usize> = self.subtasks.keys().map(|k| (k.as_str(), 0)).collect();
        for (_, b) in &self.deps {
            *indegree.get_mut(b.as_str()).expect("checked") += 1;
        }
        let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
        let mut order = Vec::with_capacity(self.subtasks.len());
        while let Some(n) = ready.pop_first() {
            order.push(n.to_string());
            for (_, b) in self.deps.range((n.to_string(), String::new())..).take_while(|(a, _)| a == n) {
                let d = indegree.get_mut(b.as_str()).expect("checked");
                *d -= 1;
                if *d == 0 {
                    ready.insert(b.as_str());
                }
            }
        }
        order
    }

    /// Direct prerequisites of `id`, sorted by id.
    pub fn prerequisites(&self, id: &str) -> Vec<&str> {
        self.deps.iter().filter(|(_, b)| b == id).map(|(a, _)| a.as_str()).collect()
    }

    /// Heaviest path through the DAG where each subtask weighs `weight(id)`.
    pub fn longest_path(&self, weight: impl Fn(&str) -> u64) -> u64 {
        let mut finish: BTreeMap<String, u64> = BTreeMap::new();
        for id in self.topo_order() {
            let start = self.prerequisites(&id).iter().map(|p| finish[*p]).max().unwrap_or(0);
            let w = weight(&id);
            finish.insert(id, start + w);
        }
        finish.into_values().max().unwrap_or(0)
    }

    /// Every maximal dependency chain: paths from a subtask with no
    /// prerequisites to one with no dependents.
    pub fn maximal_chains(&self) -> Vec<Vec<String>> {
        let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &self.deps {
            succ.entry(a.as_str()).or_default().push(b.as_str());
        }
        let mut chains = Vec::new();
        let roots = self.subtasks.keys().filter(|id| self.prerequisites(id).is_empty());
        for root in roots {
            let mut stack = vec![vec![root.as_str()]];
            while let Some(path) = stack.pop() {
                let last = *path.last().expect("non-empty path");
                match succ.get(last) {
                    None => chains.push(path.iter().map(|s| s.to_string()).collect()),
                    Some(next) => {
                        for n in next.iter().rev() {
                            let mut p = path.clone();
                            p.push(n);
                            stack.push(p);
                        }
                    }
                }
            }
        }
        chains
    }
}
