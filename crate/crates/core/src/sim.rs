//! Discrete-time simulation of a pool of GPU nodes working through a job
//! queue, metering GPU-seconds per owner.
//!
//! Each one-second tick hands every idle GPU to the oldest pending job that
//! still needs work (FIFO by submission tick, then job id). Jobs are
//! divisible, so one job may hold GPUs on many nodes at once.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clock::TimestampMs;
use crate::registry::ModelRef;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimNode {
    pub id: String,
    pub owner: String,
    pub gpu_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimJob {
    pub id: String,
    pub submitter: String,
    pub model: ModelRef,
    pub gpu_seconds_required: u64,
    #[serde(default)]
    pub submitted_at_tick: u64,
}

/// A simulation config document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub nodes: Vec<SimNode>,
    pub jobs: Vec<SimJob>,
    pub max_ticks: u64,
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }

    pub fn run(&self) -> Result<SimReport, SimError> {
        run_simulation(&self.nodes, &self.jobs, self.max_ticks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimReport {
    pub makespan_ticks: u64,
    /// GPU-seconds supplied by each owner.
    pub contributions: BTreeMap<String, u64>,
    /// GPU-seconds each owner supplied to each job.
    pub job_contributions: BTreeMap<String, BTreeMap<String, u64>>,
    /// Tick at whose start each finished job was complete.
    pub completion: BTreeMap<String, u64>,
    pub utilization: f64,
}

impl SimReport {
    pub fn busy_gpu_seconds(&self) -> u64 {
        self.contributions.values().sum()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("jobs unfinished after the tick limit: {}", job_ids.join(", "))]
    Unfinished { job_ids: Vec<String>, report: Box<SimReport> },
    #[error("ledger unavailable: {0}")]
    LedgerUnavailable(String),
}

fn check(nodes: &[SimNode], jobs: &[SimJob]) -> Result<(), SimError> {
    if nodes.is_empty() {
        return Err(SimError::InvalidConfig("at least one node is required".into()));
    }
    let mut ids = BTreeSet::new();
    for n in nodes {
        if n.gpu_count == 0 {
            return Err(SimError::InvalidConfig(format!("node {} has no GPUs", n.id)));
        }
        if n.owner.is_empty() || !ids.insert(&n.id) {
            return Err(SimError::InvalidConfig(format!("node {:?} is unowned or listed twice", n.id)));
        }
    }
    let mut ids = BTreeSet::new();
    for j in jobs {
        if j.gpu_seconds_required == 0 {
            return Err(SimError::InvalidConfig(format!("job {} requires no work", j.id)));
        }
        if !ids.insert(&j.id) {
            return Err(SimError::InvalidConfig(format!("job {:?} listed twice", j.id)));
        }
    }
    Ok(())
}

/// Owners of every GPU in node-id order, run-length encoded.
fn gpu_runs(nodes: &[SimNode]) -> Vec<(&str, u64)> {
    let mut sorted: Vec<&SimNode> = nodes.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    sorted.iter().map(|n| (n.owner.as_str(), n.gpu_count as u64)).collect()
}

/// Between arrivals and completions the assignment does not change, so the
/// loop advances over whole stretches of identical ticks at once.
pub fn run_simulation(nodes: &[SimNode], jobs: &[SimJob], max_ticks: u64) -> Result<SimReport, SimError> {
    check(nodes, jobs)?;
    let runs = gpu_runs(nodes);
    let total_gpus: u64 = runs.iter().map(|r| r.1).sum();

    let mut queue: Vec<&SimJob> = jobs.iter().collect();
    queue.sort_by(|a, b| a.submitted_at_tick.cmp(&b.submitted_at_tick).then(a.id.cmp(&b.id)));
    let mut remaining: Vec<u64> = queue.iter().map(|j| j.gpu_seconds_required).collect();

    let mut contributions: BTreeMap<String, u64> = BTreeMap::new();
    let mut job_contributions: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut completion = BTreeMap::new();
    let mut t = 0u64;
    let mut last_completion = 0u64;

    while t < max_ticks && completion.len() < queue.len() {
        let pending: Vec<usize> =
            (0..queue.len()).filter(|&i| remaining[i] > 0 && queue[i].submitted_at_tick <= t).collect();
        let next_arrival = queue.iter().map(|j| j.submitted_at_tick).filter(|&s| s > t).min();
        if pending.is_empty() {
            match next_arrival {
                Some(s) => {
                    t = s.min(max_ticks);
                    continue;
                }
                None => break,
            }
        }

        // FIFO fill: each job takes as many GPUs as it can still use.
        let mut free = total_gpus;
        let mut alloc: Vec<(usize, u64)> = Vec::new();
        for &i in &pending {
            if free == 0 {
                break;
            }
            let a = remaining[i].min(free);
            alloc.push((i, a));
            free -= a;
        }
        let mut span = alloc.iter().map(|&(i, a)| remaining[i] / a).min().expect("some job is allocated");
        if let Some(s) = next_arrival {
            span = span.min(s - t);
        }
        span = span.min(max_ticks - t);

        let mut runs_iter = runs.iter().copied();
        let mut cur = runs_iter.next();
        for &(i, mut a) in &alloc {
            let per_job = job_contributions.entry(queue[i].id.clone()).or_default();
            while a > 0 {
                let (owner, left) = cur.as_mut().expect("allocation fits the pool");
                let take = a.min(*left);
                *per_job.entry(owner.to_string()).or_default() += take * span;
                *contributions.entry(owner.to_string()).or_default() += take * span;
                a -= take;
                *left -= take;
                if *left == 0 {
                    cur = runs_iter.next();
                }
            }
        }
        t += span;
        for &(i, a) in &alloc {
            remaining[i] -= a * span;
            if remaining[i] == 0 {
                completion.insert(queue[i].id.clone(), t);
                last_completion = t;
            }
        }
    }

    let unfinished: Vec<String> =
        queue.iter().zip(&remaining).filter(|(_, r)| **r > 0).map(|(j, _)| j.id.clone()).collect();
    let makespan_ticks = if unfinished.is_empty() { last_completion } else { max_ticks };
    let busy: u64 = contributions.values().sum();
    let utilization = if makespan_ticks == 0 { 0.0 } else { busy as f64 / (total_gpus * makespan_ticks) as f64 };
    let report = SimReport { makespan_ticks, contributions, job_contributions, completion, utilization };
    if unfinished.is_empty() {
        Ok(report)
    } else {
        Err(SimError::Unfinished { job_ids: unfinished, report: Box::new(report) })
    }
}

/// Something that can record a provider's GPU-seconds, such as a ledger.
pub trait ContributionSink {
    /// Returns the id of the stored record.
    fn post_contribution(&mut self, provider: &str, gpu_seconds: u64, source: &str, now: TimestampMs)
        -> Result<u64, String>;
}

/// One record per owner with positive GPU-seconds, in account-id order.
pub fn post_contributions(
    report: &SimReport,
    sink: &mut dyn ContributionSink,
    source: &str,
    now: TimestampMs,
) -> Result<Vec<u64>, SimError> {
    report
        .contributions
        .iter()
        .filter(|(_, s)| **s > 0)
        .map(|(owner, s)| sink.post_contribution(owner, *s, source, now).map_err(SimError::LedgerUnavailable))
        .collect()
}
