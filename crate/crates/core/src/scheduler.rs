//! File-affinity task placement and barrier-model throughput analysis.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{LogicalFileEntry, NodeInfo, NodeStatus};

pub const DEFAULT_STRAGGLER_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: u64,
    pub lfn: String,
    pub fragment_index: u32,
    pub est_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locality {
    Local,
    Remote,
}

impl fmt::Display for Locality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Locality::Local => "local",
            Locality::Remote => "remote",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub task_id: u64,
    pub node_id: String,
    pub locality: Locality,
}

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("no storage node is up")]
    NoNodesAvailable,
    #[error("task {task_id}: {lfn} has no fragment {index}")]
    UnknownFragment { task_id: u64, lfn: String, index: u32 },
    #[error("node {0} has no positive rate")]
    ZeroRate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Place tasks in order. A task goes to the least-loaded up node holding a
/// replica of its fragment; if none is up, to the least-loaded up node
/// overall. Load is the sum of assigned `est_bytes`; ties go to the smaller
/// node id.
pub fn assign(
    tasks: &[Task],
    files: &[LogicalFileEntry],
    nodes: &[NodeInfo],
) -> Result<Vec<Assignment>, SchedulerError> {
    let mut load: BTreeMap<&str, u64> =
        nodes.iter().filter(|n| n.status == NodeStatus::Up).map(|n| (n.node_id.as_str(), 0)).collect();
    if load.is_empty() {
        return Err(SchedulerError::NoNodesAvailable);
    }
    let by_name: BTreeMap<&str, &LogicalFileEntry> = files.iter().map(|f| (f.lfn.as_str(), f)).collect();
    let mut out = Vec::with_capacity(tasks.len());
    for t in tasks {
        let frag = by_name.get(t.lfn.as_str()).and_then(|f| f.fragment(t.fragment_index)).ok_or_else(|| {
            SchedulerError::UnknownFragment { task_id: t.task_id, lfn: t.lfn.clone(), index: t.fragment_index }
        })?;
        // BTreeMap iteration is in node-id order, so min_by_key keeps the
        // smallest id among equal loads.
        let local = load
            .iter()
            .filter(|(id, _)| frag.has_replica_on(id))
            .min_by_key(|(_, &l)| l)
            .map(|(&id, _)| id);
        let (node, locality) = match local {
            Some(id) => (id, Locality::Local),
            None => (load.iter().min_by_key(|(_, &l)| l).map(|(&id, _)| id).unwrap(), Locality::Remote),
        };
        *load.get_mut(node).unwrap() += t.est_bytes;
        out.push(Assignment { task_id: t.task_id, node_id: node.to_owned(), locality });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub wall_seconds: f64,
    pub aggregate_bps: f64,
}

/// Barrier model: every node streams its bytes at its own rate and the run
/// ends when the slowest finishes.
pub fn predict_from_loads(
    bytes_per_node: &BTreeMap<String, u64>,
    node_rates: &BTreeMap<String, f64>,
) -> Result<Prediction, SchedulerError> {
    let mut wall = 0f64;
    let mut total = 0u64;
    for (node, &bytes) in bytes_per_node {
        let rate = node_rates.get(node).copied().unwrap_or(0.0);
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(SchedulerError::ZeroRate(node.clone()));
        }
        wall = wall.max(bytes as f64 / rate);
        total += bytes;
    }
    let aggregate_bps = if wall > 0.0 { total as f64 / wall } else { 0.0 };
    Ok(Prediction { wall_seconds: wall, aggregate_bps })
}

pub fn predict_completion(
    tasks: &[Task],
    assignments: &[Assignment],
    node_rates: &BTreeMap<String, f64>,
) -> Result<Prediction, SchedulerError> {
    let bytes: BTreeMap<u64, u64> = tasks.iter().map(|t| (t.task_id, t.est_bytes)).collect();
    let mut per_node = BTreeMap::new();
    for a in assignments {
        let b = bytes.get(&a.task_id).copied().ok_or_else(|| {
            SchedulerError::InvalidArgument(format!("assignment for unknown task {}", a.task_id))
        })?;
        *per_node.entry(a.node_id.clone()).or_insert(0) += b;
    }
    predict_from_loads(&per_node, node_rates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResult {
    pub node_id: String,
    pub bytes: u64,
    pub seconds: f64,
    pub bps: f64,
}

impl NodeResult {
    pub fn new(node_id: impl Into<String>, bytes: u64, seconds: f64) -> Self {
        let bps = if seconds > 0.0 { bytes as f64 / seconds } else { 0.0 };
        NodeResult { node_id: node_id.into(), bytes, seconds, bps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StragglerReport {
    pub per_node: Vec<NodeResult>,
    pub median_bps: f64,
    pub stragglers: Vec<String>,
    pub threshold_fraction: f64,
}

impl StragglerReport {
    pub fn is_straggler(&self, node_id: &str) -> bool {
        self.stragglers.iter().any(|s| s == node_id)
    }
}

/// Median; even counts average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Flag nodes whose rate is below `threshold_fraction` of the median rate.
pub fn detect_stragglers(
    per_node: &[NodeResult],
    threshold_fraction: f64,
) -> Result<StragglerReport, SchedulerError> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(SchedulerError::InvalidArgument(format!("threshold {threshold_fraction} not in (0, 1)")));
    }
    let rates: Vec<f64> = per_node.iter().map(|r| r.bps).collect();
    let median_bps =
        median(&rates).ok_or_else(|| SchedulerError::InvalidArgument("no node results".into()))?;
    let cut = threshold_fraction * median_bps;
    let stragglers = per_node.iter().filter(|r| r.bps < cut).map(|r| r.node_id.clone()).collect();
    Ok(StragglerReport { per_node: per_node.to_vec(), median_bps, stragglers, threshold_fraction })
}

/// Task list text: one `task_id lfn fragment_index est_bytes` per line;
/// blank lines and `#` comments ignored.
pub fn parse_tasks(text: &str) -> Result<Vec<Task>, String> {
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = t.split_whitespace().collect();
        let bad = |what: &str| format!("line {}: {what}: {t:?}", i + 1);
        if f.len() != 4 {
            return Err(bad("expected `task_id lfn fragment_index est_bytes`"));
        }
        tasks.push(Task {
            task_id: f[0].parse().map_err(|_| bad("bad task_id"))?,
            lfn: f[1].to_owned(),
            fragment_index: f[2].parse().map_err(|_| bad("bad fragment_index"))?,
            est_bytes: f[3].parse().map_err(|_| bad("bad est_bytes"))?,
        });
    }
    Ok(tasks)
}

/// One `task_id node_id locality` line per assignment.
pub fn format_assignments(assignments: &[Assignment]) -> String {
    assignments.iter().map(|a| format!("{} {} {}\n", a.task_id, a.node_id, a.locality)).collect()
}
