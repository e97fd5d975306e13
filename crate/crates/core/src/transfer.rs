//! Multi-stream fragment replication.
//!
//! The coordinator never touches fragment bytes: it sends PULL to each
//! destination node, which fetches the fragment from its source node in
//! ranged GETs. The returned checksum is compared with the catalog before the
//! new replica is registered.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{CatalogApi, CatalogError, ErrorCode, LogicalFileEntry, ReplicaLocation};
use crate::storage::{NodeClient, StorageError};

pub const DEFAULT_CHUNK_BYTES: u64 = 1 << 20;
const ATTEMPTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlannedTransfer {
    pub fragment_index: u32,
    pub source: ReplicaLocation,
    pub dest_node: String,
    pub size_bytes: u64,
    /// Checksum recorded in the catalog.
    pub crc32: u32,
    /// The destination already holds a replica.
    pub noop: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferPlan {
    pub lfn: String,
    pub assignments: Vec<PlannedTransfer>,
    pub n_streams: usize,
    pub chunk_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamResult {
    pub fragment_index: u32,
    pub source: String,
    pub dest: String,
    pub bytes: u64,
    pub seconds: f64,
    pub bps: f64,
    pub noop: bool,
    /// Why the fragment failed after its retry; `None` on success.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub lfn: String,
    pub per_stream: Vec<StreamResult>,
    pub total_bytes: u64,
    pub aggregate_bps: f64,
    pub wall_seconds: f64,
    pub verified: bool,
}

impl TransferReport {
    pub fn failed(&self) -> impl Iterator<Item = &StreamResult> {
        self.per_stream.iter().filter(|s| s.error.is_some())
    }
}

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("no destination nodes given")]
    NoDestination,
    #[error("unknown logical file {0:?}")]
    UnknownFile(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("catalog unreachable: {0}")]
    CatalogUnreachable(String),
    #[error("catalog: {0}")]
    Catalog(CatalogError),
    #[error("{} of {} fragment(s) failed", .0.failed().count(), .0.per_stream.len())]
    PartialFailure(Box<TransferReport>),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<CatalogError> for TransferError {
    fn from(e: CatalogError) -> Self {
        match e.code() {
            ErrorCode::Unreachable | ErrorCode::Io => TransferError::CatalogUnreachable(e.to_string()),
            ErrorCode::UnknownFile => TransferError::UnknownFile(e.to_string()),
            _ => TransferError::Catalog(e),
        }
    }
}

/// Fragment `i` goes to `dest_nodes[i % len]`. Each fragment's source is the
/// replica whose node has been picked least often so far (ties by node id);
/// fragments already on their destination become no-ops.
pub fn plan_replication(
    entry: &LogicalFileEntry,
    dest_nodes: &[String],
    n_streams: usize,
) -> Result<TransferPlan, TransferError> {
    if dest_nodes.is_empty() {
        return Err(TransferError::NoDestination);
    }
    let mut picked: BTreeMap<&str, usize> = BTreeMap::new();
    let mut assignments = Vec::with_capacity(entry.fragments.len());
    for frag in &entry.fragments {
        let dest = &dest_nodes[frag.index as usize % dest_nodes.len()];
        let (source, noop) = match frag.replicas.iter().find(|r| &r.node_id == dest) {
            Some(r) => (r.clone(), true),
            None => {
                let best = frag
                    .replicas
                    .iter()
                    .min_by(|a, b| {
                        let ka = picked.get(a.node_id.as_str()).copied().unwrap_or(0);
                        let kb = picked.get(b.node_id.as_str()).copied().unwrap_or(0);
                        ka.cmp(&kb).then_with(|| a.node_id.cmp(&b.node_id))
                    })
                    .ok_or_else(|| {
                        TransferError::Catalog(CatalogError::Protocol(format!(
                            "fragment {} has no replicas",
                            frag.index
                        )))
                    })?;
                *picked.entry(best.node_id.as_str()).or_insert(0) += 1;
                (best.clone(), false)
            }
        };
        assignments.push(PlannedTransfer {
            fragment_index: frag.index,
            source,
            dest_node: dest.clone(),
            size_bytes: frag.size_bytes,
            crc32: frag.crc32,
            noop,
        });
    }
    let n_streams = n_streams.clamp(1, assignments.len().max(1));
    Ok(TransferPlan { lfn: entry.lfn.clone(), assignments, n_streams, chunk_bytes: DEFAULT_CHUNK_BYTES })
}

/// Look up `lfn` and plan it.
pub fn plan_for(
    catalog: &dyn CatalogApi,
    lfn: &str,
    dest_nodes: &[String],
    n_streams: usize,
) -> Result<TransferPlan, TransferError> {
    let entry = catalog.lookup(lfn)?;
    plan_replication(&entry, dest_nodes, n_streams)
}

/// Pending work handed out so that concurrent streams prefer node pairs that
/// are not already busy.
struct Dispatch {
    pending: Vec<usize>,
    busy: BTreeSet<String>,
}

impl Dispatch {
    fn take(&mut self, plan: &TransferPlan) -> Option<usize> {
        if self.pending.is_empty() {
            return None;
        }
        let free = |i: &usize| {
            let a = &plan.assignments[*i];
            !self.busy.contains(&a.source.node_id) && !self.busy.contains(&a.dest_node)
        };
        let pos = self.pending.iter().position(free).unwrap_or(0);
        let i = self.pending.remove(pos);
        let a = &plan.assignments[i];
        self.busy.insert(a.source.node_id.clone());
        self.busy.insert(a.dest_node.clone());
        Some(i)
    }

    fn release(&mut self, a: &PlannedTransfer) {
        self.busy.remove(&a.source.node_id);
        self.busy.remove(&a.dest_node);
    }
}

struct Outcome {
    index: usize,
    start: Instant,
    end: Instant,
    bytes: u64,
    error: Option<String>,
}

fn pull_once(
    plan: &TransferPlan,
    a: &PlannedTransfer,
    src_addr: &str,
    dst_addr: &str,
    timeout: Duration,
) -> Result<(u64, String), String> {
    let mut dest = NodeClient::connect(dst_addr, timeout).map_err(|e| e.to_string())?;
    let receipt =
        dest.pull(&plan.lfn, a.fragment_index, src_addr, plan.chunk_bytes).map_err(|e| e.to_string())?;
    if receipt.crc32 != a.crc32 {
        return Err(format!("checksum mismatch: catalog {:08x}, arrived {:08x}", a.crc32, receipt.crc32));
    }
    if receipt.size_bytes != a.size_bytes {
        return Err(format!("size mismatch: catalog {}, arrived {}", a.size_bytes, receipt.size_bytes));
    }
    Ok((receipt.size_bytes, receipt.path))
}

fn noop_check(a: &PlannedTransfer, dst_addr: &str, plan: &TransferPlan, timeout: Duration) -> Option<String> {
    let crc = NodeClient::connect(dst_addr, timeout).and_then(|mut c| c.crc(&plan.lfn, a.fragment_index));
    match crc {
        Ok(c) if c == a.crc32 => None,
        Ok(c) => Some(format!("existing replica has crc {c:08x}, catalog {:08x}", a.crc32)),
        Err(e) => Some(e.to_string()),
    }
}

fn run_one(
    catalog: &dyn CatalogApi,
    plan: &TransferPlan,
    a: &PlannedTransfer,
    addrs: &BTreeMap<String, String>,
    timeout: Duration,
) -> (u64, Option<String>) {
    let dst_addr = &addrs[&a.dest_node];
    if a.noop {
        return (0, noop_check(a, dst_addr, plan, timeout));
    }
    let src_addr = &addrs[&a.source.node_id];
    let mut last = String::new();
    for attempt in 1..=ATTEMPTS {
        match pull_once(plan, a, src_addr, dst_addr, timeout) {
            Ok((bytes, path)) => {
                let loc = ReplicaLocation { node_id: a.dest_node.clone(), path, crc32: a.crc32 };
                return match catalog.add_replica(&plan.lfn, a.fragment_index, loc) {
                    Ok(_) => (bytes, None),
                    Err(e) => (0, Some(format!("register replica: {e}"))),
                };
            }
            Err(e) => {
                ::log::warn!("{} fragment {} -> {}: attempt {attempt}: {e}", plan.lfn, a.fragment_index, a.dest_node);
                last = e;
            }
        }
    }
    (0, Some(last))
}

/// Run the plan with up to `plan.n_streams` concurrent pulls.
pub fn execute(
    plan: &TransferPlan,
    catalog: &dyn CatalogApi,
    timeout: Duration,
) -> Result<TransferReport, TransferError> {
    let nodes = catalog.nodes()?;
    let addrs: BTreeMap<String, String> = nodes.into_iter().map(|n| (n.node_id, n.address)).collect();
    for a in &plan.assignments {
        for id in [&a.dest_node, &a.source.node_id] {
            if !addrs.contains_key(id) {
                return Err(TransferError::UnknownNode(id.clone()));
            }
        }
    }
    let dispatch = Mutex::new(Dispatch { pending: (0..plan.assignments.len()).collect(), busy: BTreeSet::new() });
    let outcomes = Mutex::new(Vec::with_capacity(plan.assignments.len()));
    let streams = plan.n_streams.clamp(1, plan.assignments.len().max(1));
    thread::scope(|s| {
        for _ in 0..streams {
            s.spawn(|| loop {
                let i = {
                    let mut d = dispatch.lock().unwrap_or_else(|e| e.into_inner());
                    match d.take(plan) {
                        Some(i) => i,
                        None => break,
                    }
                };
                let a = &plan.assignments[i];
                let start = Instant::now();
                let (bytes, error) = run_one(catalog, plan, a, &addrs, timeout);
                let end = Instant::now();
                outcomes.lock().unwrap_or_else(|e| e.into_inner()).push(Outcome { index: i, start, end, bytes, error });
                dispatch.lock().unwrap_or_else(|e| e.into_inner()).release(a);
            });
        }
    });
    let mut outcomes = outcomes.into_inner().unwrap_or_else(|e| e.into_inner());
    outcomes.sort_by_key(|o| o.index);
    let moved: Vec<&Outcome> = outcomes.iter().filter(|o| !plan.assignments[o.index].noop).collect();
    let wall_seconds = match (moved.iter().map(|o| o.start).min(), moved.iter().map(|o| o.end).max()) {
        (Some(s), Some(e)) => (e - s).as_secs_f64(),
        _ => 0.0,
    };
    let per_stream: Vec<StreamResult> = outcomes
        .iter()
        .map(|o| {
            let a = &plan.assignments[o.index];
            let seconds = if a.noop { 0.0 } else { (o.end - o.start).as_secs_f64() };
            StreamResult {
                fragment_index: a.fragment_index,
                source: a.source.node_id.clone(),
                dest: a.dest_node.clone(),
                bytes: o.bytes,
                seconds,
                bps: if seconds > 0.0 { o.bytes as f64 / seconds } else { 0.0 },
                noop: a.noop,
                error: o.error.clone(),
            }
        })
        .collect();
    let total_bytes = per_stream.iter().map(|s| s.bytes).sum();
    let verified = per_stream.iter().all(|s| s.error.is_none());
    let report = TransferReport {
        lfn: plan.lfn.clone(),
        per_stream,
        total_bytes,
        aggregate_bps: if wall_seconds > 0.0 { total_bytes as f64 / wall_seconds } else { 0.0 },
        wall_seconds,
        verified,
    };
    if verified {
        Ok(report)
    } else {
        Err(TransferError::PartialFailure(Box::new(report)))
    }
}

/// True iff every fragment has a catalogued replica on one of `node_set`
/// whose bytes, checksummed by the node now, match the catalog.
pub fn verify(
    catalog: &dyn CatalogApi,
    lfn: &str,
    node_set: &[String],
    timeout: Duration,
) -> Result<bool, TransferError> {
    let entry = catalog.lookup(lfn)?;
    let addrs: BTreeMap<String, String> =
        catalog.nodes()?.into_iter().map(|n| (n.node_id, n.address)).collect();
    let mut clients: BTreeMap<&str, Option<NodeClient>> = BTreeMap::new();
    for frag in &entry.fragments {
        let mut ok = false;
        for r in frag.replicas.iter().filter(|r| node_set.contains(&r.node_id)) {
            let client = clients.entry(r.node_id.as_str()).or_insert_with(|| {
                addrs.get(&r.node_id).and_then(|a| NodeClient::connect(a, timeout).ok())
            });
            let Some(c) = client.as_mut() else { continue };
            match c.crc(lfn, frag.index) {
                Ok(crc) if crc == frag.crc32 => {
                    ok = true;
                    break;
                }
                Ok(_) | Err(StorageError::NotFound(_)) => {}
                Err(e) => {
                    ::log::debug!("verify {lfn}[{}] on {}: {e}", frag.index, r.node_id);
                    // The connection may be unusable after a transport error.
                    *client = None;
                }
            }
        }
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// CSV with one row per fragment and a final `aggregate` row.
pub fn write_csv<W: Write>(report: &TransferReport, sink: W) -> Result<(), TransferError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["fragment", "source", "dest", "bytes", "seconds", "bps"])?;
    for s in &report.per_stream {
        w.write_record([
            s.fragment_index.to_string(),
            s.source.clone(),
            s.dest.clone(),
            s.bytes.to_string(),
            format!("{:.6}", s.seconds),
            format!("{:.1}", s.bps),
        ])?;
    }
    w.write_record([
        "aggregate".to_owned(),
        String::new(),
        String::new(),
        report.total_bytes.to_string(),
        format!("{:.6}", report.wall_seconds),
        format!("{:.1}", report.aggregate_bps),
    ])?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
