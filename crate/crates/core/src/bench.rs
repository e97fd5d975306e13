//! Parallel write/read throughput benchmark over storage nodes.
//!
//! Every node gets one worker. Workers prepare their data, meet at a barrier,
//! run the timed transfer, meet again, then do any CPU-heavy checking. The
//! aggregate is total bytes over the span from the first start to the last
//! finish.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    CatalogApi, CatalogClient, CatalogError, CatalogServer, Catalog, ErrorCode, FragmentMeta, NodeInfo, NodeStatus,
};
use crate::eventio::{
    compression_factor, Codec, EventFileStats, EventIoError, EventReader, EventWriter, SyntheticEvents,
    DEFAULT_COLLECTION,
};
use crate::scheduler::{
    self, detect_stragglers, predict_from_loads, Locality, NodeResult, Prediction, SchedulerError, StragglerReport,
    Task, DEFAULT_STRAGGLER_THRESHOLD,
};
use crate::storage::{FragmentStore, NodeClient, NodeServer, StorageError, StoreConfig};

pub const DEFAULT_LFN: &str = "/bench/events";
pub const DEFAULT_EVENTS_PER_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Write,
    Read,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Write => "write",
            BenchMode::Read => "read",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n_nodes: usize,
    pub events_per_node: u64,
    pub hits_per_event: usize,
    pub quantize_bits: u32,
    pub codec: Codec,
    /// Per-node limits in bytes/second: empty for unlimited, one value for
    /// all nodes, or one per node. 0 means unlimited.
    pub node_rate_bps: Vec<u64>,
    pub seed: u64,
    pub mode: BenchMode,
    pub lfn: String,
    pub events_per_block: usize,
    pub straggler_threshold: f64,
    pub timeout: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_nodes: 1,
            events_per_node: 100,
            hits_per_event: 1000,
            quantize_bits: 10,
            codec: Codec::Deflate,
            node_rate_bps: Vec::new(),
            seed: 0,
            mode: BenchMode::Write,
            lfn: DEFAULT_LFN.to_owned(),
            events_per_block: DEFAULT_EVENTS_PER_BLOCK,
            straggler_threshold: DEFAULT_STRAGGLER_THRESHOLD,
            timeout: Duration::from_secs(120),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidConfig(m));
        if self.n_nodes == 0 {
            return bad("n_nodes must be at least 1".into());
        }
        if self.events_per_node == 0 || self.hits_per_event == 0 || self.events_per_block == 0 {
            return bad("events_per_node, hits_per_event and events_per_block must be at least 1".into());
        }
        if self.quantize_bits > 23 {
            return bad(format!("quantize_bits {} exceeds 23", self.quantize_bits));
        }
        if !matches!(self.node_rate_bps.len(), 0 | 1) && self.node_rate_bps.len() != self.n_nodes {
            return bad(format!("{} rates given for {} nodes", self.node_rate_bps.len(), self.n_nodes));
        }
        Ok(())
    }

    /// Limit of node `i` (0 = unlimited).
    pub fn rate_of(&self, i: usize) -> u64 {
        match self.node_rate_bps.len() {
            0 => 0,
            1 => self.node_rate_bps[0],
            _ => self.node_rate_bps[i],
        }
    }

    /// Seed used by node `i`.
    pub fn node_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub per_node: Vec<NodeResult>,
    pub total_bytes: u64,
    pub aggregate_bps: f64,
    pub wall_seconds: f64,
    pub event_stats: EventFileStats,
    pub straggler_report: StragglerReport,
    /// Barrier-model prediction from the configured limits, when every node
    /// is limited.
    pub prediction: Option<Prediction>,
}

impl BenchReport {
    pub fn compression_factor(&self) -> Option<f64> {
        compression_factor(&self.event_stats).ok()
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("node unreachable: {0}")]
    NodeUnreachable(String),
    #[error("{0}")]
    PartialFailure(String),
    #[error("logical file {0:?} not found")]
    MissingFile(String),
    #[error("logical file {0:?} already exists")]
    FileExists(String),
    #[error("read plan is not all-local: task {task_id} went to {node_id}")]
    NotLocal { task_id: u64, node_id: String },
    #[error("catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("storage: {0}")]
    Storage(#[from] StorageError),
    #[error("event file: {0}")]
    EventIo(#[from] EventIoError),
    #[error("scheduler: {0}")]
    Scheduler(#[from] SchedulerError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Catalog service and storage daemons on loopback, rooted in a temporary
/// directory that is removed on drop.
pub struct EmbeddedCluster {
    catalog: Arc<Catalog>,
    catalog_server: CatalogServer,
    servers: Vec<NodeServer>,
    nodes: Vec<NodeInfo>,
    dir: tempfile::TempDir,
}

pub fn node_name(i: usize) -> String {
    format!("node{i:02}")
}

impl EmbeddedCluster {
    /// `rates[i]` limits node `i` (missing entries and 0 mean unlimited).
    pub fn spawn(n_nodes: usize, rates: &[u64]) -> Result<Self, BenchError> {
        let dir = tempfile::Builder::new().prefix("gdf-embedded-").tempdir()?;
        let catalog = Arc::new(Catalog::in_memory());
        let catalog_server = CatalogServer::spawn(Arc::clone(&catalog) as Arc<dyn CatalogApi>, "127.0.0.1:0")?;
        let mut servers = Vec::with_capacity(n_nodes);
        let mut nodes = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let id = node_name(i);
            let rate = rates.get(i).copied().unwrap_or(0);
            let root = dir.path().join(&id);
            let store = FragmentStore::open(StoreConfig::new(&id, &root).rate_limit(rate))?;
            let server = NodeServer::spawn(Arc::new(store), "127.0.0.1:0")?;
            let info = NodeInfo {
                node_id: id,
                address: server.local_addr().to_string(),
                storage_root: root.to_string_lossy().into_owned(),
                rate_limit_bps: rate,
                status: NodeStatus::Up,
            };
            catalog.register_node(info.clone())?;
            servers.push(server);
            nodes.push(info);
        }
        Ok(EmbeddedCluster { catalog, catalog_server, servers, nodes, dir })
    }

    /// Cluster shaped by a bench configuration.
    pub fn for_config(config: &BenchConfig) -> Result<Self, BenchError> {
        config.validate()?;
        let rates: Vec<u64> = (0..config.n_nodes).map(|i| config.rate_of(i)).collect();
        Self::spawn(config.n_nodes, &rates)
    }

    pub fn catalog_addr(&self) -> String {
        self.catalog_server.local_addr().to_string()
    }

    /// A network client for the catalog service.
    pub fn catalog_client(&self) -> CatalogClient {
        CatalogClient::new(self.catalog_addr())
    }

    /// The in-process catalog behind the service.
    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn store(&self, i: usize) -> &Arc<FragmentStore> {
        self.servers[i].store()
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }
}

/// Encode node-local synthetic events into one event file.
pub fn generate_fragment(config: &BenchConfig, node_index: usize) -> Result<(Vec<u8>, EventFileStats), EventIoError> {
    let events = SyntheticEvents::new(
        config.events_per_node,
        config.hits_per_event,
        config.node_seed(node_index),
        config.quantize_bits,
    )?;
    let mut w = EventWriter::new(Vec::new(), vec![DEFAULT_COLLECTION.to_owned()], config.codec, config.events_per_block)?;
    for e in events {
        w.push(&e)?;
    }
    let (stats, bytes) = w.finish()?;
    Ok((bytes, stats))
}

struct Timed<T> {
    start: Instant,
    end: Instant,
    value: T,
}

fn span<T>(results: &[Timed<T>]) -> f64 {
    match (results.iter().map(|r| r.start).min(), results.iter().map(|r| r.end).max()) {
        (Some(s), Some(e)) => (e - s).as_secs_f64(),
        _ => 0.0,
    }
}

fn unreachable(e: StorageError) -> BenchError {
    match e {
        StorageError::Unreachable(m) => BenchError::NodeUnreachable(m),
        other => BenchError::Storage(other),
    }
}

fn finish_report(
    config: &BenchConfig,
    nodes: &[NodeInfo],
    per_node: Vec<NodeResult>,
    wall_seconds: f64,
    event_stats: EventFileStats,
) -> Result<BenchReport, BenchError> {
    let total_bytes: u64 = per_node.iter().map(|r| r.bytes).sum();
    let straggler_report = detect_stragglers(&per_node, config.straggler_threshold)?;
    let loads: BTreeMap<String, u64> = per_node.iter().map(|r| (r.node_id.clone(), r.bytes)).collect();
    let rates: BTreeMap<String, f64> = nodes
        .iter()
        .filter(|n| n.rate_limit_bps > 0)
        .map(|n| (n.node_id.clone(), n.rate_limit_bps as f64))
        .collect();
    let prediction = predict_from_loads(&loads, &rates).ok();
    Ok(BenchReport {
        config: config.clone(),
        per_node,
        total_bytes,
        aggregate_bps: if wall_seconds > 0.0 { total_bytes as f64 / wall_seconds } else { 0.0 },
        wall_seconds,
        event_stats,
        straggler_report,
        prediction,
    })
}

/// Up nodes, sorted by id, exactly `config.n_nodes` of them.
fn bench_nodes(config: &BenchConfig, catalog: &dyn CatalogApi) -> Result<Vec<NodeInfo>, BenchError> {
    let mut nodes: Vec<NodeInfo> = catalog.nodes()?.into_iter().filter(|n| n.status == NodeStatus::Up).collect();
    nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
    if nodes.len() < config.n_nodes {
        return Err(BenchError::InvalidConfig(format!(
            "{} nodes requested, catalog lists {} up",
            config.n_nodes,
            nodes.len()
        )));
    }
    nodes.truncate(config.n_nodes);
    Ok(nodes)
}

/// Node `i` generates its own events and stores them as fragment `i` of
/// `config.lfn` on itself; the fragments are then registered as one file.
pub fn run_write_bench(config: &BenchConfig, catalog: &dyn CatalogApi) -> Result<BenchReport, BenchError> {
    config.validate()?;
    match catalog.lookup(&config.lfn) {
        Ok(_) => return Err(BenchError::FileExists(config.lfn.clone())),
        Err(e) if e.code() == ErrorCode::UnknownFile => {}
        Err(e) => return Err(e.into()),
    }
    let nodes = bench_nodes(config, catalog)?;
    let barrier = Barrier::new(nodes.len());
    let results: Vec<Result<Timed<(FragmentMeta, EventFileStats)>, BenchError>> = thread::scope(|s| {
        let handles: Vec<_> = nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let barrier = &barrier;
                s.spawn(move || {
                    let prepared = generate_fragment(config, i)
                        .map_err(BenchError::from)
                        .and_then(|(bytes, stats)| {
                            let client = NodeClient::connect(&node.address, config.timeout).map_err(unreachable)?;
                            Ok((bytes, stats, client))
                        });
                    barrier.wait();
                    let (bytes, stats, mut client) = prepared?;
                    let start = Instant::now();
                    let receipt = client.put(&config.lfn, i as u32, &bytes);
                    let end = Instant::now();
                    let meta = receipt?.into_fragment_meta(i as u32, &node.node_id);
                    Ok(Timed { start, end, value: (meta, stats) })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(BenchError::PartialFailure("worker panicked".into())))).collect()
    });
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (node, r) in nodes.iter().zip(results) {
        match r {
            Ok(t) => ok.push(t),
            Err(e) => failures.push(format!("{}: {e}", node.node_id)),
        }
    }
    if !failures.is_empty() {
        return Err(BenchError::PartialFailure(failures.join("; ")));
    }
    let wall = span(&ok);
    let per_node = nodes
        .iter()
        .zip(&ok)
        .map(|(n, t)| NodeResult::new(&n.node_id, t.value.0.size_bytes, (t.end - t.start).as_secs_f64()))
        .collect();
    let stats = ok.iter().fold(EventFileStats::default(), |acc, t| acc.merge(&t.value.1));
    let fragments = ok.into_iter().map(|t| t.value.0).collect();
    catalog.register_file(&config.lfn, fragments)?;
    finish_report(config, &nodes, per_node, wall, stats)
}

/// Schedule one read task per fragment, require every placement to be
/// local, read each fragment in full on its node, then decode it and check
/// the event count against the file footer.
pub fn run_read_bench(config: &BenchConfig, catalog: &dyn CatalogApi) -> Result<BenchReport, BenchError> {
    config.validate()?;
    let entry = catalog.lookup(&config.lfn).map_err(|e| match e.code() {
        ErrorCode::UnknownFile => BenchError::MissingFile(config.lfn.clone()),
        _ => e.into(),
    })?;
    let nodes = bench_nodes(config, catalog)?;
    let tasks: Vec<Task> = entry
        .fragments
        .iter()
        .map(|f| Task { task_id: f.index as u64, lfn: entry.lfn.clone(), fragment_index: f.index, est_bytes: f.size_bytes })
        .collect();
    let assignments = scheduler::assign(&tasks, std::slice::from_ref(&entry), &nodes)?;
    if let Some(a) = assignments.iter().find(|a| a.locality != Locality::Local) {
        return Err(BenchError::NotLocal { task_id: a.task_id, node_id: a.node_id.clone() });
    }
    let mut per_node_tasks: Vec<Vec<u32>> = vec![Vec::new(); nodes.len()];
    for a in &assignments {
        let i = nodes.iter().position(|n| n.node_id == a.node_id).expect("assigned to a bench node");
        per_node_tasks[i].push(a.task_id as u32);
    }
    let barrier = Barrier::new(nodes.len());
    let results: Vec<Result<Timed<(u64, EventFileStats)>, BenchError>> = thread::scope(|s| {
        let handles: Vec<_> = nodes
            .iter()
            .zip(&per_node_tasks)
            .map(|(node, mine)| {
                let (barrier, entry) = (&barrier, &entry);
                s.spawn(move || {
                    let client = NodeClient::connect(&node.address, config.timeout).map_err(unreachable);
                    barrier.wait();
                    let start = Instant::now();
                    let fetched: Result<Vec<(u32, Vec<u8>)>, BenchError> = client.and_then(|mut c| {
                        mine.iter()
                            .map(|&i| {
                                let size = entry.fragments[i as usize].size_bytes;
                                Ok((i, c.get(&entry.lfn, i, 0, size)?))
                            })
                            .collect()
                    });
                    let end = Instant::now();
                    barrier.wait();
                    let mut bytes = 0u64;
                    let mut stats = EventFileStats::default();
                    for (index, data) in fetched? {
                        let frag = &entry.fragments[index as usize];
                        if crate::crc::crc32(&data) != frag.crc32 {
                            return Err(BenchError::Catalog(CatalogError::ChecksumMismatch {
                                index,
                                expected: frag.crc32,
                                actual: crate::crc::crc32(&data),
                            }));
                        }
                        bytes += data.len() as u64;
                        let mut reader = EventReader::open(Cursor::new(&data))?;
                        let decoded = reader.read_all()?;
                        if decoded.len() as u64 != reader.n_events() {
                            return Err(BenchError::EventIo(EventIoError::Corrupt(format!(
                                "fragment {index}: decoded {} events, footer says {}",
                                decoded.len(),
                                reader.n_events()
                            ))));
                        }
                        stats = stats.merge(&reader.stats()?);
                    }
                    Ok(Timed { start, end, value: (bytes, stats) })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(BenchError::PartialFailure("worker panicked".into())))).collect()
    });
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (node, r) in nodes.iter().zip(results) {
        match r {
            Ok(t) => ok.push(t),
            Err(e) => failures.push(format!("{}: {e}", node.node_id)),
        }
    }
    if !failures.is_empty() {
        return Err(BenchError::PartialFailure(failures.join("; ")));
    }
    let wall = span(&ok);
    let per_node = nodes
        .iter()
        .zip(&ok)
        .map(|(n, t)| NodeResult::new(&n.node_id, t.value.0, (t.end - t.start).as_secs_f64()))
        .collect();
    let stats = ok.iter().fold(EventFileStats::default(), |acc, t| acc.merge(&t.value.1));
    finish_report(config, &nodes, per_node, wall, stats)
}

pub fn run_bench(config: &BenchConfig, catalog: &dyn CatalogApi) -> Result<BenchReport, BenchError> {
    match config.mode {
        BenchMode::Write => run_write_bench(config, catalog),
        BenchMode::Read => run_read_bench(config, catalog),
    }
}

const REPORT_HEADER: [&str; 10] = [
    "mode",
    "n_nodes",
    "node_id",
    "bytes",
    "seconds",
    "bps",
    "straggler",
    "aggregate_bps",
    "wall_seconds",
    "compression_factor",
];

fn factor_cell(r: &BenchReport) -> String {
    r.compression_factor().map(|f| format!("{f:.4}")).unwrap_or_default()
}

/// One row per node, then one `aggregate` row.
pub fn write_report_csv<W: Write>(report: &BenchReport, sink: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(REPORT_HEADER)?;
    let mode = report.config.mode.name();
    let n = report.config.n_nodes.to_string();
    for r in &report.per_node {
        w.write_record([
            mode,
            &n,
            &r.node_id,
            &r.bytes.to_string(),
            &format!("{:.6}", r.seconds),
            &format!("{:.1}", r.bps),
            if report.straggler_report.is_straggler(&r.node_id) { "1" } else { "0" },
            "",
            "",
            "",
        ])?;
    }
    w.write_record([
        mode,
        &n,
        "aggregate",
        &report.total_bytes.to_string(),
        "",
        "",
        &report.straggler_report.stragglers.len().to_string(),
        &format!("{:.1}", report.aggregate_bps),
        &format!("{:.6}", report.wall_seconds),
        &factor_cell(report),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn emit_report(report: &BenchReport, path: &Path) -> Result<(), BenchError> {
    let file = fs::File::create(path)?;
    write_report_csv(report, file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub mode: String,
    pub n_nodes: usize,
    pub aggregate_bps: f64,
    pub wall_seconds: f64,
    pub compression_factor: String,
}

pub fn read_series(path: &Path) -> Result<Vec<SeriesPoint>, BenchError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Add this run to an aggregate-versus-nodes series, kept sorted by node
/// count (then mode).
pub fn append_series(report: &BenchReport, path: &Path) -> Result<Vec<SeriesPoint>, BenchError> {
    let mut points = read_series(path)?;
    points.push(SeriesPoint {
        mode: report.config.mode.name().to_owned(),
        n_nodes: report.config.n_nodes,
        aggregate_bps: report.aggregate_bps,
        wall_seconds: report.wall_seconds,
        compression_factor: factor_cell(report),
    });
    points.sort_by(|a, b| a.n_nodes.cmp(&b.n_nodes).then_with(|| a.mode.cmp(&b.mode)));
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    {
        let file = OpenOptions::new().write(true).create(true).truncate(true).open(&tmp)?;
        let mut w = csv::Writer::from_writer(file);
        for p in &points {
            w.serialize(p)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, mode: BenchMode) -> BenchConfig {
        BenchConfig { n_nodes: n, events_per_node: 6, hits_per_event: 20, mode, seed: 5, ..Default::default() }
    }

    #[test]
    fn config_checks() {
        assert!(small(2, BenchMode::Write).validate().is_ok());
        let mut c = small(2, BenchMode::Write);
        c.node_rate_bps = vec![1, 2, 3];
        assert!(matches!(c.validate(), Err(BenchError::InvalidConfig(_))));
        c.node_rate_bps = vec![7];
        assert_eq!((c.rate_of(0), c.rate_of(1)), (7, 7));
        c.n_nodes = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn write_then_read_small_cluster() {
        let cfg = small(3, BenchMode::Write);
        let cluster = EmbeddedCluster::for_config(&cfg).unwrap();
        let cat = cluster.catalog_client();
        let w = run_bench(&cfg, &cat).unwrap();
        assert_eq!(w.per_node.len(), 3);
        assert_eq!(w.event_stats.n_events, 18);
        let entry = cat.lookup(DEFAULT_LFN).unwrap();
        assert_eq!(entry.n_fragments, 3);
        for (i, f) in entry.fragments.iter().enumerate() {
            assert_eq!(f.replicas[0].node_id, node_name(i));
        }
        assert!(matches!(run_bench(&cfg, &cat), Err(BenchError::FileExists(_))));

        let r = run_bench(&BenchConfig { mode: BenchMode::Read, ..cfg.clone() }, &cat).unwrap();
        assert_eq!(r.total_bytes, w.total_bytes);
        assert_eq!(r.event_stats.n_events, 18);
        assert_eq!(r.event_stats.bytes_raw, w.event_stats.bytes_raw);
        assert_eq!(r.event_stats.bytes_compressed, w.event_stats.bytes_compressed);
    }

    #[test]
    fn read_of_missing_file() {
        let cfg = small(1, BenchMode::Read);
        let cluster = EmbeddedCluster::for_config(&cfg).unwrap();
        assert!(matches!(run_bench(&cfg, cluster.catalog().as_ref()), Err(BenchError::MissingFile(_))));
    }

    #[test]
    fn report_and_series_files() {
        let cfg = small(2, BenchMode::Write);
        let cluster = EmbeddedCluster::for_config(&cfg).unwrap();
        let rep = run_bench(&cfg, cluster.catalog().as_ref()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("r.csv");
        emit_report(&rep, &csv_path).unwrap();
        let text = fs::read_to_string(&csv_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 2 + 1);
        assert_eq!(lines[0], REPORT_HEADER.join(","));
        assert!(lines[3].starts_with("write,2,aggregate,"));
        assert!(lines[3].ends_with(&factor_cell(&rep)));
        assert_eq!(rep.compression_factor(), compression_factor(&rep.event_stats).ok());

        let series = dir.path().join("series.csv");
        let mut bigger = rep.clone();
        bigger.config.n_nodes = 4;
        append_series(&bigger, &series).unwrap();
        let pts = append_series(&rep, &series).unwrap();
        assert_eq!(pts.iter().map(|p| p.n_nodes).collect::<Vec<_>>(), vec![2, 4]);
        assert_eq!(read_series(&series).unwrap(), pts);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = small(2, BenchMode::Write);
        let (a, sa) = generate_fragment(&cfg, 1).unwrap();
        let (b, sb) = generate_fragment(&cfg, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_ne!(generate_fragment(&cfg, 0).unwrap().0, a);
    }
}
