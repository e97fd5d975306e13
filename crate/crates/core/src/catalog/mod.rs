//! Metadata catalog: logical file names, their fragments, and where each
//! fragment's replicas live.
//!
//! Mutations go through a single writer lock, are appended to the record log
//! and synced before they become visible. Readers see consistent snapshots.

mod client;
mod glob;
mod log;
mod server;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::client::CatalogClient;
pub use self::glob::glob_match;
pub use self::log::{encode_line, replay, Record, Replay, SyncPolicy, LOG_FILE_NAME};
pub use self::server::CatalogServer;

use self::log::LogWriter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    #[default]
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub node_id: String,
    pub address: String,
    pub storage_root: String,
    /// Bytes per second; 0 means unlimited.
    pub rate_limit_bps: u64,
    pub status: NodeStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaLocation {
    pub node_id: String,
    pub path: String,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentMeta {
    pub index: u32,
    pub size_bytes: u64,
    pub crc32: u32,
    pub replicas: Vec<ReplicaLocation>,
}

impl FragmentMeta {
    pub fn has_replica_on(&self, node_id: &str) -> bool {
        self.replicas.iter().any(|r| r.node_id == node_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalFileEntry {
    pub lfn: String,
    pub n_fragments: u32,
    pub total_size: u64,
    pub fragments: Vec<FragmentMeta>,
}

impl LogicalFileEntry {
    pub fn fragment(&self, index: u32) -> Option<&FragmentMeta> {
        self.fragments.get(index as usize)
    }

    /// Checks gapless indices, non-empty replica lists, checksum coherence
    /// and the size total.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.n_fragments == 0 || self.fragments.len() != self.n_fragments as usize {
            return Err(format!("{}: fragment count mismatch", self.lfn));
        }
        let mut total = 0u64;
        for (i, f) in self.fragments.iter().enumerate() {
            if f.index as usize != i {
                return Err(format!("{}: fragment {} stored at slot {i}", self.lfn, f.index));
            }
            if f.replicas.is_empty() {
                return Err(format!("{}: fragment {i} has no replicas", self.lfn));
            }
            if f.replicas.iter().any(|r| r.crc32 != f.crc32) {
                return Err(format!("{}: fragment {i} has incoherent checksums", self.lfn));
            }
            total += f.size_bytes;
        }
        if total != self.total_size {
            return Err(format!("{}: total_size {} != {total}", self.lfn, self.total_size));
        }
        Ok(())
    }
}

/// Stable wire codes for catalog errors (`ERR <code> <message>`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    DuplicateName,
    GapInFragmentIndices,
    EmptyFragmentSet,
    InitialReplicaCount,
    UnknownFile,
    ChecksumMismatch,
    UnknownFragmentIndex,
    LastReplica,
    UnknownReplica,
    CorruptRecord,
    Io,
    Protocol,
    Unreachable,
}

impl ErrorCode {
    const ALL: [(ErrorCode, &'static str); 13] = [
        (ErrorCode::DuplicateName, "DUPLICATE_NAME"),
        (ErrorCode::GapInFragmentIndices, "GAP_IN_FRAGMENT_INDICES"),
        (ErrorCode::EmptyFragmentSet, "EMPTY_FRAGMENT_SET"),
        (ErrorCode::InitialReplicaCount, "INITIAL_REPLICA_COUNT"),
        (ErrorCode::UnknownFile, "UNKNOWN_FILE"),
        (ErrorCode::ChecksumMismatch, "CHECKSUM_MISMATCH"),
        (ErrorCode::UnknownFragmentIndex, "UNKNOWN_FRAGMENT_INDEX"),
        (ErrorCode::LastReplica, "LAST_REPLICA"),
        (ErrorCode::UnknownReplica, "UNKNOWN_REPLICA"),
        (ErrorCode::CorruptRecord, "CORRUPT_RECORD"),
        (ErrorCode::Io, "IO"),
        (ErrorCode::Protocol, "PROTOCOL"),
        (ErrorCode::Unreachable, "UNREACHABLE"),
    ];

    pub fn as_str(self) -> &'static str {
        Self::ALL.iter().find(|(c, _)| *c == self).map(|(_, s)| *s).unwrap_or("PROTOCOL")
    }

    pub fn parse(s: &str) -> Option<ErrorCode> {
        Self::ALL.iter().find(|(_, name)| *name == s).map(|(c, _)| *c)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("logical file {0:?} is already registered")]
    DuplicateName(String),
    #[error("fragment indices of {0:?} are not a gapless 0-based range")]
    GapInFragmentIndices(String),
    #[error("no fragments given")]
    EmptyFragmentSet,
    #[error("fragment {index} must be registered with exactly one replica, got {count}")]
    InitialReplicaCount { index: u32, count: usize },
    #[error("unknown logical file {0:?}")]
    UnknownFile(String),
    #[error("checksum mismatch on fragment {index}: catalog has {expected:08x}, replica has {actual:08x}")]
    ChecksumMismatch { index: u32, expected: u32, actual: u32 },
    #[error("{lfn:?} has no fragment {index}")]
    UnknownFragmentIndex { lfn: String, index: u32 },
    #[error("refusing to remove the last replica of fragment {index}")]
    LastReplica { index: u32 },
    #[error("fragment {index} has no replica on node {node_id:?}")]
    UnknownReplica { index: u32, node_id: String },
    #[error("corrupt log record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error("catalog i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("catalog unreachable: {0}")]
    Unreachable(String),
    #[error("{code}: {message}")]
    Remote { code: ErrorCode, message: String },
}

impl CatalogError {
    pub fn code(&self) -> ErrorCode {
        match self {
            CatalogError::DuplicateName(_) => ErrorCode::DuplicateName,
            CatalogError::GapInFragmentIndices(_) => ErrorCode::GapInFragmentIndices,
            CatalogError::EmptyFragmentSet => ErrorCode::EmptyFragmentSet,
            CatalogError::InitialReplicaCount { .. } => ErrorCode::InitialReplicaCount,
            CatalogError::UnknownFile(_) => ErrorCode::UnknownFile,
            CatalogError::ChecksumMismatch { .. } => ErrorCode::ChecksumMismatch,
            CatalogError::UnknownFragmentIndex { .. } => ErrorCode::UnknownFragmentIndex,
            CatalogError::LastReplica { .. } => ErrorCode::LastReplica,
            CatalogError::UnknownReplica { .. } => ErrorCode::UnknownReplica,
            CatalogError::CorruptRecord { .. } => ErrorCode::CorruptRecord,
            CatalogError::Io(_) => ErrorCode::Io,
            CatalogError::Protocol(_) => ErrorCode::Protocol,
            CatalogError::Unreachable(_) => ErrorCode::Unreachable,
            CatalogError::Remote { code, .. } => *code,
        }
    }
}

/// The full catalog contents. Serializes canonically (sorted maps).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogState {
    pub files: BTreeMap<String, LogicalFileEntry>,
    pub nodes: BTreeMap<String, NodeInfo>,
}

/// A validated state change ready to be committed.
enum Change {
    File(LogicalFileEntry),
    Node(NodeInfo),
}

impl CatalogState {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("catalog state serializes")
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        for (lfn, entry) in &self.files {
            if lfn != &entry.lfn {
                return Err(format!("entry {lfn:?} keyed under wrong name"));
            }
            entry.check_invariants()?;
        }
        Ok(())
    }

    fn entry(&self, lfn: &str) -> Result<&LogicalFileEntry, CatalogError> {
        self.files.get(lfn).ok_or_else(|| CatalogError::UnknownFile(lfn.to_owned()))
    }

    /// Validate `record` against the current state. `Ok(None)` means the
    /// record would not change anything.
    fn prepare(&self, record: &Record) -> Result<Option<Change>, CatalogError> {
        match record {
            Record::Register { lfn, fragments } => {
                if self.files.contains_key(lfn) {
                    return Err(CatalogError::DuplicateName(lfn.clone()));
                }
                if fragments.is_empty() {
                    return Err(CatalogError::EmptyFragmentSet);
                }
                let mut sorted = fragments.clone();
                sorted.sort_by_key(|f| f.index);
                if sorted.iter().enumerate().any(|(i, f)| f.index as usize != i) {
                    return Err(CatalogError::GapInFragmentIndices(lfn.clone()));
                }
                for f in &sorted {
                    if f.replicas.len() != 1 {
                        return Err(CatalogError::InitialReplicaCount {
                            index: f.index,
                            count: f.replicas.len(),
                        });
                    }
                    let r = &f.replicas[0];
                    if r.crc32 != f.crc32 {
                        return Err(CatalogError::ChecksumMismatch {
                            index: f.index,
                            expected: f.crc32,
                            actual: r.crc32,
                        });
                    }
                }
                let n_fragments = u32::try_from(sorted.len())
                    .map_err(|_| CatalogError::Protocol("too many fragments".into()))?;
                Ok(Some(Change::File(LogicalFileEntry {
                    lfn: lfn.clone(),
                    n_fragments,
                    total_size: sorted.iter().map(|f| f.size_bytes).sum(),
                    fragments: sorted,
                })))
            }
            Record::AddReplica { lfn, index, location } => {
                let entry = self.entry(lfn)?;
                let frag = entry.fragment(*index).ok_or_else(|| {
                    CatalogError::UnknownFragmentIndex { lfn: lfn.clone(), index: *index }
                })?;
                if location.crc32 != frag.crc32 {
                    return Err(CatalogError::ChecksumMismatch {
                        index: *index,
                        expected: frag.crc32,
                        actual: location.crc32,
                    });
                }
                if frag
                    .replicas
                    .iter()
                    .any(|r| r.node_id == location.node_id && r.path == location.path)
                {
                    return Ok(None);
                }
                let mut updated = entry.clone();
                updated.fragments[*index as usize].replicas.push(location.clone());
                Ok(Some(Change::File(updated)))
            }
            Record::RemoveReplica { lfn, index, node_id } => {
                let entry = self.entry(lfn)?;
                let frag = entry.fragment(*index).ok_or_else(|| {
                    CatalogError::UnknownFragmentIndex { lfn: lfn.clone(), index: *index }
                })?;
                let pos = frag.replicas.iter().position(|r| &r.node_id == node_id).ok_or_else(
                    || CatalogError::UnknownReplica { index: *index, node_id: node_id.clone() },
                )?;
                if frag.replicas.len() == 1 {
                    return Err(CatalogError::LastReplica { index: *index });
                }
                let mut updated = entry.clone();
                updated.fragments[*index as usize].replicas.remove(pos);
                Ok(Some(Change::File(updated)))
            }
            Record::Node { node } => {
                if self.nodes.get(&node.node_id) == Some(node) {
                    return Ok(None);
                }
                Ok(Some(Change::Node(node.clone())))
            }
        }
    }

    fn commit(&mut self, change: Change) {
        match change {
            Change::File(entry) => {
                debug_assert!(entry.check_invariants().is_ok());
                self.files.insert(entry.lfn.clone(), entry);
            }
            Change::Node(node) => {
                self.nodes.insert(node.node_id.clone(), node);
            }
        }
    }

    /// Apply one record, validating it first.
    pub fn apply(&mut self, record: &Record) -> Result<(), CatalogError> {
        if let Some(change) = self.prepare(record)? {
            self.commit(change);
        }
        Ok(())
    }

    fn list(&self, pattern: &str) -> Vec<LogicalFileEntry> {
        self.files
            .values()
            .filter(|e| glob_match(pattern, &e.lfn))
            .cloned()
            .collect()
    }
}

/// Operations shared by the in-process catalog and the network client.
pub trait CatalogApi: Send + Sync {
    fn register_file(
        &self,
        lfn: &str,
        fragments: Vec<FragmentMeta>,
    ) -> Result<LogicalFileEntry, CatalogError>;
    fn add_replica(
        &self,
        lfn: &str,
        index: u32,
        location: ReplicaLocation,
    ) -> Result<LogicalFileEntry, CatalogError>;
    fn lookup(&self, lfn: &str) -> Result<LogicalFileEntry, CatalogError>;
    fn list_files(&self, pattern: &str) -> Result<Vec<LogicalFileEntry>, CatalogError>;
    fn remove_replica(
        &self,
        lfn: &str,
        index: u32,
        node_id: &str,
    ) -> Result<LogicalFileEntry, CatalogError>;
    fn register_node(&self, node: NodeInfo) -> Result<NodeInfo, CatalogError>;
    fn nodes(&self) -> Result<Vec<NodeInfo>, CatalogError>;
}

/// In-process catalog backed by an append-only record log (or by nothing,
/// for scratch use).
pub struct Catalog {
    state: RwLock<CatalogState>,
    writer: Mutex<Option<LogWriter>>,
}

impl Catalog {
    /// A catalog with no persistence.
    pub fn in_memory() -> Self {
        Catalog { state: RwLock::new(CatalogState::default()), writer: Mutex::new(None) }
    }

    /// Open (or create) the catalog in `state_dir`, replaying its log.
    pub fn open(state_dir: impl AsRef<Path>) -> Result<Self, CatalogError> {
        Self::open_with(state_dir, SyncPolicy::Fsync)
    }

    pub fn open_with(state_dir: impl AsRef<Path>, sync: SyncPolicy) -> Result<Self, CatalogError> {
        let (state, writer) = log::open_log(state_dir.as_ref(), sync)?;
        Ok(Catalog { state: RwLock::new(state), writer: Mutex::new(Some(writer)) })
    }

    /// Consistent copy of the whole state.
    pub fn snapshot(&self) -> CatalogState {
        self.state.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn mutate(&self, record: Record) -> Result<(), CatalogError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let change = self.state.read().unwrap_or_else(|e| e.into_inner()).prepare(&record)?;
        let Some(change) = change else { return Ok(()) };
        if let Some(w) = writer.as_mut() {
            w.append(&record)?;
        }
        self.state.write().unwrap_or_else(|e| e.into_inner()).commit(change);
        Ok(())
    }

    fn read<T>(&self, f: impl FnOnce(&CatalogState) -> T) -> T {
        f(&self.state.read().unwrap_or_else(|e| e.into_inner()))
    }
}

impl CatalogApi for Catalog {
    fn register_file(
        &self,
        lfn: &str,
        fragments: Vec<FragmentMeta>,
    ) -> Result<LogicalFileEntry, CatalogError> {
        self.mutate(Record::Register { lfn: lfn.to_owned(), fragments })?;
        self.lookup(lfn)
    }

    fn add_replica(
        &self,
        lfn: &str,
        index: u32,
        location: ReplicaLocation,
    ) -> Result<LogicalFileEntry, CatalogError> {
        self.mutate(Record::AddReplica { lfn: lfn.to_owned(), index, location })?;
        self.lookup(lfn)
    }

    fn lookup(&self, lfn: &str) -> Result<LogicalFileEntry, CatalogError> {
        self.read(|s| s.entry(lfn).cloned())
    }

    fn list_files(&self, pattern: &str) -> Result<Vec<LogicalFileEntry>, CatalogError> {
        Ok(self.read(|s| s.list(pattern)))
    }

    fn remove_replica(
        &self,
        lfn: &str,
        index: u32,
        node_id: &str,
    ) -> Result<LogicalFileEntry, CatalogError> {
        self.mutate(Record::RemoveReplica {
            lfn: lfn.to_owned(),
            index,
            node_id: node_id.to_owned(),
        })?;
        self.lookup(lfn)
    }

    fn register_node(&self, node: NodeInfo) -> Result<NodeInfo, CatalogError> {
        self.mutate(Record::Node { node: node.clone() })?;
        Ok(node)
    }

    fn nodes(&self) -> Result<Vec<NodeInfo>, CatalogError> {
        Ok(self.read(|s| s.nodes.values().cloned().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIB: u64 = 1 << 20;

    fn frag(index: u32, node: &str, size: u64, crc: u32) -> FragmentMeta {
        FragmentMeta {
            index,
            size_bytes: size,
            crc32: crc,
            replicas: vec![ReplicaLocation {
                node_id: node.into(),
                path: format!("/data/{node}/{index}"),
                crc32: crc,
            }],
        }
    }

    fn eight_fragments() -> Vec<FragmentMeta> {
        (0..8).map(|i| frag(i, &format!("n{i}"), MIB, 0x1000 + i)).collect()
    }

    #[test]
    fn register_sums_sizes() {
        let c = Catalog::in_memory();
        let e = c.register_file("run1/evt.gdf", eight_fragments()).unwrap();
        assert_eq!(e.n_fragments, 8);
        assert_eq!(e.total_size, 8 * MIB);
        assert_eq!(c.lookup("run1/evt.gdf").unwrap(), e);
    }

    #[test]
    fn register_rejects_bad_fragment_sets() {
        let c = Catalog::in_memory();
        assert!(matches!(c.register_file("a", vec![]), Err(CatalogError::EmptyFragmentSet)));
        let gap = vec![frag(0, "n0", 1, 1), frag(2, "n1", 1, 2)];
        assert!(matches!(c.register_file("a", gap), Err(CatalogError::GapInFragmentIndices(_))));
        let dup = vec![frag(0, "n0", 1, 1), frag(0, "n1", 1, 2)];
        assert!(matches!(c.register_file("a", dup), Err(CatalogError::GapInFragmentIndices(_))));
        let mut two = frag(0, "n0", 1, 1);
        two.replicas.push(two.replicas[0].clone());
        assert!(matches!(
            c.register_file("a", vec![two]),
            Err(CatalogError::InitialReplicaCount { index: 0, count: 2 })
        ));
        c.register_file("a", vec![frag(0, "n0", 1, 1)]).unwrap();
        assert!(matches!(
            c.register_file("a", vec![frag(0, "n0", 1, 1)]),
            Err(CatalogError::DuplicateName(_))
        ));
    }

    #[test]
    fn register_accepts_unordered_indices() {
        let c = Catalog::in_memory();
        let e = c
            .register_file("a", vec![frag(1, "n1", 2, 2), frag(0, "n0", 1, 1)])
            .unwrap();
        assert_eq!(e.fragments[0].index, 0);
        assert_eq!(e.total_size, 3);
    }

    #[test]
    fn add_replica_is_local_and_idempotent() {
        let c = Catalog::in_memory();
        let before = c.register_file("f", eight_fragments()).unwrap();
        let loc = ReplicaLocation { node_id: "n9".into(), path: "/x".into(), crc32: 0x1003 };
        let after = c.add_replica("f", 3, loc.clone()).unwrap();
        assert_eq!(after.fragments[3].replicas.len(), 2);
        for i in (0..8).filter(|&i| i != 3) {
            assert_eq!(after.fragments[i], before.fragments[i]);
        }
        let again = c.add_replica("f", 3, loc).unwrap();
        assert_eq!(again, after);
        assert_eq!(c.lookup("f").unwrap(), after);
    }

    #[test]
    fn add_replica_errors() {
        let c = Catalog::in_memory();
        c.register_file("f", eight_fragments()).unwrap();
        let bad = ReplicaLocation { node_id: "n9".into(), path: "/x".into(), crc32: 7 };
        assert!(matches!(c.add_replica("f", 3, bad), Err(CatalogError::ChecksumMismatch { .. })));
        let ok = ReplicaLocation { node_id: "n9".into(), path: "/x".into(), crc32: 0x1003 };
        assert!(matches!(
            c.add_replica("f", 8, ok.clone()),
            Err(CatalogError::UnknownFragmentIndex { index: 8, .. })
        ));
        assert!(matches!(c.add_replica("g", 0, ok), Err(CatalogError::UnknownFile(_))));
    }

    #[test]
    fn lookup_missing() {
        let c = Catalog::in_memory();
        let err = c.lookup("missing").unwrap_err();
        assert_eq!(err.code(), ErrorCode::UnknownFile);
    }

    #[test]
    fn list_files_globs_sorted() {
        let c = Catalog::in_memory();
        assert!(c.list_files("*").unwrap().is_empty());
        for name in ["run2/a", "run1/b", "run1/a"] {
            c.register_file(name, vec![frag(0, "n0", 1, 1)]).unwrap();
        }
        let names = |p: &str| -> Vec<String> {
            c.list_files(p).unwrap().into_iter().map(|e| e.lfn).collect()
        };
        assert_eq!(names("run1/*"), ["run1/a", "run1/b"]);
        assert_eq!(names("run?/a"), ["run1/a", "run2/a"]);
        assert_eq!(names("*"), ["run1/a", "run1/b", "run2/a"]);
    }

    #[test]
    fn remove_replica_rules() {
        let c = Catalog::in_memory();
        c.register_file("f", vec![frag(0, "n0", 1, 1)]).unwrap();
        assert!(matches!(c.remove_replica("f", 0, "n0"), Err(CatalogError::LastReplica { .. })));
        c.add_replica("f", 0, ReplicaLocation { node_id: "n1".into(), path: "/p".into(), crc32: 1 })
            .unwrap();
        assert!(matches!(
            c.remove_replica("f", 0, "n7"),
            Err(CatalogError::UnknownReplica { .. })
        ));
        let e = c.remove_replica("f", 0, "n0").unwrap();
        assert_eq!(e.fragments[0].replicas.len(), 1);
        assert_eq!(e.fragments[0].replicas[0].node_id, "n1");
        assert!(matches!(c.remove_replica("g", 0, "n1"), Err(CatalogError::UnknownFile(_))));
    }

    #[test]
    fn nodes_upsert() {
        let c = Catalog::in_memory();
        let mut n = NodeInfo {
            node_id: "n0".into(),
            address: "127.0.0.1:1".into(),
            storage_root: "/r".into(),
            rate_limit_bps: 0,
            status: NodeStatus::Up,
        };
        c.register_node(n.clone()).unwrap();
        n.status = NodeStatus::Down;
        c.register_node(n.clone()).unwrap();
        assert_eq!(c.nodes().unwrap(), vec![n]);
    }

    #[test]
    fn error_codes_round_trip() {
        for (code, name) in ErrorCode::ALL {
            assert_eq!(ErrorCode::parse(name), Some(code));
            assert_eq!(code.as_str(), name);
        }
    }
}
