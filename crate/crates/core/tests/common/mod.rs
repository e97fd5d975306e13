//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use gdf_core::catalog::{ErrorCode, FragmentMeta, LogicalFileEntry, NodeInfo, NodeStatus, Record, ReplicaLocation};
use gdf_core::eventio::{EventRecord, Hit, HitCollection};
use gdf_core::scheduler::{Assignment, Locality, Task};
use gdf_core::schemac::{BLOCK_KEYS, SCALAR_KEYS};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub const MIB: u64 = 1 << 20;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Arbitrary finite f32, sampled over bit patterns so that subnormals,
/// signed zeros and extreme exponents all occur.
pub fn any_finite_f32(r: &mut impl Rng) -> f32 {
    loop {
        let v = f32::from_bits(r.random());
        if v.is_finite() {
            return v;
        }
    }
}

/// `n` events with consecutive ids from `first_id`, each carrying the same
/// `n_collections` named collections with 0..=max_hits hits apiece.
pub fn random_events(r: &mut impl Rng, first_id: u64, n: usize, n_collections: usize, max_hits: usize) -> Vec<EventRecord> {
    let names: Vec<String> = (0..n_collections).map(|i| format!("det{i}")).collect();
    (0..n)
        .map(|i| EventRecord {
            event_id: first_id + i as u64,
            collections: names
                .iter()
                .map(|name| HitCollection {
                    detector_name: name.clone(),
                    hits: (0..r.random_range(0..=max_hits))
                        .map(|_| Hit {
                            edep_abs: any_finite_f32(r),
                            edep_gap: any_finite_f32(r),
                            track_len_abs: any_finite_f32(r),
                            track_len_gap: any_finite_f32(r),
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect()
}

pub fn all_bits_equal(a: &[EventRecord], b: &[EventRecord]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bits_eq(y))
}

/// Random catalog mutations, mostly valid against the state they build,
/// with a share of requests that the catalog must reject.
pub struct OpGen {
    rng: ChaCha8Rng,
    files: BTreeMap<String, Vec<(u32, Vec<String>, u32)>>,
    next_file: u64,
}

pub const OP_NODES: [&str; 6] = ["n0", "n1", "n2", "n3", "n4", "n5"];

impl OpGen {
    pub fn new(seed: u64) -> Self {
        OpGen { rng: rng(seed), files: BTreeMap::new(), next_file: 0 }
    }

    fn node(&mut self) -> String {
        OP_NODES[self.rng.random_range(0..OP_NODES.len())].to_owned()
    }

    /// Next operation. The generator tracks what it expects the catalog to
    /// accept but never relies on it; callers apply the op and ignore
    /// rejections.
    pub fn next_op(&mut self) -> Record {
        let roll = self.rng.random_range(0..100);
        if roll < 30 || self.files.is_empty() {
            let lfn = format!("/data/run{:05}", self.next_file);
            self.next_file += 1;
            let n = self.rng.random_range(1..=4u32);
            let frags: Vec<FragmentMeta> = (0..n)
                .map(|index| {
                    let crc32 = self.rng.random();
                    let node_id = self.node();
                    FragmentMeta {
                        index,
                        size_bytes: self.rng.random_range(0..1 << 30),
                        crc32,
                        replicas: vec![ReplicaLocation { path: format!("/{node_id}/{lfn}.{index}"), node_id, crc32 }],
                    }
                })
                .collect();
            self.files.insert(
                lfn.clone(),
                frags.iter().map(|f| (f.index, vec![f.replicas[0].node_id.clone()], f.crc32)).collect(),
            );
            return Record::Register { lfn, fragments: frags };
        }
        let keys: Vec<String> = self.files.keys().cloned().collect();
        let lfn = keys[self.rng.random_range(0..keys.len())].clone();
        if roll < 35 {
            // Duplicate registration: must be rejected.
            return Record::Register {
                lfn,
                fragments: vec![FragmentMeta {
                    index: 0,
                    size_bytes: 1,
                    crc32: 1,
                    replicas: vec![ReplicaLocation { node_id: "n0".into(), path: "/x".into(), crc32: 1 }],
                }],
            };
        }
        if roll < 45 {
            let node = NodeInfo {
                node_id: self.node(),
                address: format!("127.0.0.1:{}", self.rng.random_range(1024..65535)),
                storage_root: "/srv".into(),
                rate_limit_bps: self.rng.random_range(0..4) * 10 * (1 << 20),
                status: if self.rng.random_bool(0.8) { NodeStatus::Up } else { NodeStatus::Down },
            };
            return Record::Node { node };
        }
        let n_frags = self.files[&lfn].len() as u32;
        let index = self.rng.random_range(0..n_frags + 1);
        let node_id = self.node();
        if roll < 80 {
            let known = self.files[&lfn].iter().find(|f| f.0 == index).map(|f| f.2);
            let crc32 = match known {
                Some(c) if self.rng.random_bool(0.9) => c,
                _ => self.rng.random(),
            };
            if let Some(f) = self.files.get_mut(&lfn).unwrap().iter_mut().find(|f| f.0 == index && f.2 == crc32) {
                if !f.1.contains(&node_id) {
                    f.1.push(node_id.clone());
                }
            }
            return Record::AddReplica {
                lfn: lfn.clone(),
                index,
                location: ReplicaLocation { path: format!("/{node_id}/{lfn}.{index}"), node_id, crc32 },
            };
        }
        if let Some(f) = self.files.get_mut(&lfn).unwrap().iter_mut().find(|f| f.0 == index) {
            if f.1.len() > 1 {
                f.1.retain(|n| n != &node_id);
            }
        }
        Record::RemoveReplica { lfn, index, node_id }
    }
}

/// Apply a record through the public API, as a client would.
pub fn apply_op(cat: &dyn gdf_core::catalog::CatalogApi, op: &Record) -> bool {
    try_op(cat, op).is_ok()
}

/// Run `op` through the API, keeping only the error code on failure.
pub fn try_op(cat: &dyn gdf_core::catalog::CatalogApi, op: &Record) -> Result<(), ErrorCode> {
    let r = match op {
        Record::Register { lfn, fragments } => cat.register_file(lfn, fragments.clone()).map(drop),
        Record::AddReplica { lfn, index, location } => cat.add_replica(lfn, *index, location.clone()).map(drop),
        Record::RemoveReplica { lfn, index, node_id } => cat.remove_replica(lfn, *index, node_id).map(drop),
        Record::Node { node } => cat.register_node(node.clone()).map(drop),
    };
    r.map_err(|e| e.code())
}

/// One scheduling instance.
#[derive(Debug, Clone)]
pub struct SchedInstance {
    pub tasks: Vec<Task>,
    pub files: Vec<LogicalFileEntry>,
    pub nodes: Vec<NodeInfo>,
}

pub fn node_info(id: &str, up: bool) -> NodeInfo {
    NodeInfo {
        node_id: id.to_owned(),
        address: String::new(),
        storage_root: String::new(),
        rate_limit_bps: 0,
        status: if up { NodeStatus::Up } else { NodeStatus::Down },
    }
}

/// Build an instance from per-task (replica holder indices, est_bytes);
/// task i reads fragment i of one file.
pub fn sched_instance(node_up: &[bool], tasks: &[(Vec<usize>, u64)]) -> SchedInstance {
    let node_ids: Vec<String> = (0..node_up.len()).map(|i| format!("n{i}")).collect();
    let fragments = tasks
        .iter()
        .enumerate()
        .map(|(i, (holders, bytes))| FragmentMeta {
            index: i as u32,
            size_bytes: *bytes,
            crc32: 0,
            replicas: holders
                .iter()
                .map(|&h| ReplicaLocation { node_id: node_ids[h].clone(), path: String::new(), crc32: 0 })
                .collect(),
        })
        .collect::<Vec<_>>();
    let total = fragments.iter().map(|f| f.size_bytes).sum();
    SchedInstance {
        tasks: tasks
            .iter()
            .enumerate()
            .map(|(i, (_, b))| Task { task_id: i as u64 * 7 + 3, lfn: "/f".into(), fragment_index: i as u32, est_bytes: *b })
            .collect(),
        files: vec![LogicalFileEntry { lfn: "/f".into(), n_fragments: tasks.len() as u32, total_size: total, fragments }],
        nodes: node_up.iter().zip(&node_ids).map(|(&up, id)| node_info(id, up)).collect(),
    }
}

/// Outcome of exhaustive search over every placement of every task on every
/// up node.
#[derive(Debug, Clone)]
pub struct BruteForce {
    /// Fewest remote placements achievable.
    pub min_remote: usize,
    /// Placement minimizing, task by task in order, the key
    /// (remote?, load of the chosen node before the task, node id).
    pub best_sequential: Vec<Assignment>,
    /// Smallest achievable maximum node load among minimum-remote placements.
    pub min_makespan: u64,
}

pub fn brute_force(inst: &SchedInstance) -> BruteForce {
    let up: Vec<&str> = inst.nodes.iter().filter(|n| n.status == NodeStatus::Up).map(|n| n.node_id.as_str()).collect();
    assert!(!up.is_empty());
    let frag = |t: &Task| &inst.files[0].fragments[t.fragment_index as usize];
    let t = inst.tasks.len();
    let mut choice = vec![0usize; t];
    let mut best_key: Option<Vec<(bool, u64, String)>> = None;
    let mut best_choice = choice.clone();
    let mut min_remote = usize::MAX;
    let mut min_makespan = u64::MAX;
    loop {
        let mut load: BTreeMap<&str, u64> = up.iter().map(|&n| (n, 0)).collect();
        let mut key = Vec::with_capacity(t);
        let mut remote = 0;
        for (task, &c) in inst.tasks.iter().zip(&choice) {
            let node = up[c];
            let is_remote = !frag(task).replicas.iter().any(|r| r.node_id == node);
            remote += is_remote as usize;
            key.push((is_remote, load[node], node.to_owned()));
            *load.get_mut(node).unwrap() += task.est_bytes;
        }
        let makespan = load.values().copied().max().unwrap_or(0);
        if remote < min_remote {
            min_remote = remote;
            min_makespan = makespan;
        } else if remote == min_remote {
            min_makespan = min_makespan.min(makespan);
        }
        if best_key.as_ref().is_none_or(|b| key < *b) {
            best_key = Some(key);
            best_choice = choice.clone();
        }
        // Odometer increment over up^t.
        let mut i = 0;
        loop {
            if i == t {
                let best_sequential = inst
                    .tasks
                    .iter()
                    .zip(&best_choice)
                    .map(|(task, &c)| Assignment {
                        task_id: task.task_id,
                        node_id: up[c].to_owned(),
                        locality: if frag(task).replicas.iter().any(|r| r.node_id == up[c]) {
                            Locality::Local
                        } else {
                            Locality::Remote
                        },
                    })
                    .collect();
                return BruteForce { min_remote, best_sequential, min_makespan };
            }
            choice[i] += 1;
            if choice[i] < up.len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// A random valid `.rootio` text: required scalars, a member block with
/// well-formed fields, and a random mix of other keys, blank lines,
/// comments and indented block bodies.
pub fn random_schema_text(r: &mut impl Rng) -> String {
    const WORDS: [&str; 10] = ["Hit", "Calor", "Track", "Edep", "Gap", "Abs", "Pers", "Root", "IO", "Entry"];
    let ident = |r: &mut dyn RngCore| {
        let n = r.random_range(1..=3);
        (0..n).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect::<String>() + &r.random_range(0..100).to_string()
    };
    let body_line = |r: &mut dyn RngCore| -> String {
        match r.random_range(0..6) {
            0 => String::new(),
            1 => format!("  @class_name@* {}();", ident(r)),
            2 => format!("    {} = hit->Get{}();  // copy", ident(r), ident(r)),
            3 => "  {".to_owned(),
            4 => format!("\t{} @{}@ x;", ident(r), ["float", "class_root", "make_transient"][r.random_range(0..3)]),
            _ => format!("  set {} inside", ident(r)),
        }
    };
    let mut out = String::new();
    let mut keys: Vec<&str> = vec!["class_name", "collection_class", "member"];
    for k in SCALAR_KEYS.iter().chain(BLOCK_KEYS.iter()) {
        if !keys.contains(k) && r.random_bool(0.5) {
            keys.push(k);
        }
    }
    if r.random_bool(0.3) {
        keys.push("custom_key");
    }
    keys.shuffle(r);
    for k in keys {
        if r.random_bool(0.2) {
            out.push_str("# comment\n");
        }
        if r.random_bool(0.2) {
            out.push('\n');
        }
        let is_block = BLOCK_KEYS.contains(&k) || (k == "custom_key" && r.random_bool(0.5));
        if !is_block {
            let value = if k == "class_name" { ident(r) } else { format!("{}  {}", ident(r), ident(r)) };
            out.push_str(&format!("set {k} {value}\n"));
            continue;
        }
        out.push_str(&format!("set {k}\n"));
        let n = r.random_range(0..6);
        for _ in 0..n {
            let line = if k == "member" {
                format!("  {} {};", ["@float@", "int", "unsigned long"][r.random_range(0..3)], ident(r))
            } else {
                body_line(r)
            };
            out.push_str(&line);
            out.push('\n');
        }
        out.push_str("..\n");
    }
    out
}
