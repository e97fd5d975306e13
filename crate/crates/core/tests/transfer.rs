mod common;

use std::fs;
use std::time::Duration;

use gdf_core::bench::EmbeddedCluster;
use gdf_core::catalog::{CatalogApi, FragmentMeta};
use gdf_core::storage::NodeClient;
use gdf_core::transfer::{self, TransferError};
use rand::RngCore;

const T: Duration = Duration::from_secs(20);

/// Put `n` random fragments of `size` bytes on nodes 0..n and register them.
fn seed_file(cluster: &EmbeddedCluster, lfn: &str, n: u32, size: usize) -> Vec<Vec<u8>> {
    let mut r = common::rng(n as u64 * 31 + size as u64);
    let mut datas = Vec::new();
    let mut frags: Vec<FragmentMeta> = Vec::new();
    for i in 0..n {
        let node = &cluster.nodes()[i as usize];
        let mut data = vec![0u8; size];
        r.fill_bytes(&mut data);
        let receipt = NodeClient::connect(&node.address, T).unwrap().put(lfn, i, &data).unwrap();
        frags.push(receipt.into_fragment_meta(i, &node.node_id));
        datas.push(data);
    }
    cluster.catalog().register_file(lfn, frags).unwrap();
    datas
}

fn ids(cluster: &EmbeddedCluster, range: std::ops::Range<usize>) -> Vec<String> {
    cluster.nodes()[range].iter().map(|n| n.node_id.clone()).collect()
}

#[test]
fn replicates_and_registers_every_fragment() {
    let cluster = EmbeddedCluster::spawn(8, &[]).unwrap();
    let datas = seed_file(&cluster, "/t/eight", 4, 1 << 20);
    let dests = ids(&cluster, 4..8);
    let plan = transfer::plan_for(cluster.catalog().as_ref(), "/t/eight", &dests, 2).unwrap();
    assert_eq!(plan.n_streams, 2);
    assert!(plan.assignments.iter().all(|a| !a.noop && a.dest_node == dests[a.fragment_index as usize]));
    let report = transfer::execute(&plan, cluster.catalog().as_ref(), T).unwrap();
    assert!(report.verified);
    assert_eq!(report.total_bytes, 4 << 20);
    assert!(transfer::verify(cluster.catalog().as_ref(), "/t/eight", &dests, T).unwrap());
    let entry = cluster.catalog().lookup("/t/eight").unwrap();
    for (f, data) in entry.fragments.iter().zip(&datas) {
        assert_eq!(f.replicas.len(), 2);
        let dest = &cluster.nodes()[4 + f.index as usize];
        let copy = NodeClient::connect(&dest.address, T).unwrap().get("/t/eight", f.index, 0, 0).unwrap();
        assert_eq!(&copy, data);
    }
}

#[test]
fn rerun_is_a_noop() {
    let cluster = EmbeddedCluster::spawn(4, &[]).unwrap();
    seed_file(&cluster, "/t/again", 2, 100_000);
    let dests = ids(&cluster, 2..4);
    let cat = cluster.catalog().as_ref();
    transfer::execute(&transfer::plan_for(cat, "/t/again", &dests, 2).unwrap(), cat, T).unwrap();
    let plan = transfer::plan_for(cat, "/t/again", &dests, 2).unwrap();
    assert!(plan.assignments.iter().all(|a| a.noop));
    let report = transfer::execute(&plan, cat, T).unwrap();
    assert_eq!(report.total_bytes, 0);
    assert!(report.per_stream.iter().all(|s| s.noop && s.error.is_none()));
    assert_eq!(cat.lookup("/t/again").unwrap().fragments[0].replicas.len(), 2);
}

#[test]
fn corrupt_source_is_not_registered() {
    let cluster = EmbeddedCluster::spawn(4, &[]).unwrap();
    seed_file(&cluster, "/t/bad", 2, 200_000);
    // Flip a byte of fragment 1 behind the node's back.
    let path = cluster.store(1).handle("/t/bad", 1).local_path;
    let mut bytes = fs::read(&path).unwrap();
    bytes[1234] ^= 0xFF;
    fs::write(&path, &bytes).unwrap();

    let dests = ids(&cluster, 2..4);
    let cat = cluster.catalog().as_ref();
    let plan = transfer::plan_for(cat, "/t/bad", &dests, 2).unwrap();
    let report = match transfer::execute(&plan, cat, T) {
        Err(TransferError::PartialFailure(r)) => r,
        other => panic!("expected a partial failure, got {other:?}"),
    };
    let failed: Vec<_> = report.failed().map(|s| s.fragment_index).collect();
    assert_eq!(failed, vec![1]);
    assert!(report.failed().next().unwrap().error.as_deref().unwrap().contains("checksum"));
    let entry = cat.lookup("/t/bad").unwrap();
    assert_eq!(entry.fragments[0].replicas.len(), 2);
    assert_eq!(entry.fragments[1].replicas.len(), 1);
    assert!(!transfer::verify(cat, "/t/bad", &dests, T).unwrap());
}

#[test]
fn verify_detects_damage_after_replication() {
    let cluster = EmbeddedCluster::spawn(2, &[]).unwrap();
    seed_file(&cluster, "/t/rot", 1, 50_000);
    let dests = ids(&cluster, 1..2);
    let cat = cluster.catalog().as_ref();
    transfer::execute(&transfer::plan_for(cat, "/t/rot", &dests, 1).unwrap(), cat, T).unwrap();
    assert!(transfer::verify(cat, "/t/rot", &dests, T).unwrap());
    let path = cluster.store(1).handle("/t/rot", 0).local_path;
    fs::write(&path, b"rotted").unwrap();
    assert!(!transfer::verify(cat, "/t/rot", &dests, T).unwrap());
    // The untouched original still verifies.
    assert!(transfer::verify(cat, "/t/rot", &ids(&cluster, 0..1), T).unwrap());
}

#[test]
fn plan_errors() {
    let cluster = EmbeddedCluster::spawn(2, &[]).unwrap();
    seed_file(&cluster, "/t/p", 1, 10);
    let cat = cluster.catalog().as_ref();
    assert!(matches!(transfer::plan_for(cat, "/t/p", &[], 1), Err(TransferError::NoDestination)));
    assert!(matches!(transfer::plan_for(cat, "/t/none", &ids(&cluster, 1..2), 1), Err(TransferError::UnknownFile(_))));
    let plan = transfer::plan_for(cat, "/t/p", &["ghost".to_owned()], 1).unwrap();
    assert!(matches!(transfer::execute(&plan, cat, T), Err(TransferError::UnknownNode(_))));
}

#[test]
fn csv_has_one_row_per_fragment_and_an_aggregate() {
    let cluster = EmbeddedCluster::spawn(6, &[]).unwrap();
    seed_file(&cluster, "/t/csv", 3, 30_000);
    let cat = cluster.catalog().as_ref();
    let plan = transfer::plan_for(cat, "/t/csv", &ids(&cluster, 3..6), 3).unwrap();
    let report = transfer::execute(&plan, cat, T).unwrap();
    let mut out = Vec::new();
    transfer::write_csv(&report, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[4].starts_with("aggregate"), "{text}");
}
