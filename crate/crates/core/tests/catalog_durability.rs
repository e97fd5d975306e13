mod common;

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use gdf_core::catalog::{
    encode_line, replay, Catalog, CatalogApi, CatalogClient, CatalogState, ErrorCode, FragmentMeta, Record,
    ReplicaLocation, SyncPolicy, LOG_FILE_NAME,
};

use common::{apply_op, OpGen};

fn fragment(index: u32, crc: u32) -> FragmentMeta {
    FragmentMeta {
        index,
        size_bytes: 64,
        crc32: crc,
        replicas: vec![ReplicaLocation { node_id: "n0".into(), path: format!("/r/{index}"), crc32: crc }],
    }
}

fn populate(dir: &Path, n_ops: usize, seed: u64) -> CatalogState {
    let cat = Catalog::open_with(dir, SyncPolicy::Flush).unwrap();
    let mut gen = OpGen::new(seed);
    for _ in 0..n_ops {
        apply_op(&cat, &gen.next_op());
    }
    cat.snapshot()
}

#[test]
fn reopen_reproduces_state() {
    let dir = tempfile::tempdir().unwrap();
    let live = populate(dir.path(), 800, 1);
    live.check_invariants().unwrap();
    let reopened = Catalog::open(dir.path()).unwrap().snapshot();
    assert_eq!(reopened.canonical_json(), live.canonical_json());
}

#[test]
fn torn_tail_is_discarded_and_appends_continue() {
    let dir = tempfile::tempdir().unwrap();
    let before = populate(dir.path(), 200, 2);
    let log = dir.path().join(LOG_FILE_NAME);
    let good_len = fs::metadata(&log).unwrap().len();
    // Half of a would-be next record, no newline.
    let next = encode_line(9999, &Record::Register { lfn: "/torn".into(), fragments: vec![fragment(0, 1)] });
    OpenOptions::new().append(true).open(&log).unwrap().write_all(&next.as_bytes()[..next.len() / 2]).unwrap();

    let cat = Catalog::open(dir.path()).unwrap();
    assert_eq!(cat.snapshot().canonical_json(), before.canonical_json());
    assert_eq!(fs::metadata(&log).unwrap().len(), good_len);
    cat.register_file("/after", vec![fragment(0, 7)]).unwrap();
    drop(cat);
    let again = Catalog::open(dir.path()).unwrap();
    assert_eq!(again.lookup("/after").unwrap().fragments[0].crc32, 7);
    assert_eq!(again.lookup("/torn").unwrap_err().code(), ErrorCode::UnknownFile);
    assert!(!replay(&fs::read(&log).unwrap()).unwrap().torn_tail);
}

#[test]
fn complete_final_line_with_bad_checksum_is_torn() {
    let dir = tempfile::tempdir().unwrap();
    let before = populate(dir.path(), 50, 3);
    let log = dir.path().join(LOG_FILE_NAME);
    let mut bytes = fs::read(&log).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x01;
    fs::write(&log, &bytes).unwrap();
    let r = replay(&bytes).unwrap();
    assert!(r.torn_tail);
    let reopened = Catalog::open(dir.path()).unwrap().snapshot();
    // Only the damaged final record is lost.
    assert_ne!(reopened.canonical_json(), before.canonical_json());
    assert_eq!(reopened.canonical_json(), r.state.canonical_json());
}

#[test]
fn corruption_before_the_tail_refuses_to_open() {
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path(), 50, 4);
    let log = dir.path().join(LOG_FILE_NAME);
    let mut bytes = fs::read(&log).unwrap();
    bytes[20] ^= 0x01;
    fs::write(&log, &bytes).unwrap();
    let err = Catalog::open(dir.path()).err().expect("open must fail");
    assert_eq!(err.code(), ErrorCode::CorruptRecord);
    // Nothing was truncated.
    assert_eq!(fs::read(&log).unwrap(), bytes);
}

#[test]
fn every_record_boundary_recovers_its_prefix() {
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path(), 300, 5);
    let image = fs::read(dir.path().join(LOG_FILE_NAME)).unwrap();
    let mut model = CatalogState::default();
    let mut end = 0;
    let mut seen = 0;
    for (i, line) in image.split_inclusive(|&b| b == b'\n').enumerate() {
        end += line.len();
        let r = replay(&image[..end]).unwrap();
        let json = std::str::from_utf8(&line[9..line.len() - 1]).unwrap();
        let v: serde_json::Value = serde_json::from_str(json).unwrap();
        let mut v = v.as_object().unwrap().clone();
        v.remove("seq");
        model.apply(&serde_json::from_value(serde_json::Value::Object(v)).unwrap()).unwrap();
        assert_eq!(r.records as usize, i + 1);
        assert_eq!(r.state.canonical_json(), model.canonical_json());
        seen += 1;
    }
    assert!(seen > 50);
}

struct Served {
    child: Child,
    addr: String,
}

fn spawn_dfctl(state_dir: &Path) -> Served {
    let mut child = Command::new(env!("CARGO_BIN_EXE_dfctl"))
        .args(["catalog", "serve", "--addr", "127.0.0.1:0", "--state-dir"])
        .arg(state_dir)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    Served { child, addr: line.trim().to_owned() }
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// SIGKILL a fsyncing catalog process mid-stream: every acknowledged
/// registration must be present after restart.
#[test]
fn sigkill_loses_no_acknowledged_registration() {
    let dir = tempfile::tempdir().unwrap();
    for round in 0..3 {
        let mut served = spawn_dfctl(dir.path());
        let acked = Mutex::new(Vec::new());
        let stop = AtomicBool::new(false);
        thread::scope(|s| {
            for w in 0..3 {
                let (acked, stop, addr) = (&acked, &stop, served.addr.clone());
                s.spawn(move || {
                    let c = CatalogClient::with_timeout(addr, Duration::from_secs(5));
                    let mut k = 0u32;
                    while !stop.load(Ordering::Relaxed) {
                        let lfn = format!("/r{round}/w{w}/{k}");
                        match c.register_file(&lfn, vec![fragment(0, k), fragment(1, k + 1)]) {
                            Ok(_) => acked.lock().unwrap().push(lfn),
                            Err(_) => break,
                        }
                        k += 1;
                    }
                });
            }
            thread::sleep(Duration::from_millis(300));
            served.child.kill().unwrap();
            served.child.wait().unwrap();
            stop.store(true, Ordering::Relaxed);
        });
        let acked = acked.into_inner().unwrap();
        assert!(!acked.is_empty(), "round {round}: nothing was acknowledged");
        let restarted = spawn_dfctl(dir.path());
        let c = CatalogClient::new(restarted.addr.clone());
        for lfn in &acked {
            let e = c.lookup(lfn).unwrap_or_else(|e| panic!("round {round}: lost {lfn}: {e}"));
            assert_eq!(e.n_fragments, 2);
        }
        let r = replay(&fs::read(dir.path().join(LOG_FILE_NAME)).unwrap()).unwrap();
        assert!(!r.torn_tail);
        r.state.check_invariants().unwrap();
    }
}
