use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use gdf_ffi::*;
use serde_json::Value;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_owned();
    gdf_string_free(s);
    out
}

fn last_error() -> Option<String> {
    let p = gdf_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

const ONE_FRAGMENT: &str =
    r#"[{"index":0,"size_bytes":10,"crc32":42,"replicas":[{"node_id":"n0","path":"/r/0","crc32":42}]}]"#;

#[test]
fn crc_matches_check_value() {
    let data = b"123456789";
    assert_eq!(unsafe { gdf_crc32(data.as_ptr(), data.len()) }, 0xCBF4_3926);
    assert_eq!(unsafe { gdf_crc32(ptr::null(), 0) }, 0);
}

#[test]
fn catalog_round_trip_through_json() {
    unsafe {
        let mut cat = ptr::null_mut();
        assert_eq!(gdf_catalog_open(ptr::null(), &mut cat), GdfStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(gdf_catalog_register_file(cat, c("/a/b").as_ptr(), c(ONE_FRAGMENT).as_ptr(), &mut out), GdfStatus::Ok);
        let entry: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(entry["n_fragments"], 1);
        assert_eq!(entry["total_size"], 10);

        let loc = c(r#"{"node_id":"n1","path":"/r/1","crc32":42}"#);
        assert_eq!(gdf_catalog_add_replica(cat, c("/a/b").as_ptr(), 0, loc.as_ptr(), ptr::null_mut()), GdfStatus::Ok);
        let bad = c(r#"{"node_id":"n2","path":"/r/2","crc32":41}"#);
        assert_eq!(gdf_catalog_add_replica(cat, c("/a/b").as_ptr(), 0, bad.as_ptr(), ptr::null_mut()), GdfStatus::ChecksumMismatch);
        assert!(last_error().unwrap().contains("checksum"));

        assert_eq!(gdf_catalog_list(cat, c("/a/*").as_ptr(), &mut out), GdfStatus::Ok);
        let list: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(list.as_array().unwrap().len(), 1);
        assert_eq!(list[0]["fragments"][0]["replicas"].as_array().unwrap().len(), 2);

        assert_eq!(gdf_catalog_remove_replica(cat, c("/a/b").as_ptr(), 0, c("n0").as_ptr(), ptr::null_mut()), GdfStatus::Ok);
        assert_eq!(gdf_catalog_remove_replica(cat, c("/a/b").as_ptr(), 0, c("n1").as_ptr(), ptr::null_mut()), GdfStatus::Rejected);

        assert_eq!(gdf_catalog_lookup(cat, c("/none").as_ptr(), &mut out), GdfStatus::NotFound);
        assert_eq!(gdf_catalog_register_file(cat, c("/a/b").as_ptr(), c(ONE_FRAGMENT).as_ptr(), ptr::null_mut()), GdfStatus::AlreadyExists);
        assert_eq!(gdf_catalog_register_file(cat, c("/x").as_ptr(), c("not json").as_ptr(), ptr::null_mut()), GdfStatus::Json);

        let node = c(r#"{"node_id":"n0","address":"127.0.0.1:1","storage_root":"/r","rate_limit_bps":0,"status":"up"}"#);
        assert_eq!(gdf_catalog_register_node(cat, node.as_ptr(), ptr::null_mut()), GdfStatus::Ok);
        assert_eq!(gdf_catalog_nodes(cat, &mut out), GdfStatus::Ok);
        assert_eq!(serde_json::from_str::<Value>(&take(out)).unwrap()[0]["node_id"], "n0");
        assert!(last_error().is_none());
        gdf_catalog_free(cat);
    }
}

#[test]
fn persistent_catalog_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let d = c(dir.path().to_str().unwrap());
    unsafe {
        let mut cat = ptr::null_mut();
        assert_eq!(gdf_catalog_open(d.as_ptr(), &mut cat), GdfStatus::Ok);
        assert_eq!(gdf_catalog_register_file(cat, c("/p").as_ptr(), c(ONE_FRAGMENT).as_ptr(), ptr::null_mut()), GdfStatus::Ok);
        gdf_catalog_free(cat);
        assert_eq!(gdf_catalog_open(d.as_ptr(), &mut cat), GdfStatus::Ok);
        assert_eq!(gdf_catalog_lookup(cat, c("/p").as_ptr(), ptr::null_mut()), GdfStatus::Ok);
        gdf_catalog_free(cat);
    }
}

#[test]
fn null_and_bad_arguments() {
    unsafe {
        assert_eq!(gdf_catalog_open(ptr::null(), ptr::null_mut()), GdfStatus::NullArgument);
        assert_eq!(gdf_catalog_lookup(ptr::null(), c("/x").as_ptr(), ptr::null_mut()), GdfStatus::NullArgument);
        assert!(last_error().unwrap().contains("catalog handle"));
        let mut cat = ptr::null_mut();
        assert_eq!(gdf_catalog_connect(c("127.0.0.1:1").as_ptr(), 0.5, &mut cat), GdfStatus::Unreachable);
        assert!(cat.is_null());
        assert_eq!(gdf_catalog_connect(c("127.0.0.1:1").as_ptr(), -1.0, &mut cat), GdfStatus::InvalidArgument);
        let bad_utf8 = [0xffu8, 0];
        assert_eq!(gdf_catalog_open(bad_utf8.as_ptr().cast(), &mut cat), GdfStatus::Utf8);
        gdf_catalog_free(ptr::null_mut());
        gdf_string_free(ptr::null_mut());
    }
}

#[test]
fn events_generate_and_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = c(dir.path().join("e.gdf").to_str().unwrap());
    unsafe {
        let mut stats = GdfEventStats::default();
        assert_eq!(gdf_events_generate(path.as_ptr(), 7, 12, 3, 10, 1, 4, &mut stats), GdfStatus::Ok);
        assert_eq!(stats.n_events, 7);
        let mut factor = 0.0;
        assert_eq!(gdf_compression_factor(&stats, &mut factor), GdfStatus::Ok);
        assert!(factor > 1.0);

        let mut r = ptr::null_mut();
        assert_eq!(gdf_event_reader_open(path.as_ptr(), &mut r), GdfStatus::Ok);
        let mut n = 0u64;
        assert_eq!(gdf_event_reader_n_events(r, &mut n), GdfStatus::Ok);
        assert_eq!(n, 7);
        let mut again = GdfEventStats::default();
        assert_eq!(gdf_event_reader_stats(r, &mut again), GdfStatus::Ok);
        assert_eq!(again, stats);

        let mut hits = vec![GdfHit::default(); 12];
        let mut got = 0usize;
        assert_eq!(gdf_event_reader_read_hits(r, ptr::null(), 6, hits.as_mut_ptr(), 4, &mut got), GdfStatus::BufferTooSmall);
        assert_eq!(got, 12);
        let name = c("calorimeter");
        assert_eq!(gdf_event_reader_read_hits(r, name.as_ptr(), 6, hits.as_mut_ptr(), 12, &mut got), GdfStatus::Ok);
        let expect = gdf_core::eventio::generate_synthetic(7, 12, 3, 10).unwrap();
        let h = expect[6].collections[0].hits[11];
        assert_eq!(
            (hits[11].edep_abs, hits[11].edep_gap, hits[11].track_len_abs, hits[11].track_len_gap),
            (h.edep_abs, h.edep_gap, h.track_len_abs, h.track_len_gap)
        );
        assert_eq!(gdf_event_reader_read_hits(r, c("nope").as_ptr(), 0, hits.as_mut_ptr(), 12, &mut got), GdfStatus::NotFound);
        assert_eq!(gdf_event_reader_read_hits(r, ptr::null(), 7, hits.as_mut_ptr(), 12, &mut got), GdfStatus::InvalidArgument);
        gdf_event_reader_free(r);

        assert_eq!(gdf_events_generate(path.as_ptr(), 1, 1, 0, 10, 9, 1, ptr::null_mut()), GdfStatus::InvalidArgument);
        let missing = c(dir.path().join("none.gdf").to_str().unwrap());
        assert_eq!(gdf_event_reader_open(missing.as_ptr(), &mut r), GdfStatus::NotFound);
    }
}

fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/schemac")
}

#[test]
fn schemac_compile_and_diagnostics() {
    let out = tempfile::tempdir().unwrap();
    let schema = c(core_fixtures().join("Pers01CalorHit.rootio").to_str().unwrap());
    let tmpl = c(core_fixtures().join("adapter.tmpl").to_str().unwrap());
    let define = c("float=double");
    let templates = [tmpl.as_ptr()];
    let defines = [define.as_ptr()];
    let out_dir = c(out.path().to_str().unwrap());
    unsafe {
        let mut diags = ptr::null_mut();
        let st = gdf_schemac_compile(schema.as_ptr(), templates.as_ptr(), 1, out_dir.as_ptr(), defines.as_ptr(), 1, &mut diags);
        assert_eq!(st, GdfStatus::Ok);
        take(diags);
        let rendered = std::fs::read_to_string(out.path().join("adapter.Pers01CalorHit.out")).unwrap();
        assert!(rendered.contains("double EdepAbs;"));

        let bad = out.path().join("bad.rootio");
        std::fs::write(&bad, "set class_name X\n").unwrap();
        let bad = c(bad.to_str().unwrap());
        let st = gdf_schemac_compile(bad.as_ptr(), ptr::null(), 0, out_dir.as_ptr(), ptr::null(), 0, &mut diags);
        assert_eq!(st, GdfStatus::ValidationFailed);
        let text = take(diags);
        assert!(text.lines().all(|l| l.contains(": error: ") || l.contains(": warning: ")), "{text}");
        assert!(text.contains("member missing"));
    }
}

#[test]
fn prediction_and_stragglers() {
    unsafe {
        let bytes = [100u64, 100, 300];
        let rates = [10.0, 20.0, 30.0];
        let (mut wall, mut agg) = (0.0, 0.0);
        assert_eq!(gdf_predict_completion(bytes.as_ptr(), rates.as_ptr(), 3, &mut wall, &mut agg), GdfStatus::Ok);
        assert_eq!(wall, 10.0);
        assert_eq!(agg, 50.0);
        let zero = [10.0, 0.0, 30.0];
        assert_eq!(gdf_predict_completion(bytes.as_ptr(), zero.as_ptr(), 3, &mut wall, &mut agg), GdfStatus::InvalidArgument);

        let b = [100u64, 100, 100, 100];
        let s = [1.0, 1.0, 1.0, 4.0];
        let mut flags = [9u8; 4];
        let mut median = 0.0;
        assert_eq!(gdf_detect_stragglers(b.as_ptr(), s.as_ptr(), 4, 0.5, flags.as_mut_ptr(), &mut median), GdfStatus::Ok);
        assert_eq!(flags, [0, 0, 0, 1]);
        assert_eq!(median, 100.0);
        assert_eq!(gdf_detect_stragglers(b.as_ptr(), s.as_ptr(), 4, 1.5, flags.as_mut_ptr(), ptr::null_mut()), GdfStatus::InvalidArgument);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(gdf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// Compile the C smoke program against the generated header and the static
/// library, then run it. Skipped when no C compiler or archive is present.
#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/gdf.h");
    assert!(header.exists(), "build script did not write {}", header.display());
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    // target/<profile>/deps/capi-* -> target/<profile>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let archive = profile_dir.join("libgdf_ffi.a");
    if !archive.exists() {
        eprintln!("skipping: {} not built", archive.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "cc failed: {}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).arg(tmp.path().join("c.gdf")).output().unwrap();
    assert!(run.status.success(), "smoke failed: {}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
