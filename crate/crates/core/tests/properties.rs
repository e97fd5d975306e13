//! Property tests for the invariants that cut across modules.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;

use gdf_core::catalog::{replay, Catalog, CatalogApi, SyncPolicy, LOG_FILE_NAME};
use gdf_core::cli::config::{Flags, GlobalConfig};
use gdf_core::eventio::{read_events, write_events, Codec, EventRecord, Hit, HitCollection};
use proptest::prelude::*;

use common::{apply_op, OpGen};

fn finite_f32() -> impl Strategy<Value = f32> {
    any::<u32>().prop_map(f32::from_bits).prop_filter("finite", |v| v.is_finite())
}

fn hit() -> impl Strategy<Value = Hit> {
    (finite_f32(), finite_f32(), finite_f32(), finite_f32()).prop_map(|(a, b, c, d)| Hit {
        edep_abs: a,
        edep_gap: b,
        track_len_abs: c,
        track_len_gap: d,
    })
}

/// Consecutive events sharing one collection directory; zero-hit
/// collections included.
fn events() -> impl Strategy<Value = Vec<EventRecord>> {
    (1usize..4, 0u64..1_000_000, 1usize..12).prop_flat_map(|(n_coll, first, n)| {
        let per_event = prop::collection::vec(prop::collection::vec(hit(), 0..20), n_coll);
        prop::collection::vec(per_event, n).prop_map(move |evs| {
            evs.into_iter()
                .enumerate()
                .map(|(i, colls)| EventRecord {
                    event_id: first + i as u64,
                    collections: colls
                        .into_iter()
                        .enumerate()
                        .map(|(c, hits)| HitCollection { detector_name: format!("c{c}"), hits })
                        .collect(),
                })
                .collect()
        })
    })
}

fn codec() -> impl Strategy<Value = Codec> {
    prop_oneof![Just(Codec::Stored), Just(Codec::Deflate)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn event_round_trip_is_bit_exact(evs in events(), codec in codec(), epb in 1usize..6) {
        let mut buf = Vec::new();
        write_events(&mut buf, &evs, codec, epb).unwrap();
        let back = read_events(Cursor::new(&buf), None, None).unwrap();
        prop_assert!(common::all_bits_equal(&evs, &back));
    }

    #[test]
    fn selective_read_is_a_projection(evs in events(), codec in codec(), epb in 1usize..6, pick in 0usize..3) {
        let mut buf = Vec::new();
        write_events(&mut buf, &evs, codec, epb).unwrap();
        let name = evs[0].collections[pick % evs[0].collections.len()].detector_name.clone();
        let only = read_events(Cursor::new(&buf), Some(&[name.as_str()]), None).unwrap();
        let projected: Vec<EventRecord> = evs
            .iter()
            .map(|e| EventRecord {
                event_id: e.event_id,
                collections: e.collections.iter().filter(|c| c.detector_name == name).cloned().collect(),
            })
            .collect();
        prop_assert!(common::all_bits_equal(&projected, &only));
    }

    #[test]
    fn catalog_replay_equals_live_state(seed in any::<u64>(), n_ops in 1usize..250) {
        let dir = tempfile::tempdir().unwrap();
        let cat = Catalog::open_with(dir.path(), SyncPolicy::Flush).unwrap();
        let mut gen = OpGen::new(seed);
        for _ in 0..n_ops {
            apply_op(&cat, &gen.next_op());
            // Completeness and checksum coherence after every mutation.
            prop_assert!(cat.snapshot().check_invariants().is_ok());
        }
        let live = cat.snapshot();
        drop(cat);
        let replayed = replay(&fs::read(dir.path().join(LOG_FILE_NAME)).unwrap()).unwrap();
        prop_assert_eq!(replayed.state.canonical_json(), live.canonical_json());
        let reopened = Catalog::open(dir.path()).unwrap();
        prop_assert_eq!(reopened.snapshot().canonical_json(), live.canonical_json());
        for e in reopened.list_files("*").unwrap() {
            prop_assert!(e.check_invariants().is_ok());
        }
    }

    #[test]
    fn config_precedence(flag in prop::option::of("[a-z]{1,6}"), env in prop::option::of("[a-z]{1,6}"), file in prop::option::of("[a-z]{1,6}")) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("df.conf");
        fs::write(&path, file.as_ref().map(|f| format!("catalog = {f}\n")).unwrap_or_default()).unwrap();
        let mut vars = BTreeMap::new();
        vars.insert("DF_CONFIG".to_owned(), path.to_string_lossy().into_owned());
        if let Some(e) = &env {
            vars.insert("DF_CATALOG".to_owned(), e.clone());
        }
        let flags = Flags { catalog: flag.clone(), ..Flags::default() };
        let cfg = GlobalConfig::resolve(&flags, |k| vars.get(k).cloned()).unwrap();
        let expected = flag.or(env).or(file).unwrap_or_else(|| gdf_core::cli::config::DEFAULT_CATALOG.to_owned());
        prop_assert_eq!(cfg.catalog_addr, expected);
    }
}
