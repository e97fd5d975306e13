//! C ABI over `gdf-core`.
//!
//! Conventions:
//! - Every fallible call returns a `GdfStatus`; on failure a message is kept
//!   per thread and read with `gdf_last_error`.
//! - Handles are opaque and released with their `_free` function.
//! - Strings returned through `char **` are owned by the caller and released
//!   with `gdf_string_free`.
//! - Catalog records cross the boundary as JSON.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::time::Duration;

use gdf_core::catalog::{Catalog, CatalogApi, CatalogClient, CatalogError, ErrorCode};
use gdf_core::eventio::{self, Codec, EventFileStats, EventIoError, EventReader, EventWriter, SyntheticEvents};
use gdf_core::scheduler::{self, NodeResult};
use gdf_core::schemac::{self, SchemaError};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GdfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Utf8 = 3,
    NotFound = 4,
    AlreadyExists = 5,
    ChecksumMismatch = 6,
    Io = 7,
    Unreachable = 8,
    Corrupt = 9,
    ValidationFailed = 10,
    Json = 11,
    /// A catalog rule was violated (gapless indices, last replica, ...).
    Rejected = 12,
    BufferTooSmall = 13,
    Internal = 99,
}

/// Statistics of one event file.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GdfEventStats {
    pub n_events: u64,
    pub bytes_raw: u64,
    pub bytes_compressed: u64,
    pub mean_event_bytes: f64,
    pub file_bytes: u64,
}

impl From<EventFileStats> for GdfEventStats {
    fn from(s: EventFileStats) -> Self {
        GdfEventStats {
            n_events: s.n_events,
            bytes_raw: s.bytes_raw,
            bytes_compressed: s.bytes_compressed,
            mean_event_bytes: s.mean_event_bytes,
            file_bytes: s.file_bytes,
        }
    }
}

impl From<GdfEventStats> for EventFileStats {
    fn from(s: GdfEventStats) -> Self {
        EventFileStats {
            n_events: s.n_events,
            bytes_raw: s.bytes_raw,
            bytes_compressed: s.bytes_compressed,
            mean_event_bytes: s.mean_event_bytes,
            file_bytes: s.file_bytes,
        }
    }
}

/// One calorimeter hit, in file field order.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GdfHit {
    pub edep_abs: f32,
    pub edep_gap: f32,
    pub track_len_abs: f32,
    pub track_len_gap: f32,
}

/// Catalog handle: in-process (optionally persistent) or a network client.
pub struct GdfCatalog {
    inner: Box<dyn CatalogApi>,
}

/// Open event file.
pub struct GdfEventReader {
    inner: EventReader<File>,
}

struct Failure(GdfStatus, String);

impl Failure {
    fn new(status: GdfStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<CatalogError> for Failure {
    fn from(e: CatalogError) -> Self {
        let status = match e.code() {
            ErrorCode::UnknownFile | ErrorCode::UnknownFragmentIndex | ErrorCode::UnknownReplica => GdfStatus::NotFound,
            ErrorCode::DuplicateName => GdfStatus::AlreadyExists,
            ErrorCode::ChecksumMismatch => GdfStatus::ChecksumMismatch,
            ErrorCode::Io => GdfStatus::Io,
            ErrorCode::Unreachable => GdfStatus::Unreachable,
            ErrorCode::CorruptRecord | ErrorCode::Protocol => GdfStatus::Corrupt,
            ErrorCode::GapInFragmentIndices
            | ErrorCode::EmptyFragmentSet
            | ErrorCode::InitialReplicaCount
            | ErrorCode::LastReplica => GdfStatus::Rejected,
        };
        Failure(status, e.to_string())
    }
}

impl From<EventIoError> for Failure {
    fn from(e: EventIoError) -> Self {
        let status = match &e {
            EventIoError::Io(_) => GdfStatus::Io,
            EventIoError::BadMagic(_)
            | EventIoError::UnsupportedVersion(_)
            | EventIoError::CrcMismatch { .. }
            | EventIoError::Corrupt(_) => GdfStatus::Corrupt,
            EventIoError::UnknownCollection(_) => GdfStatus::NotFound,
            _ => GdfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        let status = match &e {
            SchemaError::ValidationFailed(_) | SchemaError::UnterminatedBlock { .. } | SchemaError::MalformedDirective { .. } => {
                GdfStatus::ValidationFailed
            }
            SchemaError::TemplateNotFound(_) => GdfStatus::NotFound,
            SchemaError::Io { .. } => GdfStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(GdfStatus::Json, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        let status = if e.kind() == std::io::ErrorKind::NotFound { GdfStatus::NotFound } else { GdfStatus::Io };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, recording any failure or panic.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GdfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GdfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".to_owned());
            GdfStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(GdfStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(GdfStatus::Utf8, format!("{name} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn str_array<'a>(p: *const *const c_char, n: usize, name: &str) -> Result<Vec<&'a str>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(Failure::new(GdfStatus::NullArgument, format!("{name} is NULL")));
    }
    std::slice::from_raw_parts(p, n).iter().enumerate().map(|(i, &s)| str_arg(s, &format!("{name}[{i}]"))).collect()
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(GdfStatus::NullArgument, format!("{name} is NULL")))
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| Failure::new(GdfStatus::Internal, "string contains NUL"))
}

unsafe fn write_json<T: Serialize>(out: *mut *mut c_char, value: &T) -> Result<(), Failure> {
    if out.is_null() {
        return Ok(());
    }
    *out = to_c_string(serde_json::to_string(value)?)?;
    Ok(())
}

unsafe fn json_arg<T: DeserializeOwned>(p: *const c_char, name: &str) -> Result<T, Failure> {
    Ok(serde_json::from_str(str_arg(p, name)?)?)
}

unsafe fn catalog<'a>(h: *const GdfCatalog) -> Result<&'a dyn CatalogApi, Failure> {
    h.as_ref()
        .map(|c| c.inner.as_ref())
        .ok_or_else(|| Failure::new(GdfStatus::NullArgument, "catalog handle is NULL"))
}

/// Message of the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call on this thread; do not free.
#[no_mangle]
pub extern "C" fn gdf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn gdf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn gdf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// CRC-32 (IEEE, reflected) of `len` bytes; NULL with `len == 0` is allowed.
#[no_mangle]
pub unsafe extern "C" fn gdf_crc32(data: *const u8, len: usize) -> u32 {
    if len == 0 || data.is_null() {
        return gdf_core::crc::crc32(&[]);
    }
    gdf_core::crc::crc32(std::slice::from_raw_parts(data, len))
}

/// Open an in-process catalog. `state_dir` NULL means in-memory only;
/// otherwise the record log in that directory is replayed and appended.
#[no_mangle]
pub unsafe extern "C" fn gdf_catalog_open(state_dir: *const c_char, out: *mut *mut GdfCatalog) -> GdfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner: Box<dyn CatalogApi> = match opt_str_arg(state_dir, "state_dir")? {
            None => Box::new(Catalog::in_memory()),
            Some(dir) => Box::new(Catalog::open(dir)?),
        };
        *out = Box::into_raw(Box::new(GdfCatalog { inner }));
        Ok(())
    })
}

/// Connect to a catalog service at `addr` (`host:port`).
#[no_mangle]
pub unsafe extern "C" fn gdf_catalog_connect(
    addr: *const c_char,
    timeout_seconds: f64,
    out: *mut *mut GdfCatalog,
) -> GdfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let addr = str_arg(addr, "addr")?;
        if !(timeout_seconds.is_finite() && timeout_seconds > 0.0) {
            return Err(Failure::new(GdfStatus::InvalidArgument, "timeout_seconds must be positive"));
        }
        let client = CatalogClient::connect(addr, Duration::from_secs_f64(timeout_seconds))?;
        *out = Box::into_raw(Box::new(GdfCatalog { inner: Box::new(client) }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdf_catalog_free(h: *mut GdfCatalog) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Register `lfn` from a JSON array of fragments
/// (`[{"index":0,"size_bytes":..,"crc32":..,"replicas":[{"node_id":..,"path":..,"crc32":..}]}]`).
/// On success `entry_json` (if not NULL) receives the new entry.
#[no_mangle]
pub unsafe extern "C" fn gdf_catalog_register_file(
    h: *const GdfCatalog,
    lfn: *const c_char,
    fragments_json: *const c_char,
    entry_json: *mut *mut c_char,
) -> GdfStatus {
    guard(|| {
        let entry = catalog(h)?.register_file(str_arg(lfn, "lfn")?, json_arg(fragments_json, "fragments_json")?)?;
        write_json(entry_json, &entry)
    })
}

/// Add a replica (`{"node_id":..,"path":..,"crc32":..}`) of fragment `index`.
#[no_mangle]
pub unsafe extern "C" fn gdf_catalog_add_replica(
    h: *const GdfCatalog,
    lfn: *const c_char,
    index: u32,
    location_json: *const c_char,
    entry_json: *mut *mut c_char,
) -> GdfStatus {
    guard(|| {
        let entry = catalog(h)?.add_replica(str_arg(lfn, "lfn")?, index, json_arg(location_json, "location_json")?)?;
        write_json(entry_json, &entry)
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdf_catalog_remove_replica(
    h: *const GdfCatalog,
    lfn: *const c_char,
    index: u32,
    node_id: *const c_char,
    entry_json: *mut *mut c_char,
) -> GdfStatus {
    guard(|| {
        let entry = catalog(h)?.remove_replica(str_arg(lfn, "lfn")?, index, str_arg(node_id, "node_id")?)?;
        write_json(entry_json, &entry)
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdf_catalog_lookup(
    h: *const GdfCatalog,
    lfn: *const c_char,
    entry_json: *mut *mut c_char,
) -> GdfStatus {
    guard(|| {
        let entry = catalog(h)?.lookup(str_arg(lfn, "lfn")?)?;
        write_json(entry_json, &entry)
    })
}

/// Entries whose name matches the glob `pattern`, as a JSON array sorted by name.
#[no_mangle]
pub unsafe extern "C" fn gdf_catalog_list(
    h: *const GdfCatalog,
    pattern: *const c_char,
    entries_json: *mut *mut c_char,
) -> GdfStatus {
    guard(|| {
        let entries = catalog(h)?.list_files(str_arg(pattern, "pattern")?)?;
        write_json(entries_json, &entries)
    })
}

/// Insert or replace a node record
/// (`{"node_id":..,"address":..,"storage_root":..,"rate_limit_bps":..,"status":"up"}`).
#[no_mangle]
pub unsafe extern "C" fn gdf_catalog_register_node(
    h: *const GdfCatalog,
    node_json: *const c_char,
    stored_json: *mut *mut c_char,
) -> GdfStatus {
    guard(|| {
        let node = catalog(h)?.register_node(json_arg(node_json, "node_json")?)?;
        write_json(stored_json, &node)
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdf_catalog_nodes(h: *const GdfCatalog, nodes_json: *mut *mut c_char) -> GdfStatus {
    guard(|| {
        let nodes = catalog(h)?.nodes()?;
        write_json(nodes_json, &nodes)
    })
}

/// Write `n_events` synthetic events to `path`. `codec`: 0 stored, 1 deflate.
/// `stats` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn gdf_events_generate(
    path: *const c_char,
    n_events: u64,
    hits_per_event: u32,
    seed: u64,
    quantize_bits: u32,
    codec: u8,
    events_per_block: u32,
    stats: *mut GdfEventStats,
) -> GdfStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let codec = Codec::from_u8(codec)
            .ok_or_else(|| Failure::new(GdfStatus::InvalidArgument, format!("unknown codec {codec}")))?;
        let events = SyntheticEvents::new(n_events, hits_per_event as usize, seed, quantize_bits)?;
        let sink = BufWriter::new(File::create(&path)?);
        let mut w = EventWriter::new(sink, vec![eventio::DEFAULT_COLLECTION.to_owned()], codec, events_per_block as usize)?;
        for e in events {
            w.push(&e)?;
        }
        let (s, sink) = w.finish()?;
        sink.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        if let Some(out) = stats.as_mut() {
            *out = s.into();
        }
        Ok(())
    })
}

/// Raw over stored payload bytes.
#[no_mangle]
pub unsafe extern "C" fn gdf_compression_factor(stats: *const GdfEventStats, out: *mut f64) -> GdfStatus {
    guard(|| {
        let s = *stats.as_ref().ok_or_else(|| Failure::new(GdfStatus::NullArgument, "stats is NULL"))?;
        *out_ptr(out, "out")? = eventio::compression_factor(&s.into())?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdf_event_reader_open(path: *const c_char, out: *mut *mut GdfEventReader) -> GdfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = EventReader::open(File::open(str_arg(path, "path")?)?)?;
        *out = Box::into_raw(Box::new(GdfEventReader { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdf_event_reader_free(r: *mut GdfEventReader) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

unsafe fn reader<'a>(r: *mut GdfEventReader) -> Result<&'a mut EventReader<File>, Failure> {
    r.as_mut().map(|r| &mut r.inner).ok_or_else(|| Failure::new(GdfStatus::NullArgument, "reader is NULL"))
}

#[no_mangle]
pub unsafe extern "C" fn gdf_event_reader_n_events(r: *mut GdfEventReader, out: *mut u64) -> GdfStatus {
    guard(|| {
        *out_ptr(out, "out")? = reader(r)?.n_events();
        Ok(())
    })
}

/// Whole-file statistics (reads block headers only).
#[no_mangle]
pub unsafe extern "C" fn gdf_event_reader_stats(r: *mut GdfEventReader, out: *mut GdfEventStats) -> GdfStatus {
    guard(|| {
        *out_ptr(out, "out")? = reader(r)?.stats()?.into();
        Ok(())
    })
}

/// Copy the hits of collection `collection` (NULL: the first) of the event at
/// ordinal `event` into `buf`. `n_hits` receives the hit count; when it
/// exceeds `capacity` nothing is copied and `BufferTooSmall` is returned.
/// Only the selected collection is decompressed.
#[no_mangle]
pub unsafe extern "C" fn gdf_event_reader_read_hits(
    r: *mut GdfEventReader,
    collection: *const c_char,
    event: u64,
    buf: *mut GdfHit,
    capacity: usize,
    n_hits: *mut usize,
) -> GdfStatus {
    guard(|| {
        let n_out = out_ptr(n_hits, "n_hits")?;
        let r = reader(r)?;
        let name = match opt_str_arg(collection, "collection")? {
            Some(n) => n.to_owned(),
            None => r
                .directory()
                .first()
                .cloned()
                .ok_or_else(|| Failure::new(GdfStatus::NotFound, "file has no collections"))?,
        };
        let events = r.read_events(Some(&[name.as_str()]), event..event.saturating_add(1))?;
        let hits = &events[0].collections[0].hits;
        *n_out = hits.len();
        if hits.len() > capacity {
            return Err(Failure::new(GdfStatus::BufferTooSmall, format!("{} hits, capacity {capacity}", hits.len())));
        }
        if !hits.is_empty() {
            if buf.is_null() {
                return Err(Failure::new(GdfStatus::NullArgument, "buf is NULL"));
            }
            let dst = std::slice::from_raw_parts_mut(buf, hits.len());
            for (d, h) in dst.iter_mut().zip(hits) {
                *d = GdfHit {
                    edep_abs: h.edep_abs,
                    edep_gap: h.edep_gap,
                    track_len_abs: h.track_len_abs,
                    track_len_gap: h.track_len_gap,
                };
            }
        }
        Ok(())
    })
}

/// Compile a `.rootio` file. Templates and `name=value` defines are arrays
/// of `n_*` strings. Diagnostics (one `FILE:LINE: severity: message` per
/// line) are returned through `diagnostics` when not NULL, also on
/// `ValidationFailed`.
#[no_mangle]
pub unsafe extern "C" fn gdf_schemac_compile(
    schema_path: *const c_char,
    templates: *const *const c_char,
    n_templates: usize,
    out_dir: *const c_char,
    defines: *const *const c_char,
    n_defines: usize,
    diagnostics: *mut *mut c_char,
) -> GdfStatus {
    guard(|| {
        let file = str_arg(schema_path, "schema_path")?;
        let templates: Vec<PathBuf> = str_array(templates, n_templates, "templates")?.into_iter().map(PathBuf::from).collect();
        let out_dir = str_arg(out_dir, "out_dir")?;
        let defines = str_array(defines, n_defines, "defines")?
            .into_iter()
            .map(|d| schemac::parse_define(d).map_err(|e| Failure::new(GdfStatus::InvalidArgument, e)))
            .collect::<Result<Vec<_>, _>>()?;
        let render = |diags: &[schemac::Diagnostic]| diags.iter().map(|d| d.render(file) + "\n").collect::<String>();
        let (result, text) = match schemac::compile(file.as_ref(), &templates, out_dir.as_ref(), &defines) {
            Ok(r) => (Ok(()), render(&r.diagnostics)),
            Err(SchemaError::ValidationFailed(d)) => {
                let text = render(&d);
                (Err(Failure::new(GdfStatus::ValidationFailed, "schema validation failed")), text)
            }
            Err(e) => (Err(e.into()), String::new()),
        };
        if !diagnostics.is_null() {
            *diagnostics = to_c_string(text)?;
        }
        result
    })
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(GdfStatus::NullArgument, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Completion of `n` nodes working in parallel, node `i` moving `bytes[i]`
/// at `rates_bps[i]`: the slowest node's time, and total bytes over it.
#[no_mangle]
pub unsafe extern "C" fn gdf_predict_completion(
    bytes: *const u64,
    rates_bps: *const f64,
    n: usize,
    wall_seconds: *mut f64,
    aggregate_bps: *mut f64,
) -> GdfStatus {
    guard(|| {
        let bytes = slice_arg(bytes, n, "bytes")?;
        let rates = slice_arg(rates_bps, n, "rates_bps")?;
        let key = |i: usize| format!("{i:08}");
        let loads = bytes.iter().enumerate().map(|(i, &b)| (key(i), b)).collect();
        let rates = rates.iter().enumerate().map(|(i, &r)| (key(i), r)).collect();
        let p = scheduler::predict_from_loads(&loads, &rates)
            .map_err(|e| Failure::new(GdfStatus::InvalidArgument, e.to_string()))?;
        *out_ptr(wall_seconds, "wall_seconds")? = p.wall_seconds;
        *out_ptr(aggregate_bps, "aggregate_bps")? = p.aggregate_bps;
        Ok(())
    })
}

/// Flag nodes whose rate `bytes[i] / seconds[i]` is below `threshold` times
/// the median rate. `flags[i]` is set to 1 for stragglers, 0 otherwise;
/// `median_bps` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn gdf_detect_stragglers(
    bytes: *const u64,
    seconds: *const f64,
    n: usize,
    threshold: f64,
    flags: *mut u8,
    median_bps: *mut f64,
) -> GdfStatus {
    guard(|| {
        let bytes = slice_arg(bytes, n, "bytes")?;
        let seconds = slice_arg(seconds, n, "seconds")?;
        if n > 0 && flags.is_null() {
            return Err(Failure::new(GdfStatus::NullArgument, "flags is NULL"));
        }
        let per_node: Vec<NodeResult> =
            (0..n).map(|i| NodeResult::new(format!("{i:08}"), bytes[i], seconds[i])).collect();
        let report = scheduler::detect_stragglers(&per_node, threshold)
            .map_err(|e| Failure::new(GdfStatus::InvalidArgument, e.to_string()))?;
        if n > 0 {
            let out = std::slice::from_raw_parts_mut(flags, n);
            for (f, r) in out.iter_mut().zip(&per_node) {
                *f = report.is_straggler(&r.node_id) as u8;
            }
        }
        if let Some(m) = median_bps.as_mut() {
            *m = report.median_bps;
        }
        Ok(())
    })
}
