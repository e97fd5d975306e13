//! Append-only catalog record log.
//!
//! One record per line: `<crc32 as 8 lowercase hex digits> <json>\n`, where the
//! checksum covers the JSON bytes and the JSON object has the fixed field
//! order `seq`, `op`, then the operation's fields. `seq` starts at 1 and
//! increases by one per record.
//!
//! Replay stops quietly at a torn final record (no trailing newline, or a
//! final line that fails its checksum or does not parse). Any other bad line
//! is reported as `CorruptRecord`.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CatalogError, CatalogState, FragmentMeta, NodeInfo, ReplicaLocation};
use crate::crc::crc32;

pub const LOG_FILE_NAME: &str = "catalog.log";

/// One logged mutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Record {
    Register { lfn: String, fragments: Vec<FragmentMeta> },
    AddReplica { lfn: String, index: u32, location: ReplicaLocation },
    RemoveReplica { lfn: String, index: u32, node_id: String },
    Node { node: NodeInfo },
}

#[derive(Serialize)]
struct LineOut<'a> {
    seq: u64,
    #[serde(flatten)]
    record: &'a Record,
}

#[derive(Deserialize)]
struct LineIn {
    seq: u64,
    #[serde(flatten)]
    record: Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SyncPolicy {
    /// `fdatasync` after every record, before the mutation is acknowledged.
    #[default]
    Fsync,
    /// Write through to the OS only. For tests and scratch catalogs.
    Flush,
}

/// Encode one record as a complete log line, newline included.
pub fn encode_line(seq: u64, record: &Record) -> String {
    let json = serde_json::to_string(&LineOut { seq, record }).expect("record serializes");
    format!("{:08x} {json}\n", crc32(json.as_bytes()))
}

fn decode_line(line: &[u8]) -> Result<(u64, Record), String> {
    let text = std::str::from_utf8(line).map_err(|_| "not utf-8".to_owned())?;
    let (crc_hex, json) = text.split_once(' ').ok_or("missing checksum field")?;
    if crc_hex.len() != 8 {
        return Err("bad checksum field".into());
    }
    let want = u32::from_str_radix(crc_hex, 16).map_err(|_| "bad checksum field".to_owned())?;
    if crc32(json.as_bytes()) != want {
        return Err("checksum mismatch".into());
    }
    let parsed: LineIn = serde_json::from_str(json).map_err(|e| e.to_string())?;
    Ok((parsed.seq, parsed.record))
}

/// Result of replaying a log image.
#[derive(Debug, Clone)]
pub struct Replay {
    pub state: CatalogState,
    pub records: u64,
    /// Length of the prefix made of complete, valid records.
    pub valid_len: u64,
    pub torn_tail: bool,
}

/// Rebuild catalog state from the bytes of a log file.
pub fn replay(bytes: &[u8]) -> Result<Replay, CatalogError> {
    let mut state = CatalogState::default();
    let mut pos = 0usize;
    let mut records = 0u64;
    let mut torn_tail = false;
    let mut line_no = 0usize;
    while pos < bytes.len() {
        let Some(rel_end) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            torn_tail = true;
            break;
        };
        let end = pos + rel_end;
        line_no += 1;
        let is_last = end + 1 == bytes.len();
        let (seq, record) = match decode_line(&bytes[pos..end]) {
            Ok(r) => r,
            Err(_) if is_last => {
                torn_tail = true;
                break;
            }
            Err(reason) => return Err(CatalogError::CorruptRecord { line: line_no, reason }),
        };
        if seq != records + 1 {
            return Err(CatalogError::CorruptRecord {
                line: line_no,
                reason: format!("expected seq {}, found {seq}", records + 1),
            });
        }
        state.apply(&record).map_err(|e| CatalogError::CorruptRecord {
            line: line_no,
            reason: format!("record does not apply: {e}"),
        })?;
        records += 1;
        pos = end + 1;
    }
    Ok(Replay { state, records, valid_len: pos as u64, torn_tail })
}

pub(super) struct LogWriter {
    file: File,
    len: u64,
    next_seq: u64,
    sync: SyncPolicy,
}

impl LogWriter {
    pub(super) fn append(&mut self, record: &Record) -> Result<(), CatalogError> {
        let line = encode_line(self.next_seq, record);
        let written = self.file.write_all(line.as_bytes()).and_then(|()| match self.sync {
            SyncPolicy::Fsync => self.file.sync_data(),
            SyncPolicy::Flush => self.file.flush(),
        });
        if let Err(e) = written {
            // Do not leave a partial line for the next append to glue onto.
            let _ = self.file.set_len(self.len);
            return Err(e.into());
        }
        self.len += line.len() as u64;
        self.next_seq += 1;
        Ok(())
    }
}

/// Replay `<dir>/catalog.log`, cut off any torn tail, and open it for appending.
pub(super) fn open_log(
    dir: &Path,
    sync: SyncPolicy,
) -> Result<(CatalogState, LogWriter), CatalogError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(LOG_FILE_NAME);
    let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let replayed = replay(&bytes)?;
    if replayed.valid_len < bytes.len() as u64 {
        ::log::warn!(
            "{}: discarding {} bytes of torn final record",
            path.display(),
            bytes.len() as u64 - replayed.valid_len
        );
        file.set_len(replayed.valid_len)?;
        file.sync_all()?;
    }
    let writer = LogWriter {
        file,
        len: replayed.valid_len,
        next_seq: replayed.records + 1,
        sync,
    };
    Ok((replayed.state, writer))
}
