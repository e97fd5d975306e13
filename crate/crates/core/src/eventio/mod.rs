//! Columnar event-record files.
//!
//! Events hold named hit collections; every block of events stores each
//! collection as its own checksummed, optionally deflated segment, so a reader
//! can decode one collection without touching the others.

mod format;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::format::{
    read_events, write_events, EventReader, EventWriter, BLOCK_MAGIC_LEN, FILE_MAGIC, FOOTER_MAGIC,
    FORMAT_VERSION, TRAILER_MAGIC,
};
pub use self::synth::{generate_synthetic, quantize, SyntheticEvents, DEFAULT_COLLECTION};

/// Bytes per hit on the wire: four little-endian binary32 values.
pub const HIT_BYTES: usize = 16;

/// One calorimeter hit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Hit {
    pub edep_abs: f32,
    pub edep_gap: f32,
    pub track_len_abs: f32,
    pub track_len_gap: f32,
}

impl Hit {
    pub fn values(&self) -> [f32; 4] {
        [self.edep_abs, self.edep_gap, self.track_len_abs, self.track_len_gap]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Bitwise equality (distinguishes `0.0` from `-0.0`).
    pub fn bits_eq(&self, other: &Hit) -> bool {
        self.values().iter().zip(other.values()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HitCollection {
    pub detector_name: String,
    pub hits: Vec<Hit>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: u64,
    pub collections: Vec<HitCollection>,
}

impl EventRecord {
    pub fn collection(&self, name: &str) -> Option<&HitCollection> {
        self.collections.iter().find(|c| c.detector_name == name)
    }

    /// Bitwise equality of ids, names and every hit value.
    pub fn bits_eq(&self, other: &EventRecord) -> bool {
        self.event_id == other.event_id
            && self.collections.len() == other.collections.len()
            && self.collections.iter().zip(&other.collections).all(|(a, b)| {
                a.detector_name == b.detector_name
                    && a.hits.len() == b.hits.len()
                    && a.hits.iter().zip(&b.hits).all(|(x, y)| x.bits_eq(y))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Stored = 0,
    #[default]
    Deflate = 1,
}

impl Codec {
    pub fn from_u8(b: u8) -> Option<Codec> {
        match b {
            0 => Some(Codec::Stored),
            1 => Some(Codec::Deflate),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Codec::Stored => "stored",
            Codec::Deflate => "deflate",
        }
    }
}

impl std::str::FromStr for Codec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stored" => Ok(Codec::Stored),
            "deflate" => Ok(Codec::Deflate),
            other => Err(format!("unknown codec {other:?} (expected stored or deflate)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EventFileStats {
    pub n_events: u64,
    /// Uncompressed segment bytes (hit counts plus hit records).
    pub bytes_raw: u64,
    /// Stored segment bytes.
    pub bytes_compressed: u64,
    pub mean_event_bytes: f64,
    /// Whole file, including headers, footer and trailer.
    pub file_bytes: u64,
}

impl EventFileStats {
    /// Sum two files' statistics.
    pub fn merge(&self, other: &EventFileStats) -> EventFileStats {
        let n_events = self.n_events + other.n_events;
        let bytes_compressed = self.bytes_compressed + other.bytes_compressed;
        EventFileStats {
            n_events,
            bytes_raw: self.bytes_raw + other.bytes_raw,
            bytes_compressed,
            mean_event_bytes: if n_events == 0 { 0.0 } else { bytes_compressed as f64 / n_events as f64 },
            file_bytes: self.file_bytes + other.file_bytes,
        }
    }
}

/// Raw payload bytes over stored payload bytes.
pub fn compression_factor(stats: &EventFileStats) -> Result<f64, EventIoError> {
    if stats.bytes_compressed == 0 {
        return Err(EventIoError::DivisionByZero);
    }
    Ok(stats.bytes_raw as f64 / stats.bytes_compressed as f64)
}

#[derive(Debug, Error)]
pub enum EventIoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("no events to write")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("event {event_id}: collections do not match the file directory")]
    InconsistentDirectory { event_id: u64 },
    #[error("event ids must be consecutive: expected {expected}, got {got}")]
    NonContiguousEventId { expected: u64, got: u64 },
    #[error("event {event_id}: non-finite hit value")]
    NonFiniteHit { event_id: u64 },
    #[error("bad magic: {0}")]
    BadMagic(&'static str),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("checksum mismatch in block {block}, collection {collection:?}")]
    CrcMismatch { block: usize, collection: String },
    #[error("unknown collection {0:?}")]
    UnknownCollection(String),
    #[error("event range {start}..{end} outside 0..{n_events}")]
    RangeError { start: u64, end: u64, n_events: u64 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("compression factor undefined: no compressed bytes")]
    DivisionByZero,
}
