//! Byte layout (little-endian throughout):
//!
//! ```text
//! header   "GDFE" | version u16 = 1 | flags u16 = 0
//! block*   n_events u32 | n_collections u16 | codec u8 | pad u8
//!          (raw_len u32 | comp_len u32 | crc32 u32) per collection
//!          payload per collection, in directory order
//! footer   "GDFF" | n_collections u16 | (name_len u16 | name) per collection
//!          n_blocks u32 | (file_offset u64 | n_events u32) per block
//!          first_event_id u64
//! trailer  footer_offset u64 | "EOFD"
//! ```
//!
//! A raw collection segment is, for each event of the block, a u32 hit count
//! followed by that many 16-byte hits. The segment crc32 covers the stored
//! (compressed) bytes.

use std::io::{self, Read, Seek, SeekFrom, Write};
use std::ops::Range;

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::{Codec, EventFileStats, EventIoError, EventRecord, Hit, HitCollection, HIT_BYTES};
use crate::crc::crc32;

pub const FILE_MAGIC: &[u8; 4] = b"GDFE";
pub const FOOTER_MAGIC: &[u8; 4] = b"GDFF";
pub const TRAILER_MAGIC: &[u8; 4] = b"EOFD";
pub const FORMAT_VERSION: u16 = 1;
/// Fixed part of a block header, before the per-collection table.
pub const BLOCK_MAGIC_LEN: usize = 8;
const SEGMENT_ENTRY_LEN: usize = 12;
const TRAILER_LEN: u64 = 12;

struct Counting<W> {
    inner: W,
    written: u64,
}

impl<W: Write> Write for Counting<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Incremental writer: push events one at a time, then `finish`.
pub struct EventWriter<W: Write> {
    sink: Counting<W>,
    directory: Vec<String>,
    codec: Codec,
    events_per_block: usize,
    pending: Vec<Vec<u8>>,
    pending_events: u32,
    blocks: Vec<(u64, u32)>,
    first_event_id: Option<u64>,
    next_event_id: u64,
    stats: EventFileStats,
}

impl<W: Write> EventWriter<W> {
    pub fn new(
        sink: W,
        directory: Vec<String>,
        codec: Codec,
        events_per_block: usize,
    ) -> Result<Self, EventIoError> {
        if events_per_block == 0 || events_per_block > u32::MAX as usize {
            return Err(EventIoError::InvalidArgument("events_per_block must be in 1..=2^32-1".into()));
        }
        if directory.len() > u16::MAX as usize {
            return Err(EventIoError::InvalidArgument("too many collections".into()));
        }
        for (i, name) in directory.iter().enumerate() {
            if name.is_empty() || name.len() > u16::MAX as usize {
                return Err(EventIoError::InvalidArgument(format!("bad collection name {name:?}")));
            }
            if directory[..i].contains(name) {
                return Err(EventIoError::InvalidArgument(format!("duplicate collection {name:?}")));
            }
        }
        let mut sink = Counting { inner: sink, written: 0 };
        sink.write_all(FILE_MAGIC)?;
        sink.write_all(&FORMAT_VERSION.to_le_bytes())?;
        sink.write_all(&0u16.to_le_bytes())?;
        Ok(EventWriter {
            sink,
            pending: vec![Vec::new(); directory.len()],
            directory,
            codec,
            events_per_block,
            pending_events: 0,
            blocks: Vec::new(),
            first_event_id: None,
            next_event_id: 0,
            stats: EventFileStats::default(),
        })
    }

    pub fn push(&mut self, event: &EventRecord) -> Result<(), EventIoError> {
        let event_id = event.event_id;
        match self.first_event_id {
            None => self.first_event_id = Some(event_id),
            Some(_) if event_id != self.next_event_id => {
                return Err(EventIoError::NonContiguousEventId {
                    expected: self.next_event_id,
                    got: event_id,
                })
            }
            Some(_) => {}
        }
        let names_match = event.collections.len() == self.directory.len()
            && event.collections.iter().zip(&self.directory).all(|(c, d)| &c.detector_name == d);
        if !names_match {
            return Err(EventIoError::InconsistentDirectory { event_id });
        }
        for c in &event.collections {
            if c.hits.len() > u32::MAX as usize {
                return Err(EventIoError::InvalidArgument("collection over 2^32 hits".into()));
            }
            if !c.hits.iter().all(Hit::is_finite) {
                return Err(EventIoError::NonFiniteHit { event_id });
            }
        }
        for (buf, c) in self.pending.iter_mut().zip(&event.collections) {
            buf.reserve(4 + c.hits.len() * HIT_BYTES);
            buf.extend_from_slice(&(c.hits.len() as u32).to_le_bytes());
            for h in &c.hits {
                for v in h.values() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        self.next_event_id = event_id + 1;
        self.pending_events += 1;
        if self.pending_events as usize == self.events_per_block {
            self.flush_block()?;
        }
        Ok(())
    }

    fn flush_block(&mut self) -> Result<(), EventIoError> {
        if self.pending_events == 0 {
            return Ok(());
        }
        let offset = self.sink.written;
        let mut segments = Vec::with_capacity(self.pending.len());
        for raw in &mut self.pending {
            let raw = std::mem::take(raw);
            let raw_len = u32::try_from(raw.len())
                .map_err(|_| EventIoError::InvalidArgument("block segment over 4 GiB; lower events_per_block".into()))?;
            let stored = match self.codec {
                Codec::Stored => raw,
                Codec::Deflate => {
                    let mut enc = DeflateEncoder::new(Vec::with_capacity(raw.len() / 2), Compression::default());
                    enc.write_all(&raw)?;
                    enc.finish()?
                }
            };
            segments.push((raw_len, stored));
        }
        let mut head = Vec::with_capacity(BLOCK_MAGIC_LEN + SEGMENT_ENTRY_LEN * segments.len());
        head.extend_from_slice(&self.pending_events.to_le_bytes());
        head.extend_from_slice(&(segments.len() as u16).to_le_bytes());
        head.push(self.codec as u8);
        head.push(0);
        for (raw_len, stored) in &segments {
            head.extend_from_slice(&raw_len.to_le_bytes());
            head.extend_from_slice(&(stored.len() as u32).to_le_bytes());
            head.extend_from_slice(&crc32(stored).to_le_bytes());
        }
        self.sink.write_all(&head)?;
        for (raw_len, stored) in &segments {
            self.sink.write_all(stored)?;
            self.stats.bytes_raw += *raw_len as u64;
            self.stats.bytes_compressed += stored.len() as u64;
        }
        self.stats.n_events += self.pending_events as u64;
        self.blocks.push((offset, self.pending_events));
        self.pending_events = 0;
        Ok(())
    }

    /// Write the last block, footer and trailer; returns the file statistics.
    pub fn finish(mut self) -> Result<(EventFileStats, W), EventIoError> {
        self.flush_block()?;
        let Some(first_event_id) = self.first_event_id else {
            return Err(EventIoError::Empty);
        };
        let footer_offset = self.sink.written;
        let mut f = Vec::new();
        f.extend_from_slice(FOOTER_MAGIC);
        f.extend_from_slice(&(self.directory.len() as u16).to_le_bytes());
        for name in &self.directory {
            f.extend_from_slice(&(name.len() as u16).to_le_bytes());
            f.extend_from_slice(name.as_bytes());
        }
        let n_blocks = u32::try_from(self.blocks.len())
            .map_err(|_| EventIoError::InvalidArgument("too many blocks".into()))?;
        f.extend_from_slice(&n_blocks.to_le_bytes());
        for (offset, n) in &self.blocks {
            f.extend_from_slice(&offset.to_le_bytes());
            f.extend_from_slice(&n.to_le_bytes());
        }
        f.extend_from_slice(&first_event_id.to_le_bytes());
        f.extend_from_slice(&footer_offset.to_le_bytes());
        f.extend_from_slice(TRAILER_MAGIC);
        self.sink.write_all(&f)?;
        self.sink.flush()?;
        let mut stats = self.stats;
        stats.file_bytes = self.sink.written;
        stats.mean_event_bytes = stats.bytes_compressed as f64 / stats.n_events as f64;
        Ok((stats, self.sink.inner))
    }
}

/// Write `events` (one shared collection directory, consecutive ids).
pub fn write_events<W: Write>(
    sink: W,
    events: &[EventRecord],
    codec: Codec,
    events_per_block: usize,
) -> Result<EventFileStats, EventIoError> {
    let first = events.first().ok_or(EventIoError::Empty)?;
    let directory = first.collections.iter().map(|c| c.detector_name.clone()).collect();
    let mut w = EventWriter::new(sink, directory, codec, events_per_block)?;
    for e in events {
        w.push(e)?;
    }
    Ok(w.finish()?.0)
}

#[derive(Debug, Clone, Copy)]
struct BlockIndex {
    offset: u64,
    n_events: u32,
    first_ordinal: u64,
}

struct SegmentEntry {
    raw_len: u32,
    comp_len: u32,
    crc32: u32,
}

/// Random-access reader over a complete event file.
pub struct EventReader<R> {
    src: R,
    directory: Vec<String>,
    blocks: Vec<BlockIndex>,
    first_event_id: u64,
    n_events: u64,
    file_len: u64,
    decode_counts: Vec<u64>,
}

fn corrupt(msg: impl Into<String>) -> EventIoError {
    EventIoError::Corrupt(msg.into())
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}
fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}
fn le_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Bounds-checked cursor over the footer.
struct Cur<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Cur<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EventIoError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len()).ok_or_else(|| corrupt("footer truncated"))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, EventIoError> {
        Ok(le_u16(self.take(2)?, 0))
    }
    fn u32(&mut self) -> Result<u32, EventIoError> {
        Ok(le_u32(self.take(4)?, 0))
    }
    fn u64(&mut self) -> Result<u64, EventIoError> {
        Ok(le_u64(self.take(8)?, 0))
    }
}

impl<R: Read + Seek> EventReader<R> {
    pub fn open(mut src: R) -> Result<Self, EventIoError> {
        let file_len = src.seek(SeekFrom::End(0))?;
        if file_len < 8 + TRAILER_LEN {
            return Err(EventIoError::BadMagic("file too short"));
        }
        src.seek(SeekFrom::Start(0))?;
        let mut header = [0u8; 8];
        src.read_exact(&mut header)?;
        if &header[..4] != FILE_MAGIC {
            return Err(EventIoError::BadMagic("header"));
        }
        let version = le_u16(&header, 4);
        if version != FORMAT_VERSION {
            return Err(EventIoError::UnsupportedVersion(version));
        }
        src.seek(SeekFrom::Start(file_len - TRAILER_LEN))?;
        let mut trailer = [0u8; TRAILER_LEN as usize];
        src.read_exact(&mut trailer)?;
        if &trailer[8..] != TRAILER_MAGIC {
            return Err(EventIoError::BadMagic("trailer"));
        }
        let footer_offset = le_u64(&trailer, 0);
        if footer_offset < 8 || footer_offset > file_len - TRAILER_LEN {
            return Err(corrupt("footer offset out of range"));
        }
        src.seek(SeekFrom::Start(footer_offset))?;
        let mut footer = vec![0u8; (file_len - TRAILER_LEN - footer_offset) as usize];
        src.read_exact(&mut footer)?;
        let mut c = Cur { b: &footer, at: 0 };
        if c.take(4)? != FOOTER_MAGIC {
            return Err(EventIoError::BadMagic("footer"));
        }
        let n_coll = c.u16()? as usize;
        let mut directory = Vec::with_capacity(n_coll);
        for _ in 0..n_coll {
            let len = c.u16()? as usize;
            let name = std::str::from_utf8(c.take(len)?).map_err(|_| corrupt("collection name not utf-8"))?;
            directory.push(name.to_owned());
        }
        let n_blocks = c.u32()? as usize;
        let mut blocks = Vec::with_capacity(n_blocks.min(footer.len() / 12));
        let mut ordinal = 0u64;
        for _ in 0..n_blocks {
            let offset = c.u64()?;
            let n_events = c.u32()?;
            if offset < 8 || offset >= footer_offset {
                return Err(corrupt("block offset out of range"));
            }
            blocks.push(BlockIndex { offset, n_events, first_ordinal: ordinal });
            ordinal += n_events as u64;
        }
        let first_event_id = c.u64()?;
        if c.at != footer.len() {
            return Err(corrupt("trailing bytes in footer"));
        }
        Ok(EventReader {
            src,
            decode_counts: vec![0; directory.len()],
            directory,
            blocks,
            first_event_id,
            n_events: ordinal,
            file_len,
        })
    }

    pub fn directory(&self) -> &[String] {
        &self.directory
    }

    pub fn n_events(&self) -> u64 {
        self.n_events
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn first_event_id(&self) -> u64 {
        self.first_event_id
    }

    /// Number of segments decompressed so far, per directory entry.
    pub fn decode_counts(&self) -> &[u64] {
        &self.decode_counts
    }

    fn block_table(&mut self, block: usize) -> Result<(Codec, Vec<SegmentEntry>, u64), EventIoError> {
        let idx = self.blocks[block];
        self.src.seek(SeekFrom::Start(idx.offset))?;
        let n_coll = self.directory.len();
        let mut head = vec![0u8; BLOCK_MAGIC_LEN + SEGMENT_ENTRY_LEN * n_coll];
        self.src.read_exact(&mut head)?;
        if le_u32(&head, 0) != idx.n_events {
            return Err(corrupt(format!("block {block}: event count disagrees with index")));
        }
        if le_u16(&head, 4) as usize != n_coll {
            return Err(corrupt(format!("block {block}: collection count disagrees with directory")));
        }
        let codec = Codec::from_u8(head[6]).ok_or_else(|| corrupt(format!("block {block}: unknown codec {}", head[6])))?;
        let entries = (0..n_coll)
            .map(|j| {
                let at = BLOCK_MAGIC_LEN + SEGMENT_ENTRY_LEN * j;
                SegmentEntry { raw_len: le_u32(&head, at), comp_len: le_u32(&head, at + 4), crc32: le_u32(&head, at + 8) }
            })
            .collect();
        Ok((codec, entries, idx.offset + head.len() as u64))
    }

    /// Raw payload and stored payload byte totals, from block tables only.
    pub fn stats(&mut self) -> Result<EventFileStats, EventIoError> {
        let mut s = EventFileStats { n_events: self.n_events, file_bytes: self.file_len, ..Default::default() };
        for b in 0..self.blocks.len() {
            let (_, entries, _) = self.block_table(b)?;
            for e in entries {
                s.bytes_raw += e.raw_len as u64;
                s.bytes_compressed += e.comp_len as u64;
            }
        }
        if s.n_events > 0 {
            s.mean_event_bytes = s.bytes_compressed as f64 / s.n_events as f64;
        }
        Ok(s)
    }

    fn decode_segment(
        &mut self,
        block: usize,
        collection: usize,
        codec: Codec,
        entry: &SegmentEntry,
        at: u64,
        n_events: u32,
    ) -> Result<Vec<Vec<Hit>>, EventIoError> {
        self.src.seek(SeekFrom::Start(at))?;
        let mut stored = vec![0u8; entry.comp_len as usize];
        self.src.read_exact(&mut stored)?;
        if crc32(&stored) != entry.crc32 {
            return Err(EventIoError::CrcMismatch { block, collection: self.directory[collection].clone() });
        }
        self.decode_counts[collection] += 1;
        let raw = match codec {
            Codec::Stored => stored,
            Codec::Deflate => {
                let mut raw = Vec::with_capacity(entry.raw_len as usize);
                DeflateDecoder::new(&stored[..])
                    .take(entry.raw_len as u64 + 1)
                    .read_to_end(&mut raw)
                    .map_err(|e| corrupt(format!("block {block}: inflate failed: {e}")))?;
                raw
            }
        };
        if raw.len() != entry.raw_len as usize {
            return Err(corrupt(format!("block {block}: segment length {} != raw_len {}", raw.len(), entry.raw_len)));
        }
        let mut events = Vec::with_capacity(n_events as usize);
        let mut at = 0usize;
        for _ in 0..n_events {
            if raw.len() < at + 4 {
                return Err(corrupt(format!("block {block}: segment truncated")));
            }
            let n = le_u32(&raw, at) as usize;
            at += 4;
            let end = n.checked_mul(HIT_BYTES).and_then(|b| b.checked_add(at)).filter(|&e| e <= raw.len());
            let Some(end) = end else {
                return Err(corrupt(format!("block {block}: hit count overruns segment")));
            };
            let hits = raw[at..end]
                .chunks_exact(HIT_BYTES)
                .map(|h| {
                    let f = |i: usize| f32::from_le_bytes(h[i * 4..i * 4 + 4].try_into().unwrap());
                    Hit { edep_abs: f(0), edep_gap: f(1), track_len_abs: f(2), track_len_gap: f(3) }
                })
                .collect();
            events.push(hits);
            at = end;
        }
        if at != raw.len() {
            return Err(corrupt(format!("block {block}: trailing bytes in segment")));
        }
        Ok(events)
    }

    /// Decode events with ordinals in `range`, keeping only the selected
    /// collections (all when `selection` is `None`). Segments of unselected
    /// collections are neither read nor decompressed.
    pub fn read_events(
        &mut self,
        selection: Option<&[&str]>,
        range: Range<u64>,
    ) -> Result<Vec<EventRecord>, EventIoError> {
        if range.start > range.end || range.end > self.n_events {
            return Err(EventIoError::RangeError { start: range.start, end: range.end, n_events: self.n_events });
        }
        let selected: Vec<usize> = match selection {
            None => (0..self.directory.len()).collect(),
            Some(names) => {
                for n in names {
                    if !self.directory.iter().any(|d| d == n) {
                        return Err(EventIoError::UnknownCollection((*n).to_owned()));
                    }
                }
                (0..self.directory.len()).filter(|&j| names.contains(&self.directory[j].as_str())).collect()
            }
        };
        let mut out = Vec::with_capacity((range.end - range.start) as usize);
        if range.is_empty() {
            return Ok(out);
        }
        for b in 0..self.blocks.len() {
            let idx = self.blocks[b];
            let block_end = idx.first_ordinal + idx.n_events as u64;
            if block_end <= range.start || idx.first_ordinal >= range.end {
                continue;
            }
            let (codec, entries, payload_start) = self.block_table(b)?;
            let mut offsets = Vec::with_capacity(entries.len());
            let mut at = payload_start;
            for e in &entries {
                offsets.push(at);
                at += e.comp_len as u64;
            }
            let mut decoded = Vec::with_capacity(selected.len());
            for &j in &selected {
                let hits = self.decode_segment(b, j, codec, &entries[j], offsets[j], idx.n_events)?;
                decoded.push(hits);
            }
            let lo = range.start.max(idx.first_ordinal) - idx.first_ordinal;
            let hi = range.end.min(block_end) - idx.first_ordinal;
            for k in lo..hi {
                let collections = selected
                    .iter()
                    .zip(decoded.iter_mut())
                    .map(|(&j, per_event)| HitCollection {
                        detector_name: self.directory[j].clone(),
                        hits: std::mem::take(&mut per_event[k as usize]),
                    })
                    .collect();
                out.push(EventRecord { event_id: self.first_event_id + idx.first_ordinal + k, collections });
            }
        }
        Ok(out)
    }

    /// Decode every event, all collections.
    pub fn read_all(&mut self) -> Result<Vec<EventRecord>, EventIoError> {
        self.read_events(None, 0..self.n_events)
    }
}

/// One-shot selective read.
pub fn read_events<R: Read + Seek>(
    source: R,
    selection: Option<&[&str]>,
    range: Option<Range<u64>>,
) -> Result<Vec<EventRecord>, EventIoError> {
    let mut r = EventReader::open(source)?;
    let range = range.unwrap_or(0..r.n_events());
    r.read_events(selection, range)
}
