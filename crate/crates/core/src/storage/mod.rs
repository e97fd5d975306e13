//! Storage node: fragment files under a local root, served over the binary
//! data-plane protocol, with per-direction token-bucket throttling.

mod client;
mod paths;
mod server;
pub mod wire;

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use thiserror::Error;

use crate::catalog::{FragmentMeta, ReplicaLocation};
use crate::crc::{crc32_reader, Crc32};
use crate::ratelimit::RateLimiter;

pub use self::client::{NodeClient, RemoteRangeReader};
pub use self::paths::{bucket_of, escape_lfn, fragment_path, FragmentHandle};
pub use self::server::NodeServer;

/// Transfer granularity between socket, limiter and disk.
pub const IO_CHUNK: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("fragment already exists: {0}")]
    Exists(String),
    #[error("fragment not found: {0}")]
    NotFound(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("disk full: {0}")]
    DiskFull(String),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("i/o failure on remote node: {0}")]
    RemoteIo(String),
    #[error("node unreachable: {0}")]
    Unreachable(String),
}

impl StorageError {
    fn from_io(e: io::Error, what: &str) -> Self {
        match e.kind() {
            io::ErrorKind::StorageFull => StorageError::DiskFull(what.to_owned()),
            io::ErrorKind::NotFound => StorageError::NotFound(what.to_owned()),
            _ => StorageError::Io(e),
        }
    }
}

/// Injected slowness causes, echoed by the health probe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LoadFlags(u8);

impl LoadFlags {
    pub const EXTRA_PROCESSES: LoadFlags = LoadFlags(0b01);
    pub const HIGH_FRAGMENTATION: LoadFlags = LoadFlags(0b10);

    pub const fn empty() -> Self {
        LoadFlags(0)
    }
    pub const fn bits(self) -> u8 {
        self.0
    }
    pub const fn from_bits_truncate(bits: u8) -> Self {
        LoadFlags(bits & 0b11)
    }
    pub const fn contains(self, other: LoadFlags) -> bool {
        self.0 & other.0 == other.0
    }
    pub fn names(self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.contains(Self::EXTRA_PROCESSES) {
            v.push("extra_processes");
        }
        if self.contains(Self::HIGH_FRAGMENTATION) {
            v.push("high_fragmentation");
        }
        v
    }
    pub fn parse(name: &str) -> Option<LoadFlags> {
        match name {
            "extra_processes" => Some(Self::EXTRA_PROCESSES),
            "high_fragmentation" => Some(Self::HIGH_FRAGMENTATION),
            _ => None,
        }
    }
}

impl std::ops::BitOr for LoadFlags {
    type Output = LoadFlags;
    fn bitor(self, rhs: LoadFlags) -> LoadFlags {
        LoadFlags(self.0 | rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeHealth {
    pub free_bytes: u64,
    pub measured_write_bps: u64,
    pub measured_read_bps: u64,
    pub load_flags: LoadFlags,
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub node_id: String,
    pub root: PathBuf,
    /// Bytes/second in each direction; 0 = unlimited.
    pub rate_limit_bps: u64,
    pub load_flags: LoadFlags,
}

impl StoreConfig {
    pub fn new(node_id: impl Into<String>, root: impl Into<PathBuf>) -> Self {
        StoreConfig {
            node_id: node_id.into(),
            root: root.into(),
            rate_limit_bps: 0,
            load_flags: LoadFlags::empty(),
        }
    }

    pub fn rate_limit(mut self, bps: u64) -> Self {
        self.rate_limit_bps = bps;
        self
    }

    pub fn load_flags(mut self, flags: LoadFlags) -> Self {
        self.load_flags = flags;
        self
    }
}

/// Fragment files on one node.
pub struct FragmentStore {
    config: StoreConfig,
    read_limiter: RateLimiter,
    write_limiter: RateLimiter,
    writing: Mutex<HashSet<PathBuf>>,
}

/// Releases a path reservation when a write ends, successful or not.
struct WriteGuard<'a> {
    store: &'a FragmentStore,
    path: PathBuf,
}

impl Drop for WriteGuard<'_> {
    fn drop(&mut self) {
        self.store.writing.lock().unwrap_or_else(|e| e.into_inner()).remove(&self.path);
    }
}

/// Fragment bytes read through the node's read limiter.
pub struct ThrottledReader<'a> {
    file: io::Take<File>,
    limiter: &'a RateLimiter,
}

impl Read for ThrottledReader<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let want = buf.len().min(IO_CHUNK);
        let n = self.file.read(&mut buf[..want])?;
        self.limiter.acquire(n as u64);
        Ok(n)
    }
}

impl FragmentStore {
    pub fn open(config: StoreConfig) -> Result<Self, StorageError> {
        fs::create_dir_all(&config.root)?;
        Ok(FragmentStore {
            read_limiter: RateLimiter::new(config.rate_limit_bps),
            write_limiter: RateLimiter::new(config.rate_limit_bps),
            writing: Mutex::new(HashSet::new()),
            config,
        })
    }

    pub fn node_id(&self) -> &str {
        &self.config.node_id
    }

    pub fn root(&self) -> &Path {
        &self.config.root
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn handle(&self, lfn: &str, index: u32) -> FragmentHandle {
        FragmentHandle::new(&self.config.root, lfn, index)
    }

    fn reserve(&self, path: &Path, overwrite: bool, what: &str) -> Result<WriteGuard<'_>, StorageError> {
        let mut writing = self.writing.lock().unwrap_or_else(|e| e.into_inner());
        if writing.contains(path) || (!overwrite && path.exists()) {
            return Err(StorageError::Exists(what.to_owned()));
        }
        writing.insert(path.to_owned());
        Ok(WriteGuard { store: self, path: path.to_owned() })
    }

    /// Store a fragment from `data`, throttled by the write limiter. The
    /// bytes land in a temporary file that is synced and renamed into place.
    pub fn put_fragment<R: Read>(
        &self,
        lfn: &str,
        index: u32,
        mut data: R,
        overwrite: bool,
    ) -> Result<FragmentMeta, StorageError> {
        let handle = self.handle(lfn, index);
        let what = format!("{lfn}#{index}");
        let _guard = self.reserve(&handle.local_path, overwrite, &what)?;
        let dir = handle.local_path.parent().expect("fragment path has a bucket dir");
        fs::create_dir_all(dir).map_err(|e| StorageError::from_io(e, &what))?;
        let tmp = handle.local_path.with_extension("frag.tmp");
        let result = (|| {
            let mut file = OpenOptions::new()
                .write(true)
                .create(true)
                .truncate(true)
                .open(&tmp)
                .map_err(|e| StorageError::from_io(e, &what))?;
            let mut hasher = Crc32::new();
            let mut size = 0u64;
            let mut buf = vec![0u8; IO_CHUNK];
            loop {
                let n = match data.read(&mut buf) {
                    Ok(0) => break,
                    Ok(n) => n,
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                    Err(e) => return Err(StorageError::Io(e)),
                };
                self.write_limiter.acquire(n as u64);
                file.write_all(&buf[..n]).map_err(|e| StorageError::from_io(e, &what))?;
                hasher.update(&buf[..n]);
                size += n as u64;
            }
            file.sync_data().map_err(|e| StorageError::from_io(e, &what))?;
            Ok((size, hasher.finalize()))
        })();
        let (size, crc) = match result {
            Ok(v) => v,
            Err(e) => {
                let _ = fs::remove_file(&tmp);
                return Err(e);
            }
        };
        fs::rename(&tmp, &handle.local_path).map_err(|e| StorageError::from_io(e, &what))?;
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(FragmentMeta {
            index,
            size_bytes: size,
            crc32: crc,
            replicas: vec![ReplicaLocation {
                node_id: self.config.node_id.clone(),
                path: handle.local_path.to_string_lossy().into_owned(),
                crc32: crc,
            }],
        })
    }

    pub fn fragment_size(&self, lfn: &str, index: u32) -> Result<u64, StorageError> {
        let path = self.handle(lfn, index).local_path;
        fs::metadata(&path)
            .map(|m| m.len())
            .map_err(|e| StorageError::from_io(e, &format!("{lfn}#{index}")))
    }

    /// Open `length` bytes at `offset` (`length == 0` reads to the end).
    /// Returns the throttled reader and the exact number of bytes it yields.
    pub fn open_range(
        &self,
        lfn: &str,
        index: u32,
        offset: u64,
        length: u64,
    ) -> Result<(ThrottledReader<'_>, u64), StorageError> {
        let what = format!("{lfn}#{index}");
        let path = self.handle(lfn, index).local_path;
        let mut file = File::open(&path).map_err(|e| StorageError::from_io(e, &what))?;
        let size = file.metadata()?.len();
        if offset > size {
            return Err(StorageError::Range(format!("{what}: offset {offset} beyond size {size}")));
        }
        let length = if length == 0 { size - offset } else { length };
        if length > size - offset {
            return Err(StorageError::Range(format!(
                "{what}: {length} bytes at {offset} exceeds size {size}"
            )));
        }
        file.seek(SeekFrom::Start(offset))?;
        Ok((ThrottledReader { file: file.take(length), limiter: &self.read_limiter }, length))
    }

    pub fn get_fragment(
        &self,
        lfn: &str,
        index: u32,
        offset: u64,
        length: u64,
    ) -> Result<Vec<u8>, StorageError> {
        let (mut reader, len) = self.open_range(lfn, index, offset, length)?;
        let mut out = Vec::with_capacity(len as usize);
        reader.read_to_end(&mut out)?;
        Ok(out)
    }

    /// CRC-32 of the stored bytes. Local verification; not throttled.
    pub fn checksum(&self, lfn: &str, index: u32) -> Result<u32, StorageError> {
        let path = self.handle(lfn, index).local_path;
        let file = File::open(&path).map_err(|e| StorageError::from_io(e, &format!("{lfn}#{index}")))?;
        Ok(crc32_reader(io::BufReader::new(file))?.0)
    }

    pub fn delete_fragment(&self, lfn: &str, index: u32) -> Result<(), StorageError> {
        let path = self.handle(lfn, index).local_path;
        fs::remove_file(&path).map_err(|e| StorageError::from_io(e, &format!("{lfn}#{index}")))
    }

    /// Measure sustained write and read rates with a scratch file pushed
    /// through the limiters. Burst credit is forfeited first so the result
    /// reflects the configured rate, not idle savings.
    pub fn probe(&self) -> Result<NodeHealth, StorageError> {
        let bytes = match self.config.rate_limit_bps {
            0 => 4 << 20,
            r => (r / 2).clamp(256 << 10, 64 << 20),
        };
        let scratch = self.config.root.join(".probe.scratch");
        let chunk = vec![0xA5u8; IO_CHUNK];

        self.write_limiter.drain_burst();
        let start = Instant::now();
        {
            let mut f = File::create(&scratch)?;
            let mut left = bytes;
            while left > 0 {
                let n = left.min(IO_CHUNK as u64) as usize;
                self.write_limiter.acquire(n as u64);
                f.write_all(&chunk[..n])?;
                left -= n as u64;
            }
            f.sync_data()?;
        }
        let write_secs = start.elapsed().as_secs_f64();

        self.read_limiter.drain_burst();
        let start = Instant::now();
        {
            let mut f = File::open(&scratch)?;
            let mut buf = vec![0u8; IO_CHUNK];
            loop {
                let n = f.read(&mut buf)?;
                if n == 0 {
                    break;
                }
                self.read_limiter.acquire(n as u64);
            }
        }
        let read_secs = start.elapsed().as_secs_f64();
        let _ = fs::remove_file(&scratch);

        let rate = |secs: f64| (bytes as f64 / secs.max(1e-9)) as u64;
        Ok(NodeHealth {
            free_bytes: free_bytes(&self.config.root).unwrap_or(0),
            measured_write_bps: rate(write_secs),
            measured_read_bps: rate(read_secs),
            load_flags: self.config.load_flags,
        })
    }
}

#[cfg(unix)]
fn free_bytes(path: &Path) -> Option<u64> {
    use std::ffi::CString;
    use std::os::unix::ffi::OsStrExt;
    let c = CString::new(path.as_os_str().as_bytes()).ok()?;
    let mut st: libc::statvfs = unsafe { std::mem::zeroed() };
    // SAFETY: `c` is NUL-terminated and `st` is a valid out-pointer.
    let rc = unsafe { libc::statvfs(c.as_ptr(), &mut st) };
    (rc == 0).then(|| st.f_bavail as u64 * st.f_frsize as u64)
}

#[cfg(not(unix))]
fn free_bytes(_path: &Path) -> Option<u64> {
    None
}
