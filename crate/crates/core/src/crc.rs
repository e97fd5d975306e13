//! CRC-32/IEEE (reflected polynomial 0xEDB88320, init and final xor 0xFFFFFFFF).
//!
//! Every checksum in the system (fragments, event-file segments, catalog log
//! records) goes through this module so the polynomial is defined once.

use std::io::{self, Read};

pub use crc32fast::Hasher as Crc32;

/// Checksum of a byte slice.
pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

/// Checksum of everything a reader yields. Returns `(crc, byte_count)`.
pub fn crc32_reader<R: Read>(mut reader: R) -> io::Result<(u32, u64)> {
    let mut hasher = Crc32::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut total = 0u64;
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hasher.finalize(), total))
}
