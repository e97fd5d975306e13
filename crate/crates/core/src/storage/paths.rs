use std::path::{Path, PathBuf};

use crate::crc::crc32;

/// Where a fragment lives under a node root: `<root>/<hh>/<escaped-lfn>.<index>.frag`,
/// `hh` being the top byte of the name's CRC-32 in hex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentHandle {
    pub lfn: String,
    pub index: u32,
    pub local_path: PathBuf,
}

impl FragmentHandle {
    pub fn new(root: &Path, lfn: &str, index: u32) -> Self {
        FragmentHandle { lfn: lfn.to_owned(), index, local_path: fragment_path(root, lfn, index) }
    }
}

pub fn bucket_of(lfn: &str) -> String {
    format!("{:02x}", crc32(lfn.as_bytes()) >> 24)
}

/// Percent-escape the characters that cannot appear in a flat file name.
pub fn escape_lfn(lfn: &str) -> String {
    let mut out = String::with_capacity(lfn.len());
    for ch in lfn.chars() {
        match ch {
            '%' | '/' | '\\' => out.push_str(&format!("%{:02X}", ch as u32)),
            c if c.is_ascii_control() => out.push_str(&format!("%{:02X}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

pub fn fragment_path(root: &Path, lfn: &str, index: u32) -> PathBuf {
    root.join(bucket_of(lfn)).join(format!("{}.{index}.frag", escape_lfn(lfn)))
}
