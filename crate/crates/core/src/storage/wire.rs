//! Data-plane framing. All integers little-endian.
//!
//! Request frame: `{ body_len: u32, msg_type: u8, body }`.
//! Response frame: `{ body_len: u32, status: u8, body }`; a non-zero status
//! carries a UTF-8 error message as its body.
//!
//! | type | request body                                              | ok response body                         |
//! |------|-----------------------------------------------------------|------------------------------------------|
//! | PUT  | lfn_len u16, lfn, index u32, size u64, payload            | size u64, crc32 u32, path_len u16, path  |
//! | GET  | lfn_len u16, lfn, index u32, offset u64, length u64       | the bytes                                |
//! | STAT | lfn_len u16, lfn, index u32                               | size u64                                 |
//! | CRC  | lfn_len u16, lfn, index u32                               | crc32 u32                                |
//! | PING | empty, or the single byte 1 to run the health probe       | id_len u16, node_id / health record      |
//! | PULL | lfn_len u16, lfn, index u32, src_len u16, src [, chunk u64] | as PUT                                 |
//!
//! The health record is `free u64, write_bps u64, read_bps u64, flags u8`.

use std::io::{self, Read, Write};

pub const MSG_PUT: u8 = 1;
pub const MSG_GET: u8 = 2;
pub const MSG_STAT: u8 = 3;
pub const MSG_CRC: u8 = 4;
pub const MSG_PING: u8 = 5;
pub const MSG_PULL: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    NotFound = 1,
    Exists = 2,
    RangeError = 3,
    DiskFull = 4,
    IoFailure = 5,
    BadRequest = 6,
}

impl Status {
    pub fn from_u8(b: u8) -> Status {
        match b {
            0 => Status::Ok,
            1 => Status::NotFound,
            2 => Status::Exists,
            3 => Status::RangeError,
            4 => Status::DiskFull,
            5 => Status::IoFailure,
            _ => Status::BadRequest,
        }
    }
}

pub fn write_header<W: Write>(w: &mut W, body_len: u32, tag: u8) -> io::Result<()> {
    let mut hdr = [0u8; 5];
    hdr[..4].copy_from_slice(&body_len.to_le_bytes());
    hdr[4] = tag;
    w.write_all(&hdr)
}

/// Read a frame header. `Ok(None)` on clean EOF before the first byte.
pub fn read_header<R: Read>(r: &mut R) -> io::Result<Option<(u32, u8)>> {
    let mut hdr = [0u8; 5];
    let mut got = 0;
    while got < hdr.len() {
        match r.read(&mut hdr[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Some((u32::from_le_bytes(hdr[..4].try_into().unwrap()), hdr[4])))
}

pub fn write_frame<W: Write>(w: &mut W, tag: u8, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame body over 4 GiB"))?;
    write_header(w, len, tag)?;
    w.write_all(body)
}

/// Little-endian body builder.
#[derive(Default)]
pub struct Encoder(pub Vec<u8>);

impl Encoder {
    pub fn new() -> Self {
        Encoder(Vec::new())
    }
    pub fn u8(mut self, v: u8) -> Self {
        self.0.push(v);
        self
    }
    pub fn u16(mut self, v: u16) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn u32(mut self, v: u32) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn u64(mut self, v: u64) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    /// u16 length prefix, then the bytes.
    pub fn str16(self, s: &str) -> io::Result<Self> {
        let len = u16::try_from(s.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "string over 65535 bytes"))?;
        let mut me = self.u16(len);
        me.0.extend_from_slice(s.as_bytes());
        Ok(me)
    }
    pub fn finish(self) -> Vec<u8> {
        self.0
    }
}

/// Cursor over a received body.
pub struct Decoder<'a> {
    buf: &'a [u8],
}

fn short() -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, "truncated message body")
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf }
    }
    fn take(&mut self, n: usize) -> io::Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(short());
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    pub fn u8(&mut self) -> io::Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> io::Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn str16(&mut self) -> io::Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "string is not utf-8"))
    }
    pub fn remaining(&self) -> usize {
        self.buf.len()
    }
}
