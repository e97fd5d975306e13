use std::io::{self, BufReader, Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use super::wire::{self, Decoder, Encoder, Status};
use super::{LoadFlags, NodeHealth, StorageError};
use crate::catalog::{FragmentMeta, ReplicaLocation};

/// Result of a PUT or PULL: what the node stored and where.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PutReceipt {
    pub size_bytes: u64,
    pub crc32: u32,
    pub path: String,
}

impl PutReceipt {
    pub fn into_fragment_meta(self, index: u32, node_id: &str) -> FragmentMeta {
        FragmentMeta {
            index,
            size_bytes: self.size_bytes,
            crc32: self.crc32,
            replicas: vec![ReplicaLocation {
                node_id: node_id.to_owned(),
                path: self.path,
                crc32: self.crc32,
            }],
        }
    }

    pub(super) fn encode(&self) -> io::Result<Vec<u8>> {
        Ok(Encoder::new().u64(self.size_bytes).u32(self.crc32).str16(&self.path)?.finish())
    }

    fn decode(body: &[u8]) -> io::Result<Self> {
        let mut d = Decoder::new(body);
        Ok(PutReceipt { size_bytes: d.u64()?, crc32: d.u32()?, path: d.str16()? })
    }
}

pub(super) fn encode_health(h: &NodeHealth) -> Vec<u8> {
    Encoder::new()
        .u64(h.free_bytes)
        .u64(h.measured_write_bps)
        .u64(h.measured_read_bps)
        .u8(h.load_flags.bits())
        .finish()
}

fn key(lfn: &str, index: u32) -> io::Result<Encoder> {
    Ok(Encoder::new().str16(lfn)?.u32(index))
}

/// One connection to a storage node. Requests run one at a time.
pub struct NodeClient {
    addr: String,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl NodeClient {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, StorageError> {
        let unreachable = |e: io::Error| StorageError::Unreachable(format!("{addr}: {e}"));
        let stream = crate::net::connect(addr, timeout).map_err(unreachable)?;
        stream.set_read_timeout(Some(timeout)).map_err(unreachable)?;
        stream.set_write_timeout(Some(timeout)).map_err(unreachable)?;
        let _ = stream.set_nodelay(true);
        let writer = stream.try_clone().map_err(unreachable)?;
        Ok(NodeClient { addr: addr.to_owned(), reader: BufReader::with_capacity(super::IO_CHUNK, stream), writer })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    /// Read a response header; for errors, consume the message and map it.
    fn response(&mut self) -> Result<u32, StorageError> {
        let (len, status) = wire::read_header(&mut self.reader)?
            .ok_or_else(|| StorageError::RemoteIo(format!("{}: connection closed", self.addr)))?;
        let status = Status::from_u8(status);
        if status == Status::Ok {
            return Ok(len);
        }
        let mut msg = vec![0u8; len as usize];
        self.reader.read_exact(&mut msg)?;
        let msg = String::from_utf8_lossy(&msg).into_owned();
        Err(match status {
            Status::NotFound => StorageError::NotFound(msg),
            Status::Exists => StorageError::Exists(msg),
            Status::RangeError => StorageError::Range(msg),
            Status::DiskFull => StorageError::DiskFull(msg),
            Status::BadRequest => StorageError::BadRequest(msg),
            Status::IoFailure | Status::Ok => StorageError::RemoteIo(msg),
        })
    }

    fn small_body(&mut self) -> Result<Vec<u8>, StorageError> {
        let len = self.response()?;
        let mut body = vec![0u8; len as usize];
        self.reader.read_exact(&mut body)?;
        Ok(body)
    }

    fn call(&mut self, msg: u8, body: &[u8]) -> Result<Vec<u8>, StorageError> {
        wire::write_frame(&mut self.writer, msg, body)?;
        self.small_body()
    }

    /// PUT `size` bytes from `data`.
    pub fn put_from<R: Read>(
        &mut self,
        lfn: &str,
        index: u32,
        size: u64,
        data: R,
    ) -> Result<PutReceipt, StorageError> {
        let head = key(lfn, index)?.u64(size).finish();
        let body_len = u32::try_from(head.len() as u64 + size)
            .map_err(|_| StorageError::BadRequest("fragment over 4 GiB".into()))?;
        wire::write_header(&mut self.writer, body_len, wire::MSG_PUT)?;
        self.writer.write_all(&head)?;
        let sent = io::copy(&mut data.take(size), &mut self.writer)?;
        if sent != size {
            return Err(StorageError::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("payload ended after {sent} of {size} bytes"),
            )));
        }
        Ok(PutReceipt::decode(&self.small_body()?)?)
    }

    pub fn put(&mut self, lfn: &str, index: u32, data: &[u8]) -> Result<PutReceipt, StorageError> {
        self.put_from(lfn, index, data.len() as u64, data)
    }

    /// GET a byte range into `sink`; returns the number of bytes copied.
    pub fn get_into<W: Write>(
        &mut self,
        lfn: &str,
        index: u32,
        offset: u64,
        length: u64,
        sink: &mut W,
    ) -> Result<u64, StorageError> {
        let body = key(lfn, index)?.u64(offset).u64(length).finish();
        wire::write_frame(&mut self.writer, wire::MSG_GET, &body)?;
        let len = self.response()? as u64;
        let copied = io::copy(&mut (&mut self.reader).take(len), sink)?;
        if copied != len {
            return Err(StorageError::RemoteIo(format!("short GET body: {copied} of {len}")));
        }
        Ok(copied)
    }

    pub fn get(&mut self, lfn: &str, index: u32, offset: u64, length: u64) -> Result<Vec<u8>, StorageError> {
        let mut out = Vec::new();
        self.get_into(lfn, index, offset, length, &mut out)?;
        Ok(out)
    }

    pub fn stat(&mut self, lfn: &str, index: u32) -> Result<u64, StorageError> {
        let body = self.call(wire::MSG_STAT, &key(lfn, index)?.finish())?;
        Ok(Decoder::new(&body).u64()?)
    }

    pub fn crc(&mut self, lfn: &str, index: u32) -> Result<u32, StorageError> {
        let body = self.call(wire::MSG_CRC, &key(lfn, index)?.finish())?;
        Ok(Decoder::new(&body).u32()?)
    }

    /// Node id of the daemon.
    pub fn ping(&mut self) -> Result<String, StorageError> {
        let body = self.call(wire::MSG_PING, &[])?;
        Ok(Decoder::new(&body).str16()?)
    }

    pub fn probe(&mut self) -> Result<NodeHealth, StorageError> {
        let body = self.call(wire::MSG_PING, &[1])?;
        let mut d = Decoder::new(&body);
        Ok(NodeHealth {
            free_bytes: d.u64()?,
            measured_write_bps: d.u64()?,
            measured_read_bps: d.u64()?,
            load_flags: LoadFlags::from_bits_truncate(d.u8()?),
        })
    }

    /// Ask this node to fetch fragment `(lfn, index)` from `src_addr` in
    /// `chunk_bytes` range requests and store it locally (replacing any copy).
    pub fn pull(
        &mut self,
        lfn: &str,
        index: u32,
        src_addr: &str,
        chunk_bytes: u64,
    ) -> Result<PutReceipt, StorageError> {
        let body = key(lfn, index)?.str16(src_addr)?.u64(chunk_bytes).finish();
        let resp = self.call(wire::MSG_PULL, &body)?;
        Ok(PutReceipt::decode(&resp)?)
    }
}

/// Streams a remote fragment as a sequence of ranged GETs.
pub struct RemoteRangeReader {
    client: NodeClient,
    lfn: String,
    index: u32,
    size: u64,
    pos: u64,
    chunk: u64,
    in_flight: u64,
}

impl RemoteRangeReader {
    pub fn open(mut client: NodeClient, lfn: &str, index: u32, chunk: u64) -> Result<Self, StorageError> {
        let size = client.stat(lfn, index)?;
        Ok(RemoteRangeReader {
            client,
            lfn: lfn.to_owned(),
            index,
            size,
            pos: 0,
            chunk: chunk.max(1),
            in_flight: 0,
        })
    }

    pub fn size(&self) -> u64 {
        self.size
    }
}

impl Read for RemoteRangeReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        if self.in_flight == 0 {
            if self.pos >= self.size {
                return Ok(0);
            }
            let len = self.chunk.min(self.size - self.pos);
            let body = key(&self.lfn, self.index)?.u64(self.pos).u64(len).finish();
            wire::write_frame(&mut self.client.writer, wire::MSG_GET, &body)?;
            let got = self.client.response().map_err(io::Error::other)? as u64;
            if got != len {
                return Err(io::Error::other(format!("asked for {len} bytes, node sent {got}")));
            }
            self.in_flight = len;
        }
        let want = (buf.len() as u64).min(self.in_flight) as usize;
        let n = self.client.reader.read(&mut buf[..want])?;
        if n == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        self.in_flight -= n as u64;
        self.pos += n as u64;
        Ok(n)
    }
}
