use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use super::client::{encode_health, PutReceipt};
use super::wire::{self, Decoder, Encoder, Status};
use super::{FragmentStore, NodeClient, RemoteRangeReader, StorageError, IO_CHUNK};
use crate::net::Acceptor;

const MAX_CONTROL_BODY: u32 = 1 << 20;
const DEFAULT_PULL_CHUNK: u64 = 1 << 20;
const PULL_TIMEOUT: Duration = Duration::from_secs(60);

fn status_of(e: &StorageError) -> Status {
    match e {
        StorageError::Exists(_) => Status::Exists,
        StorageError::NotFound(_) => Status::NotFound,
        StorageError::Range(_) => Status::RangeError,
        StorageError::DiskFull(_) => Status::DiskFull,
        StorageError::BadRequest(_) => Status::BadRequest,
        StorageError::Io(_) | StorageError::RemoteIo(_) | StorageError::Unreachable(_) => {
            Status::IoFailure
        }
    }
}

fn respond_err<W: Write>(w: &mut W, e: &StorageError) -> io::Result<()> {
    wire::write_frame(w, status_of(e) as u8, e.to_string().as_bytes())?;
    w.flush()
}

fn respond_ok<W: Write>(w: &mut W, body: &[u8]) -> io::Result<()> {
    wire::write_frame(w, Status::Ok as u8, body)?;
    w.flush()
}

fn respond<W: Write>(w: &mut W, r: Result<Vec<u8>, StorageError>) -> io::Result<()> {
    match r {
        Ok(body) => respond_ok(w, &body),
        Err(e) => respond_err(w, &e),
    }
}

/// A reader that must yield exactly `remaining` bytes; an early end is an error.
struct Exact<R> {
    inner: R,
    remaining: u64,
}

impl<R: Read> Read for Exact<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.remaining == 0 {
            return Ok(0);
        }
        let want = (buf.len() as u64).min(self.remaining) as usize;
        let n = self.inner.read(&mut buf[..want])?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "payload truncated"));
        }
        self.remaining -= n as u64;
        Ok(n)
    }
}

fn read_u16<R: Read>(r: &mut R) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

/// Returns `Err` when the connection can no longer be used.
fn handle_put<R: Read, W: Write>(
    store: &FragmentStore,
    r: &mut R,
    w: &mut W,
    body_len: u32,
) -> io::Result<()> {
    let lfn_len = read_u16(r)?;
    let mut head = vec![0u8; lfn_len as usize + 12];
    r.read_exact(&mut head)?;
    let lfn = String::from_utf8(head[..lfn_len as usize].to_vec());
    let mut d = Decoder::new(&head[lfn_len as usize..]);
    let (index, size) = (d.u32()?, d.u64()?);
    if 2 + lfn_len as u64 + 12 + size != body_len as u64 {
        respond_err(w, &StorageError::BadRequest("PUT size disagrees with frame length".into()))?;
        return Err(io::ErrorKind::InvalidData.into());
    }
    let mut payload = Exact { inner: r, remaining: size };
    let result = match lfn {
        Ok(lfn) => store.put_fragment(&lfn, index, &mut payload, false),
        Err(_) => Err(StorageError::BadRequest("lfn is not utf-8".into())),
    };
    // Keep the stream in sync when the write was refused before the payload.
    io::copy(&mut payload, &mut io::sink())?;
    respond(w, result.and_then(|m| {
        let path = m.replicas[0].path.clone();
        Ok(PutReceipt { size_bytes: m.size_bytes, crc32: m.crc32, path }.encode()?)
    }))
}

fn handle_get<W: Write>(store: &FragmentStore, body: &[u8], w: &mut W) -> io::Result<()> {
    let parsed = (|| {
        let mut d = Decoder::new(body);
        Ok::<_, io::Error>((d.str16()?, d.u32()?, d.u64()?, d.u64()?))
    })();
    let (lfn, index, offset, length) = match parsed {
        Ok(p) => p,
        Err(e) => return respond_err(w, &StorageError::BadRequest(e.to_string())),
    };
    let (mut reader, len) = match store.open_range(&lfn, index, offset, length) {
        Ok(v) => v,
        Err(e) => return respond_err(w, &e),
    };
    let Ok(len32) = u32::try_from(len) else {
        return respond_err(w, &StorageError::Range("GET range over 4 GiB".into()));
    };
    wire::write_header(w, len32, Status::Ok as u8)?;
    let mut buf = vec![0u8; IO_CHUNK];
    let mut sent = 0u64;
    while sent < len {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            // File shrank underneath us; the frame cannot be completed.
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        w.write_all(&buf[..n])?;
        sent += n as u64;
    }
    w.flush()
}

fn key(body: &[u8]) -> Result<(String, u32), StorageError> {
    let mut d = Decoder::new(body);
    let lfn = d.str16().map_err(|e| StorageError::BadRequest(e.to_string()))?;
    let index = d.u32().map_err(|e| StorageError::BadRequest(e.to_string()))?;
    Ok((lfn, index))
}

fn handle_pull(store: &FragmentStore, body: &[u8]) -> Result<Vec<u8>, StorageError> {
    let bad = |e: io::Error| StorageError::BadRequest(e.to_string());
    let mut d = Decoder::new(body);
    let lfn = d.str16().map_err(bad)?;
    let index = d.u32().map_err(bad)?;
    let src = d.str16().map_err(bad)?;
    let chunk = if d.remaining() >= 8 { d.u64().map_err(bad)? } else { 0 };
    let chunk = if chunk == 0 { DEFAULT_PULL_CHUNK } else { chunk };
    let client = NodeClient::connect(&src, PULL_TIMEOUT)?;
    let reader = RemoteRangeReader::open(client, &lfn, index, chunk)?;
    let meta = store.put_fragment(&lfn, index, reader, true)?;
    let path = meta.replicas[0].path.clone();
    Ok(PutReceipt { size_bytes: meta.size_bytes, crc32: meta.crc32, path }.encode()?)
}

fn dispatch<W: Write>(store: &FragmentStore, msg: u8, body: &[u8], w: &mut W) -> io::Result<()> {
    match msg {
        wire::MSG_GET => handle_get(store, body, w),
        wire::MSG_STAT => respond(
            w,
            key(body).and_then(|(l, i)| store.fragment_size(&l, i)).map(|s| Encoder::new().u64(s).finish()),
        ),
        wire::MSG_CRC => respond(
            w,
            key(body).and_then(|(l, i)| store.checksum(&l, i)).map(|c| Encoder::new().u32(c).finish()),
        ),
        wire::MSG_PING if body.is_empty() => {
            respond(w, Ok(Encoder::new().str16(store.node_id())?.finish()))
        }
        wire::MSG_PING => respond(w, store.probe().map(|h| encode_health(&h))),
        wire::MSG_PULL => respond(w, handle_pull(store, body)),
        other => respond_err(w, &StorageError::BadRequest(format!("unknown message type {other}"))),
    }
}

fn serve_connection(store: Arc<FragmentStore>, stream: TcpStream) {
    let Ok(write_half) = stream.try_clone() else { return };
    let mut reader = BufReader::with_capacity(IO_CHUNK, stream);
    let mut writer = BufWriter::with_capacity(IO_CHUNK, write_half);
    loop {
        let (len, msg) = match wire::read_header(&mut reader) {
            Ok(Some(h)) => h,
            Ok(None) => break,
            Err(e) => {
                ::log::debug!("node {}: bad frame: {e}", store.node_id());
                break;
            }
        };
        let outcome = if msg == wire::MSG_PUT {
            handle_put(&store, &mut reader, &mut writer, len)
        } else if len > MAX_CONTROL_BODY {
            let _ = respond_err(&mut writer, &StorageError::BadRequest("request body too large".into()));
            break;
        } else {
            let mut body = vec![0u8; len as usize];
            match reader.read_exact(&mut body) {
                Ok(()) => dispatch(&store, msg, &body, &mut writer),
                Err(e) => Err(e),
            }
        };
        if let Err(e) = outcome {
            ::log::debug!("node {}: dropping connection: {e}", store.node_id());
            break;
        }
    }
}

/// A running storage daemon.
pub struct NodeServer {
    store: Arc<FragmentStore>,
    acceptor: Acceptor,
}

impl NodeServer {
    pub fn spawn(store: Arc<FragmentStore>, addr: impl ToSocketAddrs) -> io::Result<NodeServer> {
        let listener = TcpListener::bind(addr)?;
        let served = Arc::clone(&store);
        let acceptor = Acceptor::spawn(listener, "node", move |stream| {
            serve_connection(Arc::clone(&served), stream)
        })?;
        Ok(NodeServer { store, acceptor })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.acceptor.local_addr()
    }

    pub fn store(&self) -> &Arc<FragmentStore> {
        &self.store
    }

    pub fn wait(mut self) {
        self.acceptor.join();
    }

    pub fn shutdown(&mut self) {
        self.acceptor.shutdown();
    }
}
