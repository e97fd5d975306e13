use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::server::{AddReplicaReq, ListReq, LookupReq, RegisterReq, RemoveReplicaReq};
use super::{
    CatalogApi, CatalogError, ErrorCode, FragmentMeta, LogicalFileEntry, NodeInfo,
    ReplicaLocation,
};

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Catalog client speaking the line protocol. One connection, reused;
/// requests from several threads are serialized over it.
pub struct CatalogClient {
    addr: String,
    timeout: Duration,
    conn: Mutex<Option<Conn>>,
}

impl CatalogClient {
    pub fn new(addr: impl Into<String>) -> Self {
        Self::with_timeout(addr, Duration::from_secs(30))
    }

    pub fn with_timeout(addr: impl Into<String>, timeout: Duration) -> Self {
        CatalogClient { addr: addr.into(), timeout, conn: Mutex::new(None) }
    }

    /// Connect eagerly so an unreachable catalog is reported up front.
    pub fn connect(addr: impl Into<String>, timeout: Duration) -> Result<Self, CatalogError> {
        let client = Self::with_timeout(addr, timeout);
        let conn = client.dial()?;
        *client.conn.lock().unwrap_or_else(|e| e.into_inner()) = Some(conn);
        Ok(client)
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn dial(&self) -> Result<Conn, CatalogError> {
        let unreachable = |e: std::io::Error| CatalogError::Unreachable(format!("{}: {e}", self.addr));
        let stream = crate::net::connect(&self.addr, self.timeout).map_err(unreachable)?;
        stream.set_read_timeout(Some(self.timeout)).map_err(unreachable)?;
        stream.set_write_timeout(Some(self.timeout)).map_err(unreachable)?;
        let _ = stream.set_nodelay(true);
        let writer = stream.try_clone().map_err(unreachable)?;
        Ok(Conn { reader: BufReader::new(stream), writer })
    }

    fn exchange(conn: &mut Conn, line: &str) -> std::io::Result<String> {
        conn.writer.write_all(line.as_bytes())?;
        conn.writer.write_all(b"\n")?;
        conn.writer.flush()?;
        let mut resp = String::new();
        if conn.reader.read_line(&mut resp)? == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "connection closed"));
        }
        Ok(resp)
    }

    fn raw_request(&self, line: &str) -> Result<String, CatalogError> {
        let mut guard = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        // A cached connection may have gone stale; retry once on a fresh one.
        if let Some(conn) = guard.as_mut() {
            match Self::exchange(conn, line) {
                Ok(resp) => return Ok(resp),
                Err(e) => ::log::debug!("catalog connection to {} dropped: {e}", self.addr),
            }
        }
        *guard = None;
        let mut conn = self.dial()?;
        let resp = Self::exchange(&mut conn, line)
            .map_err(|e| CatalogError::Unreachable(format!("{}: {e}", self.addr)))?;
        *guard = Some(conn);
        Ok(resp)
    }

    fn request<T: DeserializeOwned>(
        &self,
        verb: &str,
        body: Option<&impl Serialize>,
    ) -> Result<T, CatalogError> {
        let line = match body {
            Some(b) => format!("{verb} {}", serde_json::to_string(b).expect("request serializes")),
            None => verb.to_owned(),
        };
        let resp = self.raw_request(&line)?;
        parse_response(resp.trim_end())
    }
}

fn parse_response<T: DeserializeOwned>(resp: &str) -> Result<T, CatalogError> {
    if let Some(json) = resp.strip_prefix("OK ") {
        return serde_json::from_str(json)
            .map_err(|e| CatalogError::Protocol(format!("bad response payload: {e}")));
    }
    if let Some(rest) = resp.strip_prefix("ERR ") {
        let (code, message) = rest.split_once(' ').unwrap_or((rest, ""));
        let code = ErrorCode::parse(code).unwrap_or(ErrorCode::Protocol);
        return Err(CatalogError::Remote { code, message: message.to_owned() });
    }
    Err(CatalogError::Protocol(format!("unexpected response {resp:?}")))
}

impl CatalogApi for CatalogClient {
    fn register_file(
        &self,
        lfn: &str,
        fragments: Vec<FragmentMeta>,
    ) -> Result<LogicalFileEntry, CatalogError> {
        self.request("REGISTER", Some(&RegisterReq { lfn: lfn.to_owned(), fragments }))
    }

    fn add_replica(
        &self,
        lfn: &str,
        index: u32,
        location: ReplicaLocation,
    ) -> Result<LogicalFileEntry, CatalogError> {
        self.request("ADDREPLICA", Some(&AddReplicaReq { lfn: lfn.to_owned(), index, location }))
    }

    fn lookup(&self, lfn: &str) -> Result<LogicalFileEntry, CatalogError> {
        self.request("LOOKUP", Some(&LookupReq { lfn: lfn.to_owned() }))
    }

    fn list_files(&self, pattern: &str) -> Result<Vec<LogicalFileEntry>, CatalogError> {
        self.request("LIST", Some(&ListReq { pattern: pattern.to_owned() }))
    }

    fn remove_replica(
        &self,
        lfn: &str,
        index: u32,
        node_id: &str,
    ) -> Result<LogicalFileEntry, CatalogError> {
        self.request(
            "RMREPLICA",
            Some(&RemoveReplicaReq { lfn: lfn.to_owned(), index, node_id: node_id.to_owned() }),
        )
    }

    fn register_node(&self, node: NodeInfo) -> Result<NodeInfo, CatalogError> {
        self.request("NODES", Some(&node))
    }

    fn nodes(&self) -> Result<Vec<NodeInfo>, CatalogError> {
        self.request::<Vec<NodeInfo>>("NODES", None::<&()>)
    }
}
