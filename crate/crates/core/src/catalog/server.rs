//! Line-oriented control protocol for the catalog.
//!
//! Request: `VERB [json]`. Response: `OK <json>` or `ERR <CODE> <message>`.
//!
//! | verb       | payload                                   | OK payload         |
//! |------------|-------------------------------------------|--------------------|
//! | REGISTER   | `{"lfn", "fragments"}`                    | entry              |
//! | ADDREPLICA | `{"lfn", "index", "location"}`            | entry              |
//! | LOOKUP     | `{"lfn"}`                                 | entry              |
//! | LIST       | `{"pattern"}`                             | list of entries    |
//! | RMREPLICA  | `{"lfn", "index", "node_id"}`             | entry              |
//! | NODES      | none, or a node object to upsert          | node list, or node |

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CatalogApi, CatalogError, FragmentMeta, NodeInfo, ReplicaLocation};
use crate::net::Acceptor;

#[derive(Serialize, Deserialize)]
pub(super) struct RegisterReq {
    pub lfn: String,
    pub fragments: Vec<FragmentMeta>,
}

#[derive(Serialize, Deserialize)]
pub(super) struct AddReplicaReq {
    pub lfn: String,
    pub index: u32,
    pub location: ReplicaLocation,
}

#[derive(Serialize, Deserialize)]
pub(super) struct LookupReq {
    pub lfn: String,
}

#[derive(Serialize, Deserialize)]
pub(super) struct ListReq {
    pub pattern: String,
}

#[derive(Serialize, Deserialize)]
pub(super) struct RemoveReplicaReq {
    pub lfn: String,
    pub index: u32,
    pub node_id: String,
}

fn payload<T: DeserializeOwned>(verb: &str, body: &str) -> Result<T, CatalogError> {
    serde_json::from_str(body).map_err(|e| CatalogError::Protocol(format!("{verb}: {e}")))
}

fn ok<T: Serialize>(value: &T) -> String {
    format!("OK {}", serde_json::to_string(value).expect("response serializes"))
}

/// Execute one request line against `catalog` and produce the response line
/// (without the trailing newline).
pub fn handle_line(catalog: &dyn CatalogApi, line: &str) -> String {
    let line = line.trim_end_matches(['\r', '\n']);
    let (verb, body) = match line.split_once(' ') {
        Some((v, b)) => (v, b.trim()),
        None => (line, ""),
    };
    let result = match verb {
        "REGISTER" => payload::<RegisterReq>(verb, body)
            .and_then(|r| catalog.register_file(&r.lfn, r.fragments))
            .map(|e| ok(&e)),
        "ADDREPLICA" => payload::<AddReplicaReq>(verb, body)
            .and_then(|r| catalog.add_replica(&r.lfn, r.index, r.location))
            .map(|e| ok(&e)),
        "LOOKUP" => payload::<LookupReq>(verb, body)
            .and_then(|r| catalog.lookup(&r.lfn))
            .map(|e| ok(&e)),
        "LIST" => payload::<ListReq>(verb, body)
            .and_then(|r| catalog.list_files(&r.pattern))
            .map(|e| ok(&e)),
        "RMREPLICA" => payload::<RemoveReplicaReq>(verb, body)
            .and_then(|r| catalog.remove_replica(&r.lfn, r.index, &r.node_id))
            .map(|e| ok(&e)),
        "NODES" if body.is_empty() => catalog.nodes().map(|n| ok(&n)),
        "NODES" => payload::<NodeInfo>(verb, body)
            .and_then(|n| catalog.register_node(n))
            .map(|n| ok(&n)),
        other => Err(CatalogError::Protocol(format!("unknown verb {other:?}"))),
    };
    match result {
        Ok(resp) => resp,
        Err(e) => {
            let message = e.to_string().replace(['\r', '\n'], " ");
            format!("ERR {} {message}", e.code())
        }
    }
}

fn serve_connection(catalog: Arc<dyn CatalogApi>, stream: TcpStream) {
    let peer = stream.peer_addr().ok();
    let Ok(write_half) = stream.try_clone() else { return };
    let mut out = std::io::BufWriter::new(write_half);
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle_line(catalog.as_ref(), &line);
        if writeln!(out, "{resp}").and_then(|()| out.flush()).is_err() {
            break;
        }
    }
    ::log::debug!("catalog connection from {peer:?} closed");
}

/// A running catalog service. Stops accepting on `shutdown` or drop.
pub struct CatalogServer {
    acceptor: Acceptor,
}

impl CatalogServer {
    pub fn spawn(
        catalog: Arc<dyn CatalogApi>,
        addr: impl ToSocketAddrs,
    ) -> std::io::Result<CatalogServer> {
        let listener = TcpListener::bind(addr)?;
        let acceptor = Acceptor::spawn(listener, "catalog", move |stream| {
            serve_connection(Arc::clone(&catalog), stream)
        })?;
        Ok(CatalogServer { acceptor })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.acceptor.local_addr()
    }

    /// Block until the accept loop exits (never, unless shut down elsewhere).
    pub fn wait(mut self) {
        self.acceptor.join();
    }

    pub fn shutdown(&mut self) {
        self.acceptor.shutdown();
    }
}
