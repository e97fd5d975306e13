//! Desk-scale grid datafarm.
//!
//! A replica-tracking metadata catalog, storage-node daemons serving fragment
//! files, a columnar compressed event-record format, a compiler for `.rootio`
//! property definitions, multi-stream replication, file-affinity scheduling
//! and a parallel I/O benchmark harness.

pub mod bench;
pub mod catalog;
pub mod cli;
pub mod crc;
pub mod eventio;
pub(crate) mod net;
pub mod ratelimit;
pub mod scheduler;
pub mod schemac;
pub mod storage;
pub mod transfer;
