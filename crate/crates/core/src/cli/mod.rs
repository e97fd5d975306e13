//! `dfctl`: one subcommand per module operation.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::bench::{self, BenchConfig, BenchMode, BenchReport, EmbeddedCluster};
use crate::catalog::{
    CatalogApi, CatalogClient, CatalogServer, Catalog, FragmentMeta, LogicalFileEntry, NodeInfo, NodeStatus,
    ReplicaLocation, SyncPolicy,
};
use crate::eventio::{
    compression_factor, Codec, EventReader, EventWriter, SyntheticEvents, DEFAULT_COLLECTION,
};
use crate::scheduler::{self, predict_completion};
use crate::schemac::{self, SchemaError};
use crate::storage::{fragment_path, FragmentStore, LoadFlags, NodeClient, NodeServer, StoreConfig};
use crate::transfer::{self, TransferError, TransferReport, DEFAULT_CHUNK_BYTES};

pub use self::config::{env_name, parse_config_text, Flags, GlobalConfig, DEFAULT_CATALOG, ENV_PREFIX};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dfctl", version, about = "Desk-scale grid datafarm control tool")]
#[command(after_help = "Exit status: 0 success, 1 operational error, 2 usage error.\n\
Global settings resolve as flag > DF_CATALOG / DF_TIMEOUT / DF_VERBOSITY > config file > default.")]
pub struct Cli {
    /// Catalog service address
    #[arg(long, global = true, value_name = "HOST:PORT")]
    catalog: Option<String>,
    /// Network timeout in seconds
    #[arg(long, global = true, value_name = "SECONDS")]
    timeout: Option<f64>,
    /// More log output (repeat for more)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Config file of `key = value` lines (catalog, timeout, verbosity) [env: DF_CONFIG]
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Plain,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Metadata catalog service
    #[command(subcommand)]
    Catalog(CatalogCmd),
    /// Storage node daemon and node queries
    #[command(subcommand)]
    Node(NodeCmd),
    /// Register a logical file whose fragment i is stored on the i-th NODE
    Reg {
        lfn: String,
        #[arg(required = true)]
        nodes: Vec<String>,
        /// Upload these local files first, file i to node i
        #[arg(long = "file", value_name = "FILE")]
        files: Vec<PathBuf>,
    },
    /// List logical files matching a glob
    Ls {
        #[arg(default_value = "*")]
        pattern: String,
        /// Show fragment count, size and minimum replica count
        #[arg(short, long)]
        long: bool,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Replicate a logical file onto destination nodes
    Rep {
        lfn: String,
        /// Destination node ids; fragment i goes to dest[i % len]
        #[arg(long, required = true, value_delimiter = ',')]
        dest: Vec<String>,
        #[arg(long, default_value_t = 4)]
        streams: usize,
        /// Bytes per ranged read of a pull (suffixes k, M, G, KiB, MiB, GiB)
        #[arg(long, value_parser = parse_size)]
        chunk: Option<u64>,
        /// Also write the per-stream report as CSV
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Copy a logical file (or one fragment) out of the farm
    Get {
        lfn: String,
        /// Output file, `-` for standard output
        out: PathBuf,
        #[arg(long)]
        index: Option<u32>,
        /// Byte offset within the fragment (requires --index)
        #[arg(long, requires = "index", default_value_t = 0)]
        offset: u64,
        /// Byte count, 0 for to-end (requires --index)
        #[arg(long, requires = "index", default_value_t = 0)]
        length: u64,
    },
    /// Store a local file as one fragment on a node
    Put {
        lfn: String,
        index: u32,
        file: PathBuf,
        #[arg(long, required = true)]
        node: String,
        /// Record the copy as a replica of an already registered fragment
        #[arg(long)]
        add_replica: bool,
    },
    /// Event files: generate, dump, summarize
    #[command(subcommand)]
    Evt(EvtCmd),
    /// Compile a .rootio property definition
    Schemac {
        file: PathBuf,
        #[arg(long = "template", value_name = "T")]
        templates: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Macro binding name=value, overrides schema values
        #[arg(long = "define", value_name = "NAME=VALUE")]
        defines: Vec<String>,
    },
    /// Task placement
    #[command(subcommand)]
    Sched(SchedCmd),
    /// Parallel write/read throughput benchmark
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Debug, Subcommand)]
enum CatalogCmd {
    /// Serve the catalog; prints the bound address on standard output
    Serve {
        #[arg(long, default_value = DEFAULT_CATALOG)]
        addr: String,
        /// Directory holding the record log; in-memory when omitted
        #[arg(long)]
        state_dir: Option<PathBuf>,
        /// Flush records without fsync
        #[arg(long)]
        no_fsync: bool,
    },
}

#[derive(Debug, Subcommand)]
enum NodeCmd {
    /// Serve fragments under ROOT and register with the catalog; prints
    /// `NODE_ID ADDRESS` on standard output
    Serve {
        #[arg(long, default_value = "127.0.0.1:0")]
        addr: String,
        #[arg(long)]
        root: PathBuf,
        /// Bytes per second in each direction, 0 for unlimited
        #[arg(long, value_parser = parse_size, default_value = "0")]
        rate_limit: u64,
        /// Defaults to the last component of --root
        #[arg(long)]
        node_id: Option<String>,
        /// Injected load flag echoed by probes (extra_processes, high_fragmentation)
        #[arg(long = "load-flag", value_parser = parse_load_flag)]
        load_flags: Vec<LoadFlags>,
    },
    /// List registered nodes
    Ls {
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Run a node's health self-test
    Probe {
        node_id: String,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
}

#[derive(Debug, Subcommand)]
enum EvtCmd {
    /// Write a synthetic event file
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        events: u64,
        #[arg(long, default_value_t = 1000)]
        hits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Mantissa bits kept (0..=23)
        #[arg(long, default_value_t = 10)]
        qbits: u32,
        #[arg(long, default_value = "deflate")]
        codec: Codec,
        #[arg(long, default_value_t = bench::DEFAULT_EVENTS_PER_BLOCK)]
        block: usize,
    },
    /// Print events, optionally only some collections or an ordinal range
    Dump {
        file: PathBuf,
        #[arg(long = "collection")]
        collections: Vec<String>,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Print file statistics
    Stats {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
}

#[derive(Debug, Subcommand)]
enum SchedCmd {
    /// Assign tasks (`task_id lfn fragment_index est_bytes` lines) to nodes
    Plan {
        #[arg(long)]
        tasks: PathBuf,
        /// Assignment list (`task_id node_id locality` lines), `-` for standard output
        #[arg(long, default_value = "-")]
        out: PathBuf,
        /// Print the predicted completion to standard error
        #[arg(long)]
        predict: bool,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCmd {
    /// Each node writes its own fragment of one logical file
    Write(BenchArgs),
    /// Each node reads its local fragment of the logical file
    Read(BenchArgs),
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1)]
    nodes: usize,
    /// Events per node
    #[arg(long, default_value_t = 100)]
    events: u64,
    #[arg(long, default_value_t = 1000)]
    hits: usize,
    #[arg(long, default_value_t = 10)]
    qbits: u32,
    #[arg(long, default_value = "deflate")]
    codec: Codec,
    /// Node rate limits: one for all or one per node (embedded cluster only)
    #[arg(long, value_delimiter = ',', value_parser = parse_size)]
    rate: Vec<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = bench::DEFAULT_LFN)]
    lfn: String,
    #[arg(long, default_value_t = bench::DEFAULT_EVENTS_PER_BLOCK)]
    block: usize,
    /// Straggler cut as a fraction of the median node rate
    #[arg(long, default_value_t = scheduler::DEFAULT_STRAGGLER_THRESHOLD)]
    threshold: f64,
    /// Run against a throwaway in-process cluster instead of --catalog
    #[arg(long)]
    embedded: bool,
    /// Write the per-node report CSV here
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Append the aggregate to this series CSV (sorted by node count)
    #[arg(long, value_name = "FILE")]
    series: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

/// Raised for bad arguments that clap cannot see; exits 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

/// Failure already described on standard error; exits 1.
#[derive(Debug, thiserror::Error)]
#[error("failed")]
struct Reported;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Byte count with an optional suffix: k/M/G (powers of 1000) or
/// KiB/MiB/GiB (powers of 1024).
pub fn parse_size(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, suffix) = s.split_at(split);
    let n: u64 = num.parse().map_err(|_| format!("invalid size {s:?}"))?;
    let mult: u64 = match suffix {
        "" | "B" => 1,
        "k" | "K" | "kB" | "KB" => 1_000,
        "M" | "MB" => 1_000_000,
        "G" | "GB" => 1_000_000_000,
        "KiB" => 1 << 10,
        "MiB" => 1 << 20,
        "GiB" => 1 << 30,
        _ => return Err(format!("unknown size suffix in {s:?}")),
    };
    n.checked_mul(mult).ok_or_else(|| format!("size {s:?} overflows"))
}

fn parse_load_flag(s: &str) -> Result<LoadFlags, String> {
    LoadFlags::parse(s).ok_or_else(|| format!("unknown load flag {s:?} (extra_processes, high_fragmentation)"))
}

struct Ctx<'a> {
    cfg: GlobalConfig,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn catalog(&self) -> CatalogClient {
        CatalogClient::with_timeout(self.cfg.catalog_addr.clone(), self.cfg.timeout())
    }

    fn node_map(&self, catalog: &dyn CatalogApi) -> Result<BTreeMap<String, NodeInfo>> {
        Ok(catalog.nodes()?.into_iter().map(|n| (n.node_id.clone(), n)).collect())
    }

    fn connect(&self, node: &NodeInfo) -> Result<NodeClient> {
        NodeClient::connect(&node.address, self.cfg.timeout())
            .with_context(|| format!("node {} at {}", node.node_id, node.address))
    }
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_env("DF_LOG").try_init();
}

/// Parse `args` (program name first) and run. Never panics on bad input;
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let flags = Flags {
        catalog: cli.catalog.clone(),
        timeout: cli.timeout,
        verbosity: (cli.verbose > 0).then_some(cli.verbose),
        config: cli.config.clone(),
    };
    let cfg = match GlobalConfig::from_process(&flags) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    init_logging(cfg.verbosity);
    let mut ctx = Ctx { cfg, out, err };
    let result = dispatch(&mut ctx, cli.command);
    let _ = ctx.out.flush();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) if e.is::<Reported>() => EXIT_FAILURE,
        Err(e) if e.is::<UsageError>() => {
            let _ = writeln!(ctx.err, "error: {e}\n\n{}", Cli::command().render_usage());
            EXIT_USAGE
        }
        Err(e) => {
            let _ = writeln!(ctx.err, "error: {e:#}");
            EXIT_FAILURE
        }
    }
}

/// `dfctl` entry point over the process arguments and standard streams.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}

fn dispatch(ctx: &mut Ctx, command: Command) -> Result<()> {
    match command {
        Command::Catalog(CatalogCmd::Serve { addr, state_dir, no_fsync }) => catalog_serve(ctx, &addr, state_dir, no_fsync),
        Command::Node(NodeCmd::Serve { addr, root, rate_limit, node_id, load_flags }) => {
            node_serve(ctx, &addr, &root, rate_limit, node_id, &load_flags)
        }
        Command::Node(NodeCmd::Ls { format }) => node_ls(ctx, format),
        Command::Node(NodeCmd::Probe { node_id, format }) => node_probe(ctx, &node_id, format),
        Command::Reg { lfn, nodes, files } => reg(ctx, &lfn, &nodes, &files),
        Command::Ls { pattern, long, format } => ls(ctx, &pattern, long, format),
        Command::Rep { lfn, dest, streams, chunk, csv, format } => rep(ctx, &lfn, &dest, streams, chunk, csv, format),
        Command::Get { lfn, out, index, offset, length } => get(ctx, &lfn, &out, index, offset, length),
        Command::Put { lfn, index, file, node, add_replica } => put(ctx, &lfn, index, &file, &node, add_replica),
        Command::Evt(cmd) => evt(ctx, cmd),
        Command::Schemac { file, templates, out, defines } => schemac_cmd(ctx, &file, &templates, &out, &defines),
        Command::Sched(SchedCmd::Plan { tasks, out, predict }) => sched_plan(ctx, &tasks, &out, predict),
        Command::Bench(BenchCmd::Write(a)) => bench_cmd(ctx, BenchMode::Write, a),
        Command::Bench(BenchCmd::Read(a)) => bench_cmd(ctx, BenchMode::Read, a),
    }
}

fn catalog_serve(ctx: &mut Ctx, addr: &str, state_dir: Option<PathBuf>, no_fsync: bool) -> Result<()> {
    let catalog: Arc<dyn CatalogApi> = match &state_dir {
        Some(dir) => {
            let policy = if no_fsync { SyncPolicy::Flush } else { SyncPolicy::Fsync };
            Arc::new(Catalog::open_with(dir, policy).with_context(|| format!("opening {}", dir.display()))?)
        }
        None => Arc::new(Catalog::in_memory()),
    };
    let server = CatalogServer::spawn(catalog, addr).with_context(|| format!("binding {addr}"))?;
    writeln!(ctx.out, "{}", server.local_addr())?;
    ctx.out.flush()?;
    log::info!("catalog serving on {}", server.local_addr());
    server.wait();
    Ok(())
}

fn node_serve(
    ctx: &mut Ctx,
    addr: &str,
    root: &Path,
    rate_limit: u64,
    node_id: Option<String>,
    load_flags: &[LoadFlags],
) -> Result<()> {
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let root = root.canonicalize()?;
    let node_id = match node_id {
        Some(id) => id,
        None => root
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| usage("cannot derive a node id from --root; pass --node-id"))?,
    };
    let flags = load_flags.iter().fold(LoadFlags::empty(), |a, &b| a | b);
    let store = FragmentStore::open(StoreConfig::new(&node_id, &root).rate_limit(rate_limit).load_flags(flags))?;
    let mut server = NodeServer::spawn(Arc::new(store), addr).with_context(|| format!("binding {addr}"))?;
    let info = NodeInfo {
        node_id: node_id.clone(),
        address: server.local_addr().to_string(),
        storage_root: root.to_string_lossy().into_owned(),
        rate_limit_bps: rate_limit,
        status: NodeStatus::Up,
    };
    if let Err(e) = ctx.catalog().register_node(info) {
        server.shutdown();
        return Err(e).context("registering with the catalog");
    }
    writeln!(ctx.out, "{node_id} {}", server.local_addr())?;
    ctx.out.flush()?;
    log::info!("node {node_id} serving {} on {}", root.display(), server.local_addr());
    server.wait();
    Ok(())
}

fn csv_writer<'a>(out: &'a mut dyn Write) -> csv::Writer<&'a mut dyn Write> {
    csv::Writer::from_writer(out)
}

fn node_ls(ctx: &mut Ctx, format: Format) -> Result<()> {
    let nodes = ctx.catalog().nodes()?;
    match format {
        Format::Plain => {
            for n in nodes {
                writeln!(ctx.out, "{} {} {} {} {}", n.node_id, n.address, status_name(n.status), n.rate_limit_bps, n.storage_root)?;
            }
        }
        Format::Csv => {
            let mut w = csv_writer(ctx.out);
            w.write_record(["node_id", "address", "status", "rate_limit_bps", "storage_root"])?;
            for n in nodes {
                w.write_record([&n.node_id, &n.address, status_name(n.status), &n.rate_limit_bps.to_string(), &n.storage_root])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn status_name(s: NodeStatus) -> &'static str {
    match s {
        NodeStatus::Up => "up",
        NodeStatus::Down => "down",
    }
}

fn node_probe(ctx: &mut Ctx, node_id: &str, format: Format) -> Result<()> {
    let catalog = ctx.catalog();
    let nodes = ctx.node_map(&catalog)?;
    let node = nodes.get(node_id).ok_or_else(|| anyhow!("unknown node {node_id:?}"))?;
    let h = ctx.connect(node)?.probe()?;
    let flags = h.load_flags.names().join("|");
    match format {
        Format::Plain => {
            writeln!(ctx.out, "node_id {node_id}")?;
            writeln!(ctx.out, "free_bytes {}", h.free_bytes)?;
            writeln!(ctx.out, "measured_write_bps {}", h.measured_write_bps)?;
            writeln!(ctx.out, "measured_read_bps {}", h.measured_read_bps)?;
            writeln!(ctx.out, "load_flags {}", if flags.is_empty() { "-" } else { &flags })?;
        }
        Format::Csv => {
            let mut w = csv_writer(ctx.out);
            w.write_record(["node_id", "free_bytes", "measured_write_bps", "measured_read_bps", "load_flags"])?;
            w.write_record([
                node_id,
                &h.free_bytes.to_string(),
                &h.measured_write_bps.to_string(),
                &h.measured_read_bps.to_string(),
                &flags,
            ])?;
            w.flush()?;
        }
    }
    Ok(())
}

fn reg(ctx: &mut Ctx, lfn: &str, node_ids: &[String], files: &[PathBuf]) -> Result<()> {
    if !files.is_empty() && files.len() != node_ids.len() {
        return Err(usage(format!("{} files given for {} nodes", files.len(), node_ids.len())));
    }
    let catalog = ctx.catalog();
    let nodes = ctx.node_map(&catalog)?;
    let mut fragments = Vec::with_capacity(node_ids.len());
    for (i, id) in node_ids.iter().enumerate() {
        let index = i as u32;
        let node = nodes.get(id).ok_or_else(|| anyhow!("unknown node {id:?}"))?;
        let mut client = ctx.connect(node)?;
        let meta = match files.get(i) {
            Some(path) => {
                let f = File::open(path).with_context(|| path.display().to_string())?;
                let size = f.metadata()?.len();
                client.put_from(lfn, index, size, f)?.into_fragment_meta(index, id)
            }
            None => {
                let size = client.stat(lfn, index)?;
                let crc32 = client.crc(lfn, index)?;
                let path = fragment_path(Path::new(&node.storage_root), lfn, index);
                FragmentMeta {
                    index,
                    size_bytes: size,
                    crc32,
                    replicas: vec![ReplicaLocation { node_id: id.clone(), path: path.to_string_lossy().into_owned(), crc32 }],
                }
            }
        };
        fragments.push(meta);
    }
    let entry = catalog.register_file(lfn, fragments)?;
    writeln!(ctx.out, "{} {} {}", entry.lfn, entry.n_fragments, entry.total_size)?;
    Ok(())
}

fn min_replicas(e: &LogicalFileEntry) -> usize {
    e.fragments.iter().map(|f| f.replicas.len()).min().unwrap_or(0)
}

fn ls(ctx: &mut Ctx, pattern: &str, long: bool, format: Format) -> Result<()> {
    let entries = ctx.catalog().list_files(pattern)?;
    match format {
        Format::Plain => {
            for e in entries {
                if long {
                    writeln!(ctx.out, "{} {} {} {}", e.lfn, e.n_fragments, e.total_size, min_replicas(&e))?;
                } else {
                    writeln!(ctx.out, "{}", e.lfn)?;
                }
            }
        }
        Format::Csv => {
            let mut w = csv_writer(ctx.out);
            w.write_record(["lfn", "n_fragments", "total_size", "min_replicas"])?;
            for e in entries {
                w.write_record([&e.lfn, &e.n_fragments.to_string(), &e.total_size.to_string(), &min_replicas(&e).to_string()])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn print_transfer(ctx: &mut Ctx, report: &TransferReport, format: Format) -> Result<()> {
    match format {
        Format::Csv => transfer::write_csv(report, &mut *ctx.out)?,
        Format::Plain => {
            writeln!(ctx.out, "{:>8} {:>10} {:>10} {:>12} {:>10} {:>14}", "fragment", "source", "dest", "bytes", "seconds", "bps")?;
            for s in &report.per_stream {
                let note = match (&s.error, s.noop) {
                    (Some(e), _) => format!("  FAILED: {e}"),
                    (None, true) => "  (already present)".to_owned(),
                    _ => String::new(),
                };
                writeln!(
                    ctx.out,
                    "{:>8} {:>10} {:>10} {:>12} {:>10.3} {:>14.0}{note}",
                    s.fragment_index, s.source, s.dest, s.bytes, s.seconds, s.bps
                )?;
            }
            writeln!(
                ctx.out,
                "aggregate {} bytes in {:.3} s = {:.0} B/s, verified {}",
                report.total_bytes, report.wall_seconds, report.aggregate_bps, report.verified
            )?;
        }
    }
    Ok(())
}

fn rep(
    ctx: &mut Ctx,
    lfn: &str,
    dest: &[String],
    streams: usize,
    chunk: Option<u64>,
    csv_path: Option<PathBuf>,
    format: Format,
) -> Result<()> {
    if streams == 0 {
        return Err(usage("--streams must be at least 1"));
    }
    let catalog = ctx.catalog();
    let mut plan = transfer::plan_for(&catalog, lfn, dest, streams)?;
    plan.chunk_bytes = chunk.unwrap_or(DEFAULT_CHUNK_BYTES).max(1);
    let (report, failed) = match transfer::execute(&plan, &catalog, ctx.cfg.timeout()) {
        Ok(r) => (r, false),
        Err(TransferError::PartialFailure(r)) => (*r, true),
        Err(e) => return Err(e.into()),
    };
    print_transfer(ctx, &report, format)?;
    if let Some(p) = csv_path {
        transfer::write_csv(&report, File::create(&p).with_context(|| p.display().to_string())?)?;
    }
    if failed {
        bail!("{} of {} fragments failed", report.failed().count(), report.per_stream.len());
    }
    Ok(())
}

/// Fetch one whole fragment from the first replica whose bytes match the
/// catalog checksum.
fn fetch_verified(ctx: &mut Ctx, nodes: &BTreeMap<String, NodeInfo>, lfn: &str, frag: &FragmentMeta) -> Result<Vec<u8>> {
    let mut last = anyhow!("fragment {} has no reachable replica", frag.index);
    for r in &frag.replicas {
        let Some(node) = nodes.get(&r.node_id).filter(|n| n.status == NodeStatus::Up) else { continue };
        let attempt = ctx.connect(node).and_then(|mut c| Ok(c.get(lfn, frag.index, 0, 0)?));
        match attempt {
            Ok(data) if crate::crc::crc32(&data) == frag.crc32 && data.len() as u64 == frag.size_bytes => return Ok(data),
            Ok(_) => {
                log::warn!("fragment {} on {} does not match the catalog checksum", frag.index, r.node_id);
                last = anyhow!("fragment {}: no replica matches the catalog checksum", frag.index);
            }
            Err(e) => {
                log::warn!("fragment {} on {}: {e:#}", frag.index, r.node_id);
                last = e;
            }
        }
    }
    Err(last)
}

fn get(ctx: &mut Ctx, lfn: &str, out: &Path, index: Option<u32>, offset: u64, length: u64) -> Result<()> {
    let catalog = ctx.catalog();
    let entry = catalog.lookup(lfn)?;
    let nodes = ctx.node_map(&catalog)?;
    let mut chunks: Vec<Vec<u8>> = Vec::new();
    match index {
        Some(i) => {
            let frag = entry.fragment(i).ok_or_else(|| anyhow!("{lfn:?} has no fragment {i}"))?;
            if offset == 0 && length == 0 {
                chunks.push(fetch_verified(ctx, &nodes, lfn, frag)?);
            } else {
                let r = frag.replicas.first().ok_or_else(|| anyhow!("fragment {i} has no replicas"))?;
                let node = nodes.get(&r.node_id).ok_or_else(|| anyhow!("unknown node {:?}", r.node_id))?;
                chunks.push(ctx.connect(node)?.get(lfn, i, offset, length)?);
            }
        }
        None => {
            for frag in &entry.fragments {
                chunks.push(fetch_verified(ctx, &nodes, lfn, frag)?);
            }
        }
    }
    if out == Path::new("-") {
        for c in &chunks {
            ctx.out.write_all(c)?;
        }
        return Ok(());
    }
    let tmp = PathBuf::from(format!("{}.part", out.display()));
    {
        let mut w = BufWriter::new(File::create(&tmp).with_context(|| tmp.display().to_string())?);
        for c in &chunks {
            w.write_all(c)?;
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, out)?;
    Ok(())
}

fn put(ctx: &mut Ctx, lfn: &str, index: u32, file: &Path, node_id: &str, add_replica: bool) -> Result<()> {
    let catalog = ctx.catalog();
    let nodes = ctx.node_map(&catalog)?;
    let node = nodes.get(node_id).ok_or_else(|| anyhow!("unknown node {node_id:?}"))?;
    let f = File::open(file).with_context(|| file.display().to_string())?;
    let size = f.metadata()?.len();
    let receipt = ctx.connect(node)?.put_from(lfn, index, size, f)?;
    writeln!(ctx.out, "{index} {} {:08x} {}", receipt.size_bytes, receipt.crc32, receipt.path)?;
    if add_replica {
        let loc = ReplicaLocation { node_id: node_id.to_owned(), path: receipt.path, crc32: receipt.crc32 };
        catalog.add_replica(lfn, index, loc)?;
    }
    Ok(())
}

fn evt(ctx: &mut Ctx, cmd: EvtCmd) -> Result<()> {
    match cmd {
        EvtCmd::Gen { out, events, hits, seed, qbits, codec, block } => {
            let gen = SyntheticEvents::new(events, hits, seed, qbits).map_err(|e| usage(e.to_string()))?;
            let sink = BufWriter::new(File::create(&out).with_context(|| out.display().to_string())?);
            let mut w = EventWriter::new(sink, vec![DEFAULT_COLLECTION.to_owned()], codec, block)
                .map_err(|e| usage(e.to_string()))?;
            for e in gen {
                w.push(&e)?;
            }
            let (stats, sink) = w.finish()?;
            sink.into_inner().map_err(|e| e.into_error())?.sync_all()?;
            writeln!(
                ctx.out,
                "{} events, {} bytes, compression factor {}",
                stats.n_events,
                stats.file_bytes,
                compression_factor(&stats).map(|f| format!("{f:.4}")).unwrap_or_else(|_| "-".into())
            )?;
            Ok(())
        }
        EvtCmd::Dump { file, collections, from, to, format } => {
            let mut r = EventReader::open(File::open(&file).with_context(|| file.display().to_string())?)?;
            let range = from.unwrap_or(0)..to.unwrap_or(r.n_events());
            let names: Vec<&str> = collections.iter().map(String::as_str).collect();
            let selection = (!names.is_empty()).then_some(names.as_slice());
            let events = r.read_events(selection, range)?;
            match format {
                Format::Plain => {
                    for ev in &events {
                        writeln!(ctx.out, "event {}", ev.event_id)?;
                        for c in &ev.collections {
                            writeln!(ctx.out, "  {} {}", c.detector_name, c.hits.len())?;
                            for h in &c.hits {
                                writeln!(ctx.out, "    {} {} {} {}", h.edep_abs, h.edep_gap, h.track_len_abs, h.track_len_gap)?;
                            }
                        }
                    }
                }
                Format::Csv => {
                    let mut w = csv_writer(ctx.out);
                    w.write_record(["event_id", "collection", "hit", "edep_abs", "edep_gap", "track_len_abs", "track_len_gap"])?;
                    for ev in &events {
                        for c in &ev.collections {
                            for (i, h) in c.hits.iter().enumerate() {
                                w.write_record([
                                    ev.event_id.to_string(),
                                    c.detector_name.clone(),
                                    i.to_string(),
                                    h.edep_abs.to_string(),
                                    h.edep_gap.to_string(),
                                    h.track_len_abs.to_string(),
                                    h.track_len_gap.to_string(),
                                ])?;
                            }
                        }
                    }
                    w.flush()?;
                }
            }
            Ok(())
        }
        EvtCmd::Stats { file, format } => {
            let mut r = EventReader::open(File::open(&file).with_context(|| file.display().to_string())?)?;
            let s = r.stats()?;
            let factor = compression_factor(&s).map(|f| format!("{f:.4}")).unwrap_or_default();
            let rows = [
                ("n_events", s.n_events.to_string()),
                ("n_blocks", r.n_blocks().to_string()),
                ("collections", r.directory().join("|")),
                ("bytes_raw", s.bytes_raw.to_string()),
                ("bytes_compressed", s.bytes_compressed.to_string()),
                ("mean_event_bytes", format!("{:.1}", s.mean_event_bytes)),
                ("file_bytes", s.file_bytes.to_string()),
                ("compression_factor", factor),
            ];
            match format {
                Format::Plain => {
                    for (k, v) in rows {
                        writeln!(ctx.out, "{k} {v}")?;
                    }
                }
                Format::Csv => {
                    let mut w = csv_writer(ctx.out);
                    w.write_record(rows.iter().map(|(k, _)| *k))?;
                    w.write_record(rows.iter().map(|(_, v)| v.as_str()))?;
                    w.flush()?;
                }
            }
            Ok(())
        }
    }
}

fn schemac_cmd(ctx: &mut Ctx, file: &Path, templates: &[PathBuf], out: &Path, defines: &[String]) -> Result<()> {
    let defs = defines.iter().map(|d| schemac::parse_define(d).map_err(usage)).collect::<Result<Vec<_>>>()?;
    let name = file.display().to_string();
    match schemac::compile(file, templates, out, &defs) {
        Ok(r) => {
            for d in &r.diagnostics {
                writeln!(ctx.err, "{}", d.render(&name))?;
            }
            writeln!(ctx.out, "{}", r.descriptor_path.display())?;
            for p in &r.rendered {
                writeln!(ctx.out, "{}", p.display())?;
            }
            Ok(())
        }
        Err(SchemaError::ValidationFailed(diags)) => {
            for d in &diags {
                writeln!(ctx.err, "{}", d.render(&name))?;
            }
            Err(Reported.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn sched_plan(ctx: &mut Ctx, tasks_path: &Path, out: &Path, predict: bool) -> Result<()> {
    let text = fs::read_to_string(tasks_path).with_context(|| tasks_path.display().to_string())?;
    let tasks = scheduler::parse_tasks(&text).map_err(|e| anyhow!("{}: {e}", tasks_path.display()))?;
    let catalog = ctx.catalog();
    let lfns: BTreeSet<&str> = tasks.iter().map(|t| t.lfn.as_str()).collect();
    let files = lfns.into_iter().map(|l| catalog.lookup(l)).collect::<Result<Vec<_>, _>>()?;
    let nodes = catalog.nodes()?;
    let assignments = scheduler::assign(&tasks, &files, &nodes)?;
    let listing = scheduler::format_assignments(&assignments);
    if out == Path::new("-") {
        ctx.out.write_all(listing.as_bytes())?;
    } else {
        fs::write(out, listing).with_context(|| out.display().to_string())?;
    }
    if predict {
        let rates: BTreeMap<String, f64> = nodes
            .iter()
            .filter(|n| n.rate_limit_bps > 0)
            .map(|n| (n.node_id.clone(), n.rate_limit_bps as f64))
            .collect();
        let p = predict_completion(&tasks, &assignments, &rates)?;
        writeln!(ctx.err, "predicted wall_seconds {:.3} aggregate_bps {:.0}", p.wall_seconds, p.aggregate_bps)?;
    }
    Ok(())
}

fn print_bench(ctx: &mut Ctx, report: &BenchReport, format: Format) -> Result<()> {
    if format == Format::Csv {
        return Ok(bench::write_report_csv(report, &mut *ctx.out)?);
    }
    writeln!(ctx.out, "{:>8} {:>12} {:>10} {:>14}", "node", "bytes", "seconds", "bps")?;
    for r in &report.per_node {
        let mark = if report.straggler_report.is_straggler(&r.node_id) { "  straggler" } else { "" };
        writeln!(ctx.out, "{:>8} {:>12} {:>10.3} {:>14.0}{mark}", r.node_id, r.bytes, r.seconds, r.bps)?;
    }
    writeln!(
        ctx.out,
        "{} {} nodes: {} bytes in {:.3} s, aggregate {:.0} B/s",
        report.config.mode.name(),
        report.config.n_nodes,
        report.total_bytes,
        report.wall_seconds,
        report.aggregate_bps
    )?;
    if let Some(p) = &report.prediction {
        writeln!(ctx.out, "predicted {:.3} s, {:.0} B/s", p.wall_seconds, p.aggregate_bps)?;
    }
    writeln!(
        ctx.out,
        "events {} compression factor {}",
        report.event_stats.n_events,
        report.compression_factor().map(|f| format!("{f:.4}")).unwrap_or_else(|| "-".into())
    )?;
    Ok(())
}

fn bench_cmd(ctx: &mut Ctx, mode: BenchMode, a: BenchArgs) -> Result<()> {
    let config = BenchConfig {
        n_nodes: a.nodes,
        events_per_node: a.events,
        hits_per_event: a.hits,
        quantize_bits: a.qbits,
        codec: a.codec,
        node_rate_bps: a.rate.clone(),
        seed: a.seed,
        mode,
        lfn: a.lfn.clone(),
        events_per_block: a.block,
        straggler_threshold: a.threshold,
        timeout: ctx.cfg.timeout(),
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    if !a.embedded && !a.rate.is_empty() {
        return Err(usage("--rate applies to --embedded clusters; external nodes take --rate-limit at startup"));
    }
    let report = if a.embedded {
        let cluster = EmbeddedCluster::for_config(&config)?;
        let catalog = cluster.catalog_client();
        if mode == BenchMode::Read {
            bench::run_write_bench(&BenchConfig { mode: BenchMode::Write, ..config.clone() }, &catalog)?;
        }
        bench::run_bench(&config, &catalog)?
    } else {
        bench::run_bench(&config, &ctx.catalog())?
    };
    print_bench(ctx, &report, a.format)?;
    if let Some(p) = &a.csv {
        bench::emit_report(&report, p)?;
    }
    if let Some(p) = &a.series {
        bench::append_series(&report, p)?;
    }
    Ok(())
}
