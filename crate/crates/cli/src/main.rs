mod daemon;
mod sim;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use entangled_core::cluster::PeerId;
use entangled_core::connector::stub::StubServer;
use entangled_core::connector::{Connector, DiscoveryClient, HttpConnector, HttpEndpoints, HttpTransport, SimConnector};
use entangled_core::dag::DagConfig;
use entangled_core::edag::{upload, UploadOptions};
use entangled_core::lattice::CodingParams;
use entangled_core::monitor::{MonitorConfig, MonitorRegistry};
use entangled_core::repair::{
    collaborative_repair, download, fetch_plain, CollabOptions, CollabResult, Depth, DownloadOptions, Scope, SimTransport, WorkerTransport,
};
use entangled_core::{BlockId, Error, Result};

use sim::SimWorld;

/// Exit status for malformed command lines.
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "entangled", version, about = "Alpha-entanglement coded storage")]
struct Cli {
    /// Run against an embedded simulated cluster described by this scenario.
    #[arg(long, global = true, env = "ES_SIM")]
    sim: Option<PathBuf>,
    /// Directory holding simulated cluster state between runs.
    #[arg(long, global = true, env = "ES_STATE")]
    state: Option<PathBuf>,
    /// Network timeout in milliseconds.
    #[arg(long, global = true, env = "ES_TIMEOUT_MS", default_value_t = 10_000)]
    timeout_ms: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a peer: register with discovery, serve blocks and repair work.
    Daemon(DaemonArgs),
    /// Encode, store and pin a file with its eDAGs.
    Upload(UploadArgs),
    /// Fetch a file, repairing missing blocks within the depth budget.
    Download(DownloadArgs),
    /// Run a collaborative repair of one file.
    Repair(RepairArgs),
    /// Serve an in-memory block, pin and discovery backend.
    ServeStub {
        #[arg(long, env = "ES_STUB_IP", default_value = "127.0.0.1")]
        ip: String,
        #[arg(long, env = "ES_STUB_PORT")]
        port: u16,
    },
}

#[derive(Args)]
struct DaemonArgs {
    #[arg(long, env = "ES_CLUSTER_IP")]
    cluster_ip: Option<String>,
    #[arg(long, env = "ES_CLUSTER_PORT")]
    cluster_port: Option<u16>,
    #[arg(long, env = "ES_COMMUNITY_IP")]
    community_ip: Option<String>,
    #[arg(long, env = "ES_PORT")]
    port: Option<u16>,
    #[arg(long, env = "ES_DISCOVERY")]
    discovery: Option<String>,
    #[arg(long, env = "ES_IPFS_IP")]
    ipfs_ip: Option<String>,
    #[arg(long, env = "ES_IPFS_PORT")]
    ipfs_port: Option<u16>,
    /// Simulated ticks to run (sim mode).
    #[arg(long, env = "ES_TICKS", default_value_t = 100)]
    ticks: u64,
    #[arg(long, env = "ES_CHECK_INTERVAL", default_value_t = 60)]
    check_interval: u64,
    #[arg(long, env = "ES_SAMPLE_FRACTION", default_value_t = 0.25)]
    sample_fraction: f64,
    #[arg(long, env = "ES_THRESHOLD", default_value_t = 0.1)]
    threshold: f64,
}

#[derive(Args)]
struct UploadArgs {
    /// Daemon `host:port`, or peer index / id in sim mode.
    #[arg(long, env = "ES_ADDRESS")]
    address: Option<String>,
    #[arg(long, env = "ES_ALPHA", default_value_t = 3)]
    alpha: u8,
    #[arg(long, env = "ES_P", default_value_t = 5)]
    p: usize,
    #[arg(long, env = "ES_S", default_value_t = 5)]
    s: usize,
    /// Replication of data and parity leaves.
    #[arg(long, env = "ES_DIRECT_REPLICATION", default_value_t = 1)]
    direct_replication: usize,
    /// Replication of interior nodes and metadata.
    #[arg(long, env = "ES_REPLICATION", default_value_t = 3)]
    replication: usize,
    #[arg(long, env = "ES_CHUNK_SIZE", default_value_t = entangled_core::dag::DEFAULT_CHUNK_SIZE)]
    chunk_size: usize,
    #[arg(long, env = "ES_FANOUT", default_value_t = entangled_core::dag::DEFAULT_FANOUT)]
    fanout: usize,
    /// Ask the strand-root holders to monitor the file (sim mode).
    #[arg(long)]
    monitor: bool,
    file: PathBuf,
}

#[derive(Args)]
struct DownloadArgs {
    #[arg(long, env = "ES_ADDRESS")]
    address: Option<String>,
    #[arg(long, env = "ES_DEPTH", default_value = "unbounded")]
    depth: Depth,
    /// Metadata id; without it the file is fetched with no repair.
    #[arg(long)]
    metacid: Option<BlockId>,
    /// File root id, for a plain fetch.
    #[arg(long)]
    cid: Option<BlockId>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, env = "ES_UPLOAD_RECOVERY", default_value_t = false, action = clap::ArgAction::Set)]
    upload_recovery: bool,
}

#[derive(Args)]
struct RepairArgs {
    #[arg(long, env = "ES_ADDRESS")]
    address: Option<String>,
    #[arg(long)]
    metacid: BlockId,
    /// Number of worker peers.
    #[arg(long, env = "ES_PEERS", default_value_t = 3)]
    peers: usize,
    #[arg(long, env = "ES_DEPTH", default_value = "unbounded")]
    depth: Depth,
    /// Discovery server (network mode).
    #[arg(long, env = "ES_DISCOVERY")]
    discovery: Option<String>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::RepairFailed(_) | Error::PartialFailure(_) => 2,
        Error::MetadataMissing(_) => 3,
        Error::AbortedIntermediateNode(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("ES_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error={e}");
            if let Error::RepairFailed(p) | Error::PartialFailure(p) = &e {
                eprintln!("failed_positions={}", join(p));
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn join(p: &[usize]) -> String {
    p.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn run(cli: Cli) -> CliResult {
    let timeout = Duration::from_millis(cli.timeout_ms);
    let world = match &cli.sim {
        Some(path) => Some(SimWorld::open(path, cli.state.as_deref())?),
        None => None,
    };
    match cli.command {
        Command::Daemon(a) => match world {
            Some(w) => sim_daemon(w, &a),
            None => net_daemon(&a, timeout),
        },
        Command::Upload(a) => cmd_upload(world, &a, timeout),
        Command::Download(a) => cmd_download(world, &a, timeout),
        Command::Repair(a) => cmd_repair(world, &a, timeout),
        Command::ServeStub { ip, port } => {
            let stub = StubServer::start(&format!("{ip}:{port}")).map_err(Error::from)?;
            println!("listening={}", stub.addr);
            loop {
                std::thread::park();
            }
        }
    }
}

fn require<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| Failure::Usage(format!("--{flag} is required outside sim mode")))
}

fn http(address: &Option<String>, timeout: Duration) -> CliResult<HttpConnector> {
    let addr = require(address, "address")?;
    let url = format!("http://{addr}");
    Ok(HttpConnector::new(HttpEndpoints { node: url.clone(), cluster: url }, timeout))
}

fn net_daemon(a: &DaemonArgs, timeout: Duration) -> CliResult {
    let discovery = require(&a.discovery, "discovery")?;
    let (community_ip, port) = (require(&a.community_ip, "community-ip")?, require(&a.port, "port")?);
    let backend = HttpConnector::new(
        HttpEndpoints::new(
            (&require(&a.ipfs_ip, "ipfs-ip")?, require(&a.ipfs_port, "ipfs-port")?),
            (&require(&a.cluster_ip, "cluster-ip")?, require(&a.cluster_port, "cluster-port")?),
        ),
        timeout,
    );
    let address = format!("{community_ip}:{port}");
    let server = daemon::bind(&address)?;
    let me = PeerId::from_address(&address);
    DiscoveryClient::new(&discovery, timeout).register(&me, &address)?;
    log::warn!("monitoring needs pin allocation data and runs in sim mode only");
    println!("peer_id={me}");
    println!("listening={address}");
    daemon::serve(server, Arc::new(backend));
    Ok(())
}

fn sim_daemon(w: SimWorld, a: &DaemonArgs) -> CliResult {
    let cfg = MonitorConfig {
        check_interval: a.check_interval,
        sample_fraction: a.sample_fraction,
        threshold: a.threshold,
        seed: w.scenario.seed,
        ..Default::default()
    };
    let mut registry = MonitorRegistry::new(w.cluster.clone(), cfg)?;
    for file in &w.monitored {
        if let Err(e) = registry.start_monitoring(file) {
            log::warn!("cannot monitor {file}: {e}");
        }
    }
    let (mut checks, mut repairs, mut handovers, mut lost) = (0, 0, 0, 0);
    for _ in 0..a.ticks {
        w.cluster.write().step();
        let t = registry.tick();
        checks += t.checks.len();
        repairs += t.repairs.len();
        handovers += t.handovers.len();
        lost += t.lost.len();
    }
    let c = w.cluster.read();
    println!("now={}", c.now());
    println!("alive_peers={}", c.alive_ids().len());
    println!("monitored_files={}", registry.files().count());
    println!("checks={checks}");
    println!("repairs={repairs}");
    println!("handovers={handovers}");
    println!("lost={lost}");
    drop(c);
    w.save()?;
    Ok(())
}

fn cmd_upload(world: Option<SimWorld>, a: &UploadArgs, timeout: Duration) -> CliResult {
    let params = CodingParams::new(a.alpha, a.s, a.p)?;
    let opts = UploadOptions {
        direct_replication: a.direct_replication,
        internal_replication: a.replication,
        ..UploadOptions::new(params, DagConfig::new(a.chunk_size, a.fanout)?)
    };
    let bytes = fs::read(&a.file).map_err(Error::from)?;
    let receipt = match world {
        Some(mut w) => {
            let conn = SimConnector::new(w.cluster.clone(), w.peer(a.address.as_deref())?);
            let r = upload(&conn, &bytes, &opts)?;
            w.cluster.write().gc()?;
            if a.monitor {
                w.monitored.insert(r.meta_id);
            }
            w.save()?;
            r
        }
        None => upload(&http(&a.address, timeout)?, &bytes, &opts)?,
    };
    println!("file_id={}", receipt.file_root);
    println!("metadata_id={}", receipt.meta_id);
    println!("bytes={}", bytes.len());
    println!("data_blocks={}", receipt.data_leaves.len());
    println!("parity_blocks={}", receipt.parity_leaves.len());
    Ok(())
}

fn cmd_download(world: Option<SimWorld>, a: &DownloadArgs, timeout: Duration) -> CliResult {
    let conn: Box<dyn Connector> = match &world {
        Some(w) => Box::new(SimConnector::new(w.cluster.clone(), w.peer(a.address.as_deref())?)),
        None => Box::new(http(&a.address, timeout)?),
    };
    let result = match (a.metacid, a.cid) {
        (Some(meta), _) => download(&*conn, &meta, DownloadOptions { depth: a.depth, upload_recovery: a.upload_recovery })
            .map(|d| (d.bytes, d.outcome.missing.len(), d.outcome.recovered.len())),
        (None, Some(root)) => fetch_plain(&*conn, &root).map(|b| (b, 0, 0)),
        (None, None) => return Err(Failure::Usage("either --metacid or --cid is required".into())),
    };
    if let Some(w) = &world {
        w.save()?;
    }
    let (bytes, missing, recovered) = result?;
    write_output(&a.output, &bytes)?;
    println!("output={}", a.output.display());
    println!("bytes={}", bytes.len());
    println!("missing={missing}");
    println!("recovered={recovered}");
    Ok(())
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn cmd_repair(world: Option<SimWorld>, a: &RepairArgs, timeout: Duration) -> CliResult {
    let opts = CollabOptions { peer_budget: a.peers, depth: a.depth, scope: Scope::Full, reupload: true };
    let result = match &world {
        Some(w) => {
            let me = w.peer(a.address.as_deref())?;
            let conn = SimConnector::new(w.cluster.clone(), me);
            let peers: Vec<PeerId> = w.cluster.read().discovery.list_peers().into_iter().map(|(p, _)| p).collect();
            let transport = SimTransport { cluster: w.cluster.clone() };
            let r = collaborative_repair(&conn, &me, &peers, &transport, &a.metacid, &opts);
            w.cluster.write().gc()?;
            w.save()?;
            r?
        }
        None => {
            let conn = http(&a.address, timeout)?;
            let me = PeerId::from_address(&require(&a.address, "address")?);
            let listed = DiscoveryClient::new(&require(&a.discovery, "discovery")?, timeout).list_peers()?;
            let peers: Vec<PeerId> = listed.iter().map(|(p, _)| *p).collect();
            let transport: Box<dyn WorkerTransport> = Box::new(HttpTransport::new(listed, timeout));
            collaborative_repair(&conn, &me, &peers, &*transport, &a.metacid, &opts)?
        }
    };
    report_repair(&result)?;
    Ok(())
}

fn report_repair(r: &CollabResult) -> Result<()> {
    let o = &r.outcome;
    if o.missing.is_empty() && o.parities_missing == 0 {
        println!("status=nothing to repair");
        return Ok(());
    }
    println!("status={}", if o.is_complete() { "repaired" } else { "partial" });
    println!("missing={}", o.missing.len());
    println!("recovered={}", o.recovered.len());
    println!("failed={}", o.failed.len());
    println!("parities_missing={}", o.parities_missing);
    println!("parities_recovered={}", o.parities_recovered);
    println!("workers={}", o.workers.len());
    println!("fallback={}", r.fallback);
    println!("total_time_ticks={:.2}", o.total_ticks());
    println!("total_blocks_downloaded={}", o.total_blocks());
    println!("coordinator.blocks_downloaded={}", o.coordinator.blocks_downloaded);
    for w in &o.workers {
        println!("worker.{}.targets={}", w.peer, w.positions);
        println!("worker.{}.blocks_downloaded={}", w.peer, w.counters.blocks_downloaded);
        println!("worker.{}.fetch_attempts={}", w.peer, w.counters.fetch_attempts);
    }
    o.clone().into_result().map(|_| ())
}
