//! Seeded experiments over the simulated cluster: recovery rates of
//! entangled storage against plain replication, and single against
//! collaborative repair cost.

use std::io::Write;
use std::sync::Arc;

use entangled_core::block::BlockKind;
use entangled_core::cluster::{Cluster, PeerId, Scenario};
use entangled_core::connector::SimConnector;
use entangled_core::dag::{chunk, DagConfig};
use entangled_core::edag::{upload, UploadOptions};
use entangled_core::lattice::CodingParams;
use entangled_core::repair::{collaborative_repair, single_repair, CollabOptions, Depth, RepairOutcome, Scope, SimTransport};
pub use entangled_core::{Error, Result};
use parking_lot::RwLock;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Desk-scale setup shared by both experiments.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub peers: usize,
    pub params: CodingParams,
    pub chunk_size: usize,
    pub fanout: usize,
    pub leaves: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Replication of interior nodes and metadata; defaults to every peer.
    pub internal_replication: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            peers: 20,
            params: CodingParams { alpha: 3, s: 5, p: 5 },
            chunk_size: 1024,
            fanout: 174,
            leaves: 2560,
            repetitions: 10,
            seed: 1,
            internal_replication: 20,
        }
    }
}

impl BenchConfig {
    /// The 25 MB file profile.
    pub fn large() -> Self {
        Self { chunk_size: 10 * 1024, ..Self::default() }
    }

    fn file(&self, rep: usize) -> Vec<u8> {
        let mut bytes = vec![0u8; self.leaves * self.chunk_size];
        ChaCha8Rng::seed_from_u64(self.rep_seed(rep) ^ 0x5eed).fill_bytes(&mut bytes);
        bytes
    }

    fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(rep as u64)
    }

    fn cluster(&self, rep: usize) -> Result<Cluster> {
        Cluster::new(&Scenario { peers: self.peers, seed: self.rep_seed(rep), ..Default::default() })
    }

    fn upload_opts(&self) -> Result<UploadOptions> {
        Ok(UploadOptions {
            direct_replication: 1,
            internal_replication: self.internal_replication.min(self.peers),
            ..UploadOptions::new(self.params, DagConfig::new(self.chunk_size, self.fanout)?)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Strategy {
    Entangled,
    Replication(usize),
}

impl Strategy {
    pub fn label(&self, params: &CodingParams) -> String {
        match self {
            Strategy::Entangled => format!("AE({},{},{})", params.alpha, params.s, params.p),
            Strategy::Replication(r) => format!("R={r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub strategy: String,
    pub failure_fraction: f64,
    pub repetition: usize,
    pub pct_blocks_recovered: f64,
}

/// Share of data blocks a client gets back after `fraction` of the peers
/// fail, with unbounded repair.
fn entangled_recovery(cfg: &BenchConfig, rep: usize, fraction: f64) -> Result<f64> {
    let cluster = Arc::new(RwLock::new(cfg.cluster(rep)?));
    let ids = cluster.read().peer_ids();
    let receipt = upload(&SimConnector::new(cluster.clone(), ids[0]), &cfg.file(rep), &cfg.upload_opts()?)?;
    cluster.write().gc()?;
    cluster.write().fail_fraction(fraction);
    let Some(client) = cluster.read().alive_ids().first().copied() else {
        return Ok(0.0);
    };
    let n = receipt.metadata.n;
    let failed = match single_repair(&SimConnector::new(cluster.clone(), client), &receipt.meta_id, Depth::Unbounded) {
        Ok(outcome) => outcome.failed.len(),
        Err(Error::MetadataMissing(_) | Error::AbortedIntermediateNode(_)) => n,
        Err(e) => return Err(e),
    };
    Ok(100.0 * (n - failed) as f64 / n as f64)
}

/// Share of blocks with at least one live replica.
fn replicated_recovery(cfg: &BenchConfig, rep: usize, fraction: f64, r: usize) -> Result<f64> {
    let mut cluster = cfg.cluster(rep)?;
    let origin = cluster.peer_ids()[0];
    let data = chunk(&cfg.file(rep), &DagConfig::new(cfg.chunk_size, cfg.fanout)?);
    let mut ids = Vec::with_capacity(data.len());
    for block in &data {
        let id = cluster.put_local(&origin, block, BlockKind::DataLeaf)?;
        cluster.pin(&id, r, r)?;
        ids.push(id);
    }
    cluster.gc()?;
    cluster.fail_fraction(fraction);
    let alive = ids.iter().filter(|id| !cluster.live_replicas(id).is_empty()).count();
    Ok(100.0 * alive as f64 / ids.len() as f64)
}

/// Recovery percentage for every strategy, fraction and repetition. Rows
/// come out ordered by strategy, fraction, repetition.
pub fn run_recovery_sweep(cfg: &BenchConfig, strategies: &[Strategy], fractions: &[f64]) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(Strategy, f64, usize)> =
        strategies.iter().flat_map(|s| fractions.iter().flat_map(move |f| (0..cfg.repetitions).map(move |r| (*s, *f, r)))).collect();
    jobs.par_iter()
        .map(|(strategy, fraction, rep)| {
            let pct = match strategy {
                Strategy::Entangled => entangled_recovery(cfg, *rep, *fraction)?,
                Strategy::Replication(r) => replicated_recovery(cfg, *rep, *fraction, *r)?,
            };
            Ok(SweepRow { strategy: strategy.label(&cfg.params), failure_fraction: *fraction, repetition: *rep, pct_blocks_recovered: pct })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Collab,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub mode: Mode,
    pub depth: usize,
    pub fraction: f64,
    pub total_time_ticks: f64,
    pub avg_peer_time_ticks: f64,
    pub total_blocks_downloaded: u64,
    pub avg_blocks_per_peer: f64,
}

/// Repair cost only; reading the metadata and walking the file DAG is
/// the same for both modes and is left out.
fn compare_row(mode: Mode, depth: usize, fraction: f64, o: &RepairOutcome) -> CompareRow {
    let o = o.without_scan();
    CompareRow {
        mode,
        depth,
        fraction,
        total_time_ticks: o.total_ticks(),
        avg_peer_time_ticks: o.avg_peer_ticks(),
        total_blocks_downloaded: o.total_blocks(),
        avg_blocks_per_peer: o.avg_blocks_per_peer(),
    }
}

/// Both repair modes on the same damaged cluster.
fn compare_once(cfg: &BenchConfig, rep: usize, fraction: f64, depth: usize, peers_collab: usize) -> Result<[CompareRow; 2]> {
    let cluster = Arc::new(RwLock::new(cfg.cluster(rep)?));
    let ids = cluster.read().peer_ids();
    let receipt = upload(&SimConnector::new(cluster.clone(), ids[0]), &cfg.file(rep), &cfg.upload_opts()?)?;
    cluster.write().gc()?;
    cluster.write().fail_fraction(fraction);
    let alive: Vec<PeerId> = cluster.read().alive_ids();
    let coordinator = *alive.first().ok_or(Error::InsufficientPeers { needed: 1, available: 0 })?;
    let conn = SimConnector::new(cluster.clone(), coordinator);
    let single = single_repair(&conn, &receipt.meta_id, Depth::Limited(depth))?;
    // Health checks have already dropped the failed peers from discovery.
    let listed: Vec<PeerId> = cluster.read().discovery.list_peers().into_iter().map(|(p, _)| p).filter(|p| alive.contains(p)).collect();
    let opts = CollabOptions { peer_budget: peers_collab, depth: Depth::Limited(depth), scope: Scope::Data, reupload: false };
    let collab = collaborative_repair(&conn, &coordinator, &listed, &SimTransport { cluster: cluster.clone() }, &receipt.meta_id, &opts)?;
    Ok([compare_row(Mode::Single, depth, fraction, &single), compare_row(Mode::Collab, depth, fraction, &collab.outcome)])
}

/// Single against collaborative repair; rows ordered by depth, fraction,
/// repetition, then mode.
pub fn run_repair_comparison(cfg: &BenchConfig, depths: &[usize], fractions: &[f64], peers_collab: usize) -> Result<Vec<CompareRow>> {
    let jobs: Vec<(usize, f64, usize)> =
        depths.iter().flat_map(|d| fractions.iter().flat_map(move |f| (0..cfg.repetitions).map(move |r| (*d, *f, r)))).collect();
    let pairs: Result<Vec<[CompareRow; 2]>> = jobs.par_iter().map(|(d, f, r)| compare_once(cfg, *r, *f, *d, peers_collab)).collect();
    Ok(pairs?.into_iter().flatten().collect())
}

pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Mean of `value` over rows matching `keep`.
pub fn mean<T>(rows: &[T], keep: impl Fn(&T) -> bool, value: impl Fn(&T) -> f64) -> f64 {
    let picked: Vec<f64> = rows.iter().filter(|r| keep(r)).map(value).collect();
    picked.iter().sum::<f64>() / picked.len().max(1) as f64
}

pub const DEFAULT_FRACTIONS: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const COMPARE_DEPTHS: [usize; 3] = [5, 7, 10];
pub const COMPARE_FRACTIONS: [f64; 4] = [0.2, 0.3, 0.4, 0.5];

pub fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Entangled, Strategy::Replication(3), Strategy::Replication(5), Strategy::Replication(7)]
}
