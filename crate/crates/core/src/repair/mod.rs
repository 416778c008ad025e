//! Depth-limited single-node repair and the coordinator/worker protocol.

mod collab;
pub(crate) mod download;
mod engine;
pub mod wire;

pub use collab::{collaborative_repair, partition, worker_repair, CollabOptions, CollabResult, LocalTransport, SimTransport, WorkerTransport};
pub use download::{download, fetch_plain, single_repair, DownloadOptions, Downloaded};
pub use engine::{repair_block, Repairer, Session};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::block::BlockId;
use crate::error::{Error, Result};
use crate::lattice::StrandEdge;

/// Cost of one block fetch in internal time units; one XOR costs one unit.
pub const FETCH_UNITS: u64 = 100;
pub const XOR_UNITS: u64 = 1;
/// Time units per simulated tick.
pub const UNITS_PER_TICK: u64 = 100;

/// Parities a chain may consume per strand direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Depth {
    Limited(usize),
    Unbounded,
}

impl Depth {
    pub fn budget(self) -> usize {
        match self {
            Depth::Limited(k) => k,
            Depth::Unbounded => usize::MAX,
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Depth::Limited(k) => write!(f, "{k}"),
            Depth::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unbounded" | "inf" | "max" => Ok(Depth::Unbounded),
            _ => s.parse().map(Depth::Limited).map_err(|_| Error::Config(format!("bad depth {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Every network request, including misses.
    pub fetch_attempts: u64,
    /// Requests that returned a block.
    pub blocks_downloaded: u64,
    pub xors: u64,
}

impl Counters {
    pub fn units(&self) -> u64 {
        self.fetch_attempts * FETCH_UNITS + self.xors * XOR_UNITS
    }

    pub fn ticks(&self) -> f64 {
        self.units() as f64 / UNITS_PER_TICK as f64
    }

    pub fn plus(self, o: Counters) -> Counters {
        Counters {
            fetch_attempts: self.fetch_attempts + o.fetch_attempts,
            blocks_downloaded: self.blocks_downloaded + o.blocks_downloaded,
            xors: self.xors + o.xors,
        }
    }

    pub fn minus(self, o: Counters) -> Counters {
        Counters {
            fetch_attempts: self.fetch_attempts.saturating_sub(o.fetch_attempts),
            blocks_downloaded: self.blocks_downloaded.saturating_sub(o.blocks_downloaded),
            xors: self.xors.saturating_sub(o.xors),
        }
    }
}

/// A block to recover: data by 1-based position, or a parity edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Data(usize),
    Parity(StrandEdge),
}

/// What a repair tries to restore.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Data,
    /// Data and parity leaves.
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeerWork {
    pub peer: String,
    pub positions: usize,
    pub counters: Counters,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RepairOutcome {
    pub missing: Vec<usize>,
    pub recovered: BTreeMap<usize, BlockId>,
    pub failed: Vec<usize>,
    pub parities_missing: usize,
    pub parities_recovered: usize,
    pub coordinator: Counters,
    /// Part of `coordinator` spent reading metadata and walking the DAGs.
    pub scan: Counters,
    pub workers: Vec<PeerWork>,
}

impl RepairOutcome {
    pub fn is_complete(&self) -> bool {
        self.failed.is_empty()
    }

    pub fn total_blocks(&self) -> u64 {
        self.coordinator.blocks_downloaded + self.workers.iter().map(|w| w.counters.blocks_downloaded).sum::<u64>()
    }

    /// Coordinator time plus the slowest worker.
    pub fn total_ticks(&self) -> f64 {
        self.coordinator.ticks() + self.workers.iter().map(|w| w.counters.ticks()).fold(0.0, f64::max)
    }

    /// Mean worker time; the whole run when no worker took part.
    pub fn avg_peer_ticks(&self) -> f64 {
        if self.workers.is_empty() {
            return self.total_ticks();
        }
        self.workers.iter().map(|w| w.counters.ticks()).sum::<f64>() / self.workers.len() as f64
    }

    pub fn avg_blocks_per_peer(&self) -> f64 {
        if self.workers.is_empty() {
            return self.total_blocks() as f64;
        }
        self.workers.iter().map(|w| w.counters.blocks_downloaded).sum::<u64>() as f64 / self.workers.len() as f64
    }

    /// The same outcome with the coordinator's scan cost removed, leaving
    /// only the work spent on repair.
    pub fn without_scan(&self) -> RepairOutcome {
        RepairOutcome { coordinator: self.coordinator.minus(self.scan), scan: Counters::default(), ..self.clone() }
    }

    /// `PartialFailure` when any data position stayed missing.
    pub fn into_result(self) -> Result<Self> {
        if self.failed.is_empty() {
            Ok(self)
        } else {
            Err(Error::PartialFailure(self.failed))
        }
    }
}
