//! One interface over the backing cluster: the in-process simulator or an
//! external content-addressed HTTP store.

pub mod http;
mod sim;
pub mod stub;

pub use http::{DiscoveryClient, HttpConnector, HttpEndpoints, HttpTransport};
pub use sim::SimConnector;

use std::collections::BTreeMap;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::block::{cid_of, Block, BlockId, BlockKind};
use crate::dag::BlockSource;
use crate::error::{Error, Result};
use crate::store::{BlockStore, MemoryStore};

pub trait Connector: Send + Sync {
    fn put(&self, block: &Block, kind: BlockKind) -> Result<BlockId>;
    fn get(&self, id: &BlockId) -> Result<Block>;
    fn has(&self, id: &BlockId) -> Result<bool>;
    fn pin(&self, id: &BlockId, rf_min: usize, rf_max: usize) -> Result<()>;
    fn unpin(&self, id: &BlockId) -> Result<()>;
}

impl BlockSource for dyn Connector + '_ {
    fn fetch(&self, id: &BlockId) -> Result<Block> {
        self.get(id)
    }
}

/// Adapter for places that want a `BlockSource` from a concrete connector.
pub struct ConnectorSource<'a>(pub &'a dyn Connector);

impl BlockSource for ConnectorSource<'_> {
    fn fetch(&self, id: &BlockId) -> Result<Block> {
        self.0.get(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Sim,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorConfig {
    pub backend: Backend,
    pub cluster: Option<(String, u16)>,
    pub node: Option<(String, u16)>,
    pub timeout_ms: u64,
}

impl ConnectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backend == Backend::Http && (self.cluster.is_none() || self.node.is_none()) {
            return Err(Error::Config("http backend needs both cluster and node endpoints".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

/// Connector over a single local store; pins are only recorded.
#[derive(Default)]
pub struct StoreConnector {
    pub store: MemoryStore,
    pub pins: Mutex<BTreeMap<BlockId, (usize, usize)>>,
}

impl StoreConnector {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Connector for StoreConnector {
    fn put(&self, block: &Block, kind: BlockKind) -> Result<BlockId> {
        let id = cid_of(block, kind);
        self.store.put(id, block)?;
        Ok(id)
    }

    fn get(&self, id: &BlockId) -> Result<Block> {
        self.store.get(id)
    }

    fn has(&self, id: &BlockId) -> Result<bool> {
        Ok(self.store.has(id))
    }

    fn pin(&self, id: &BlockId, rf_min: usize, rf_max: usize) -> Result<()> {
        if !self.has(id)? {
            return Err(Error::NotFound(*id));
        }
        self.pins.lock().insert(*id, (rf_min, rf_max));
        Ok(())
    }

    fn unpin(&self, id: &BlockId) -> Result<()> {
        self.pins.lock().remove(id).map(|_| ()).ok_or(Error::NotPinned(*id))
    }
}
