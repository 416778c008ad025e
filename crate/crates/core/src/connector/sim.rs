use std::sync::Arc;

use parking_lot::RwLock;

use super::Connector;
use crate::block::{Block, BlockId, BlockKind};
use crate::cluster::{Cluster, PeerId};
use crate::error::Result;

/// Connector acting as one peer of a shared simulated cluster.
#[derive(Clone)]
pub struct SimConnector {
    pub cluster: Arc<RwLock<Cluster>>,
    pub local: PeerId,
}

impl SimConnector {
    pub fn new(cluster: Arc<RwLock<Cluster>>, local: PeerId) -> Self {
        Self { cluster, local }
    }

    /// Same cluster, seen from another peer.
    pub fn as_peer(&self, peer: PeerId) -> Self {
        Self { cluster: self.cluster.clone(), local: peer }
    }
}

impl Connector for SimConnector {
    fn put(&self, block: &Block, kind: BlockKind) -> Result<BlockId> {
        self.cluster.write().put_local(&self.local, block, kind)
    }

    fn get(&self, id: &BlockId) -> Result<Block> {
        self.cluster.read().get(id)
    }

    fn has(&self, id: &BlockId) -> Result<bool> {
        Ok(self.cluster.read().has(id))
    }

    fn pin(&self, id: &BlockId, rf_min: usize, rf_max: usize) -> Result<()> {
        self.cluster.write().pin(id, rf_min, rf_max).map(|_| ())
    }

    fn unpin(&self, id: &BlockId) -> Result<()> {
        self.cluster.write().unpin(id)
    }
}
