use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PeerId;
use crate::block::BlockId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinEntry {
    pub allocations: Vec<PeerId>,
    pub rf_min: usize,
    pub rf_max: usize,
}

/// The single authoritative pin set of the cluster.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PinSet {
    entries: BTreeMap<BlockId, PinEntry>,
}

impl PinSet {
    pub fn get(&self, id: &BlockId) -> Option<&PinEntry> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn set(&mut self, id: BlockId, entry: PinEntry) {
        debug_assert!(entry.allocations.len() <= entry.rf_max);
        self.entries.insert(id, entry);
    }

    pub fn remove(&mut self, id: &BlockId) -> Option<PinEntry> {
        self.entries.remove(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BlockId, &PinEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pins that list `peer` among their allocations.
    pub fn allocating(&self, peer: &PeerId) -> Vec<BlockId> {
        self.entries.iter().filter(|(_, e)| e.allocations.contains(peer)).map(|(id, _)| *id).collect()
    }
}
