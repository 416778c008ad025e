//! Deterministic multi-peer cluster driven by an explicit tick clock.
//!
//! Peers gossip TTL metrics, a single authoritative pin set records
//! allocations, failures are detected from expired metrics, and the alive
//! peer closest to a failed one (XOR distance over ids) re-pins what it held.

pub mod allocator;
pub mod discovery;
pub mod events;
pub mod metrics;
pub mod pinset;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::json;

use crate::block::{cid_of, sha256, Block, BlockId, BlockKind};
use crate::error::{Error, Result};
use crate::store::{BlockStore, MemoryStore};

pub use discovery::DiscoveryRegistry;
pub use events::{Event, EventLog};
pub use metrics::{MetricBoard, MetricKind, MetricTtls, MetricValue, PeerMetric};
pub use pinset::{PinEntry, PinSet};
pub use scenario::{CodingSection, FailureEvent, Scenario};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PeerId(pub [u8; 32]);

impl PeerId {
    /// Id of peer `index` in a cluster built from `seed`.
    pub fn derive(seed: u64, index: usize) -> Self {
        let mut input = Vec::with_capacity(16);
        input.extend_from_slice(&seed.to_le_bytes());
        input.extend_from_slice(&(index as u64).to_le_bytes());
        PeerId(sha256(&input))
    }

    /// Id of a networked peer, from its community address.
    pub fn from_address(address: &str) -> Self {
        PeerId(sha256(address.as_bytes()))
    }

    pub fn distance(&self, other: &PeerId) -> [u8; 32] {
        let mut d = [0u8; 32];
        for (k, byte) in d.iter_mut().enumerate() {
            *byte = self.0[k] ^ other.0[k];
        }
        d
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PeerId({})", self.short())
    }
}

impl FromStr for PeerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|_| Error::InvalidId(s.to_string()))?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| Error::InvalidId(s.to_string()))?;
        Ok(PeerId(arr))
    }
}

impl Serialize for PeerId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PeerId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub struct Peer {
    pub id: PeerId,
    pub index: usize,
    pub store: Arc<dyn BlockStore>,
    pub tags: BTreeMap<String, String>,
    pub capacity: u64,
    pub alive: bool,
    pub address: String,
    used: u64,
}

impl Peer {
    pub fn used_bytes(&self) -> u64 {
        self.used
    }

    fn put(&mut self, id: BlockId, block: &Block) -> Result<()> {
        if self.store.has(&id) {
            return Ok(());
        }
        if self.used + block.len() as u64 > self.capacity {
            return Err(Error::Config(format!("peer {} is full", self.id.short())));
        }
        self.store.put(id, block)?;
        self.used += block.len() as u64;
        Ok(())
    }

    fn delete(&mut self, id: &BlockId) -> Result<bool> {
        let len = self.store.get(id).map(|b| b.len() as u64).unwrap_or(0);
        let removed = self.store.delete(id)?;
        if removed {
            self.used = self.used.saturating_sub(len);
        }
        Ok(removed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub holder: PeerId,
    pub expires: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepinReport {
    pub suspect: Option<PeerId>,
    pub initiator: Option<PeerId>,
    pub repinned: Vec<(BlockId, Vec<PeerId>)>,
    pub lost: Vec<BlockId>,
    pub failed: Vec<(BlockId, String)>,
}

#[derive(Debug, Clone, Default)]
pub struct TickReport {
    pub published: Vec<PeerId>,
    pub health_checked: bool,
    pub new_suspects: Vec<PeerId>,
    pub repins: Vec<RepinReport>,
}

/// Mutable state that is not the peers' block stores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterState {
    pub now: u64,
    pub seed: u64,
    pub peers: Vec<PeerState>,
    pub pinset: PinSet,
    pub metrics: MetricBoard,
    pub discovery: DiscoveryRegistry,
    pub metric_ttl: MetricTtls,
    pub lease_ticks: u64,
    pub next_publish: BTreeMap<PeerId, u64>,
    pub pending_bytes: BTreeMap<PeerId, u64>,
    pub leases: BTreeMap<BlockId, Lease>,
    pub suspected: BTreeSet<PeerId>,
    pub schedule: Vec<FailureEvent>,
    pub draws: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeerState {
    pub id: PeerId,
    pub tags: BTreeMap<String, String>,
    pub capacity: u64,
    pub alive: bool,
    pub address: String,
}

pub struct Cluster {
    now: u64,
    seed: u64,
    peers: Vec<Peer>,
    index: HashMap<PeerId, usize>,
    pub pinset: PinSet,
    pub metrics: MetricBoard,
    pub discovery: DiscoveryRegistry,
    pub events: EventLog,
    metric_ttl: MetricTtls,
    lease_ticks: u64,
    next_publish: BTreeMap<PeerId, u64>,
    pending_bytes: BTreeMap<PeerId, u64>,
    leases: BTreeMap<BlockId, Lease>,
    suspected: BTreeSet<PeerId>,
    schedule: Vec<FailureEvent>,
    draws: u64,
}

impl Cluster {
    /// In-memory cluster at tick 0 with every peer alive and published.
    pub fn new(scenario: &Scenario) -> Result<Self> {
        Self::with_stores(scenario, |_| Ok(Arc::new(MemoryStore::new())))
    }

    pub fn with_stores(scenario: &Scenario, mut store: impl FnMut(usize) -> Result<Arc<dyn BlockStore>>) -> Result<Self> {
        scenario.validate()?;
        let mut peers = Vec::with_capacity(scenario.peers);
        for i in 0..scenario.peers {
            let store = store(i)?;
            let used = store.used_bytes();
            peers.push(Peer {
                id: PeerId::derive(scenario.seed, i),
                index: i,
                store,
                tags: scenario.tags.get(i).cloned().unwrap_or_default(),
                capacity: scenario.capacity,
                alive: true,
                address: format!("sim://peer/{i}"),
                used,
            });
        }
        let mut cluster = Self {
            now: 0,
            seed: scenario.seed,
            index: peers.iter().map(|p| (p.id, p.index)).collect(),
            peers,
            pinset: PinSet::default(),
            metrics: MetricBoard::default(),
            discovery: DiscoveryRegistry::new(scenario.health_interval),
            events: EventLog::default(),
            metric_ttl: scenario.metric_ttl.clone(),
            lease_ticks: scenario.lease_ticks,
            next_publish: BTreeMap::new(),
            pending_bytes: BTreeMap::new(),
            leases: BTreeMap::new(),
            suspected: BTreeSet::new(),
            schedule: scenario.failures.clone(),
            draws: 0,
        };
        for p in &cluster.peers {
            cluster.discovery.register(p.id, p.address.clone());
        }
        cluster.apply_schedule();
        cluster.metrics_tick();
        Ok(cluster)
    }

    /// Rebuild from saved state and the peers' existing stores.
    pub fn restore(state: ClusterState, mut store: impl FnMut(usize) -> Result<Arc<dyn BlockStore>>) -> Result<Self> {
        let mut peers = Vec::with_capacity(state.peers.len());
        for (i, p) in state.peers.into_iter().enumerate() {
            let store = store(i)?;
            let used = store.used_bytes();
            peers.push(Peer { id: p.id, index: i, store, tags: p.tags, capacity: p.capacity, alive: p.alive, address: p.address, used });
        }
        Ok(Self {
            now: state.now,
            seed: state.seed,
            index: peers.iter().map(|p| (p.id, p.index)).collect(),
            peers,
            pinset: state.pinset,
            metrics: state.metrics,
            discovery: state.discovery,
            events: EventLog::default(),
            metric_ttl: state.metric_ttl,
            lease_ticks: state.lease_ticks,
            next_publish: state.next_publish,
            pending_bytes: state.pending_bytes,
            leases: state.leases,
            suspected: state.suspected,
            schedule: state.schedule,
            draws: state.draws,
        })
    }

    pub fn state(&self) -> ClusterState {
        ClusterState {
            now: self.now,
            seed: self.seed,
            peers: self
                .peers
                .iter()
                .map(|p| PeerState { id: p.id, tags: p.tags.clone(), capacity: p.capacity, alive: p.alive, address: p.address.clone() })
                .collect(),
            pinset: self.pinset.clone(),
            metrics: self.metrics.clone(),
            discovery: self.discovery.clone(),
            metric_ttl: self.metric_ttl.clone(),
            lease_ticks: self.lease_ticks,
            next_publish: self.next_publish.clone(),
            pending_bytes: self.pending_bytes.clone(),
            leases: self.leases.clone(),
            suspected: self.suspected.clone(),
            schedule: self.schedule.clone(),
            draws: self.draws,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn peers(&self) -> &[Peer] {
        &self.peers
    }

    pub fn peer(&self, id: &PeerId) -> Option<&Peer> {
        self.index.get(id).map(|i| &self.peers[*i])
    }

    pub fn peer_ids(&self) -> Vec<PeerId> {
        self.peers.iter().map(|p| p.id).collect()
    }

    pub fn alive_ids(&self) -> Vec<PeerId> {
        self.peers.iter().filter(|p| p.alive).map(|p| p.id).collect()
    }

    pub fn is_alive(&self, id: &PeerId) -> bool {
        self.peer(id).is_some_and(|p| p.alive)
    }

    fn peer_mut(&mut self, id: &PeerId) -> Result<&mut Peer> {
        let i = *self.index.get(id).ok_or_else(|| Error::InvalidId(id.to_string()))?;
        Ok(&mut self.peers[i])
    }

    // ---- blocks ----

    /// Store `block` on `peer` only (no pin).
    pub fn put_local(&mut self, peer: &PeerId, block: &Block, kind: BlockKind) -> Result<BlockId> {
        let id = cid_of(block, kind);
        let p = self.peer_mut(peer)?;
        if !p.alive {
            return Err(Error::BackendUnavailable(format!("peer {} is down", peer.short())));
        }
        p.put(id, block)?;
        Ok(id)
    }

    /// First verified copy held by an alive peer.
    pub fn get(&self, id: &BlockId) -> Result<Block> {
        let mut corrupt = false;
        for p in self.peers.iter().filter(|p| p.alive) {
            match p.store.get(id) {
                Ok(b) => return Ok(b),
                Err(Error::IntegrityMismatch(_)) => corrupt = true,
                Err(_) => {}
            }
        }
        Err(if corrupt { Error::IntegrityMismatch(*id) } else { Error::NotFound(*id) })
    }

    pub fn has(&self, id: &BlockId) -> bool {
        self.peers.iter().any(|p| p.alive && p.store.has(id))
    }

    /// Alive peers holding `id`.
    pub fn holders(&self, id: &BlockId) -> Vec<PeerId> {
        self.peers.iter().filter(|p| p.alive && p.store.has(id)).map(|p| p.id).collect()
    }

    /// Drop `id` from one peer's store (fault injection).
    pub fn erase_from(&mut self, peer: &PeerId, id: &BlockId) -> Result<bool> {
        self.peer_mut(peer)?.delete(id)
    }

    /// Drop `id` from every store, dead or alive.
    pub fn erase_everywhere(&mut self, id: &BlockId) -> Result<usize> {
        let mut n = 0;
        for p in &mut self.peers {
            n += usize::from(p.delete(id)?);
        }
        Ok(n)
    }

    // ---- pins ----

    pub fn allocate(&self, id: &BlockId, rf_min: usize, rf_max: usize, overrides: Option<&[PeerId]>, need_bytes: u64) -> Result<Vec<PeerId>> {
        if overrides.is_none() && rf_min > rf_max {
            return Err(Error::Config(format!("rf_min {rf_min} exceeds rf_max {rf_max}")));
        }
        let ids = self.peer_ids();
        let pending = |p: &PeerId| self.pending_bytes.get(p).copied().unwrap_or(0);
        let cands = allocator::candidates(&self.metrics, self.now, &ids, &pending, need_bytes);
        let existing = self.pinset.get(id).map(|e| e.allocations.clone()).unwrap_or_default();
        allocator::allocate(&cands, &existing, rf_min, rf_max, overrides)
    }

    pub fn pin(&mut self, id: &BlockId, rf_min: usize, rf_max: usize) -> Result<Vec<PeerId>> {
        self.pin_with(id, rf_min, rf_max, None, None)
    }

    /// Allocate, copy the bytes to every alive allocatee, record the pin.
    pub fn pin_with(
        &mut self,
        id: &BlockId,
        rf_min: usize,
        rf_max: usize,
        overrides: Option<&[PeerId]>,
        bytes: Option<&Block>,
    ) -> Result<Vec<PeerId>> {
        let block = match bytes {
            Some(b) if id.verify(b.as_bytes()) => b.clone(),
            Some(_) => return Err(Error::IntegrityMismatch(*id)),
            None => self.get(id)?,
        };
        let allocations = self.allocate(id, rf_min, rf_max, overrides, block.len() as u64)?;
        self.place(id, &block, &allocations)?;
        self.pinset.set(*id, PinEntry { allocations: allocations.clone(), rf_min, rf_max });
        Ok(allocations)
    }

    fn place(&mut self, id: &BlockId, block: &Block, allocations: &[PeerId]) -> Result<()> {
        let before = self.pinset.get(id).map(|e| e.allocations.clone()).unwrap_or_default();
        for peer in allocations {
            if !before.contains(peer) {
                *self.pending_bytes.entry(*peer).or_default() += block.len() as u64;
            }
            let p = self.peer_mut(peer)?;
            if p.alive {
                p.put(*id, block)?;
            }
        }
        Ok(())
    }

    pub fn unpin(&mut self, id: &BlockId) -> Result<()> {
        self.pinset.remove(id).map(|_| ()).ok_or(Error::NotPinned(*id))
    }

    /// Remove from every alive peer the blocks it holds but is not allocated.
    pub fn gc(&mut self) -> Result<usize> {
        let mut removed = 0;
        for i in 0..self.peers.len() {
            if !self.peers[i].alive {
                continue;
            }
            let pid = self.peers[i].id;
            for id in self.peers[i].store.ids() {
                let keep = self.pinset.get(&id).is_some_and(|e| e.allocations.contains(&pid));
                if !keep {
                    removed += usize::from(self.peers[i].delete(&id)?);
                }
            }
        }
        Ok(removed)
    }

    /// Alive allocatees that actually hold the block.
    pub fn live_replicas(&self, id: &BlockId) -> Vec<PeerId> {
        self.pinset
            .get(id)
            .map(|e| e.allocations.iter().filter(|p| self.peer(p).is_some_and(|x| x.alive && x.store.has(id))).copied().collect())
            .unwrap_or_default()
    }

    // ---- metrics and failures ----

    fn peer_metrics(&self, p: &Peer) -> Vec<PeerMetric> {
        let ttl = |k: &MetricKind| self.now + self.metric_ttl.ttl(k);
        let int =
            |kind: MetricKind, value: u64| PeerMetric { expiry: ttl(&kind), kind, value: MetricValue::Int(value), weight: 0, partitionable: false };
        let pins = self.pinset.allocating(&p.id).len() as u64;
        let mut out = vec![
            int(MetricKind::Freespace, p.capacity.saturating_sub(p.used)),
            int(MetricKind::RepoSize, p.used),
            int(MetricKind::NumPin, pins),
            int(MetricKind::PinQueue, 0),
        ];
        for (name, value) in &p.tags {
            let kind = MetricKind::Tag(name.clone());
            out.push(PeerMetric { expiry: ttl(&kind), kind, value: MetricValue::Text(value.clone()), weight: 0, partitionable: true });
        }
        out
    }

    /// Alive peers whose publish time has come push a full metric set.
    pub fn metrics_tick(&mut self) -> Vec<PeerId> {
        let mut published = Vec::new();
        for i in 0..self.peers.len() {
            let p = &self.peers[i];
            if !p.alive || self.next_publish.get(&p.id).is_some_and(|t| *t > self.now) {
                continue;
            }
            let id = p.id;
            let metrics = self.peer_metrics(p);
            let interval = self.metric_ttl.publish_interval(metrics.iter().map(|m| &m.kind));
            for m in metrics {
                self.metrics.publish(id, m);
            }
            self.pending_bytes.remove(&id);
            self.next_publish.insert(id, self.now + interval);
            published.push(id);
        }
        published
    }

    /// Suspects at the current tick with the pins that allocate them.
    pub fn detect_failures(&self) -> Vec<(PeerId, Vec<BlockId>)> {
        self.peers.iter().filter(|p| self.metrics.all_expired(&p.id, self.now)).map(|p| (p.id, self.pinset.allocating(&p.id))).collect()
    }

    /// The alive, non-suspected peer closest to `suspect` in XOR distance.
    pub fn closest_alive(&self, suspect: &PeerId) -> Option<PeerId> {
        self.peers
            .iter()
            .filter(|p| p.id != *suspect && p.alive && !self.metrics.all_expired(&p.id, self.now))
            .min_by_key(|p| p.id.distance(suspect))
            .map(|p| p.id)
    }

    /// Move every pin off `suspect`, copying from a surviving replica.
    pub fn repin_on_peer_failure(&mut self, suspect: &PeerId) -> RepinReport {
        let mut report = RepinReport { suspect: Some(*suspect), initiator: self.closest_alive(suspect), ..Default::default() };
        if report.initiator.is_none() {
            return report;
        }
        for id in self.pinset.allocating(suspect) {
            let entry = self.pinset.get(&id).cloned().expect("listed");
            let survivors: Vec<PeerId> = entry.allocations.iter().filter(|p| *p != suspect).copied().collect();
            self.pinset.set(id, PinEntry { allocations: survivors.clone(), ..entry.clone() });
            let block = match self.get(&id) {
                Ok(b) => b,
                Err(_) => {
                    self.events.push(self.now, "data_lost", json!({ "block": id.to_string(), "suspect": suspect.to_string() }));
                    report.lost.push(id);
                    continue;
                }
            };
            match self.allocate(&id, entry.rf_min, entry.rf_max, None, block.len() as u64) {
                Ok(allocations) => {
                    if let Err(e) = self.place(&id, &block, &allocations) {
                        report.failed.push((id, e.to_string()));
                        continue;
                    }
                    self.pinset.set(id, PinEntry { allocations: allocations.clone(), ..entry });
                    report.repinned.push((id, allocations));
                }
                Err(e) => report.failed.push((id, e.to_string())),
            }
        }
        self.events.push(
            self.now,
            "repin",
            json!({
                "suspect": suspect.to_string(),
                "initiator": report.initiator.map(|p| p.to_string()),
                "repinned": report.repinned.len(),
                "lost": report.lost.len(),
                "failed": report.failed.len(),
            }),
        );
        report
    }

    /// Kill `round(fraction * peers)` peers chosen with the scenario seed.
    pub fn fail_fraction(&mut self, fraction: f64) -> Vec<PeerId> {
        let k = ((fraction.clamp(0.0, 1.0)) * self.peers.len() as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.draws.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        self.draws += 1;
        let mut ids = self.peer_ids();
        ids.shuffle(&mut rng);
        ids.truncate(k);
        self.fail_peers(&ids);
        ids
    }

    pub fn fail_peers(&mut self, ids: &[PeerId]) {
        for id in ids {
            if let Ok(p) = self.peer_mut(id) {
                if p.alive {
                    p.alive = false;
                    self.events.push(self.now, "peer_down", json!({ "peer": id.to_string() }));
                }
            }
        }
    }

    pub fn heal_peer(&mut self, id: &PeerId) {
        if let Ok(p) = self.peer_mut(id) {
            if !p.alive {
                p.alive = true;
                self.next_publish.insert(*id, self.now);
                self.events.push(self.now, "peer_up", json!({ "peer": id.to_string() }));
            }
        }
    }

    fn apply_schedule(&mut self) {
        let due: Vec<FailureEvent> = self.schedule.iter().filter(|f| f.at == self.now).cloned().collect();
        for f in due {
            if let Some(x) = f.fraction {
                self.fail_fraction(x);
            }
            let kill: Vec<PeerId> = f.kill.iter().filter_map(|i| self.peers.get(*i).map(|p| p.id)).collect();
            self.fail_peers(&kill);
            for i in f.heal {
                if let Some(id) = self.peers.get(i).map(|p| p.id) {
                    self.heal_peer(&id);
                }
            }
        }
    }

    /// Advance the clock one tick and run every periodic duty.
    pub fn step(&mut self) -> TickReport {
        self.now += 1;
        self.apply_schedule();
        let mut report = TickReport { published: self.metrics_tick(), ..Default::default() };
        let peers = &self.peers;
        report.health_checked = self.discovery.health_tick(self.now, |id| peers.iter().any(|p| p.id == *id && p.alive));
        let suspects = self.detect_failures();
        self.suspected.retain(|p| suspects.iter().any(|(s, _)| s == p));
        for (suspect, affected) in suspects {
            if self.suspected.insert(suspect) {
                self.events.push(self.now, "peer_suspected", json!({ "peer": suspect.to_string(), "pins": affected.len() }));
                report.new_suspects.push(suspect);
            }
            if !affected.is_empty() {
                report.repins.push(self.repin_on_peer_failure(&suspect));
            }
        }
        report
    }

    pub fn advance(&mut self, ticks: u64) -> Vec<TickReport> {
        (0..ticks).map(|_| self.step()).collect()
    }

    pub fn advance_to(&mut self, tick: u64) {
        while self.now < tick {
            self.step();
        }
    }

    // ---- leases ----

    /// Take or renew the coordinator lease for `file`.
    pub fn try_acquire_lease(&mut self, file: &BlockId, holder: &PeerId) -> bool {
        match self.leases.get(file) {
            Some(l) if l.expires > self.now && l.holder != *holder => false,
            _ => {
                self.leases.insert(*file, Lease { holder: *holder, expires: self.now + self.lease_ticks.max(1) });
                true
            }
        }
    }

    /// Keep a lease held by `holder` until `until` (exclusive).
    pub fn hold_lease(&mut self, file: &BlockId, holder: &PeerId, until: u64) {
        if let Some(l) = self.leases.get_mut(file).filter(|l| l.holder == *holder) {
            l.expires = until;
        }
    }

    pub fn release_lease(&mut self, file: &BlockId, holder: &PeerId) {
        if self.leases.get(file).is_some_and(|l| l.holder == *holder) {
            self.leases.remove(file);
        }
    }

    pub fn lease(&self, file: &BlockId) -> Option<Lease> {
        self.leases.get(file).filter(|l| l.expires > self.now).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(peers: usize) -> Cluster {
        Cluster::new(&Scenario { peers, seed: 1, ..Default::default() }).unwrap()
    }

    fn stage(c: &mut Cluster, bytes: &[u8]) -> BlockId {
        let first = c.peer_ids()[0];
        c.put_local(&first, &Block::new(bytes.to_vec()), BlockKind::DataLeaf).unwrap()
    }

    #[test]
    fn pin_places_rf_replicas() {
        let mut c = cluster(20);
        let id = stage(&mut c, b"three copies");
        let alloc = c.pin(&id, 3, 3).unwrap();
        assert_eq!(alloc.len(), 3);
        c.gc().unwrap();
        let holders: Vec<PeerId> = c.peers().iter().filter(|p| p.store.has(&id)).map(|p| p.id).collect();
        assert_eq!(holders.len(), 3);
        assert!(alloc.iter().all(|a| holders.contains(a)));
    }

    #[test]
    fn unpin_then_gc_clears_every_peer() {
        let mut c = cluster(5);
        let id = stage(&mut c, b"gone soon");
        c.pin(&id, 2, 2).unwrap();
        c.unpin(&id).unwrap();
        c.gc().unwrap();
        assert!(c.peers().iter().all(|p| !p.store.has(&id)));
        assert!(matches!(c.unpin(&id), Err(Error::NotPinned(_))));
    }

    #[test]
    fn pin_without_bytes_is_not_found() {
        let mut c = cluster(3);
        let id = cid_of(&Block::new(b"nowhere".to_vec()), BlockKind::DataLeaf);
        assert!(matches!(c.pin(&id, 1, 1), Err(Error::NotFound(_))));
    }

    #[test]
    fn pending_bytes_spread_a_burst_of_pins() {
        let mut c = cluster(4);
        let mut seen = BTreeSet::new();
        for i in 0..4u8 {
            let id = stage(&mut c, &[i; 100]);
            seen.extend(c.pin(&id, 1, 1).unwrap());
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn metrics_republish_every_half_ttl() {
        let mut c = cluster(2);
        let mut ticks = Vec::new();
        for _ in 0..45 {
            if !c.step().published.is_empty() {
                ticks.push(c.now());
            }
        }
        assert_eq!(ticks, vec![15, 30, 45]);
    }

    #[test]
    fn dead_peer_is_suspected_once_metrics_expire() {
        let mut c = cluster(3);
        let victim = c.peer_ids()[1];
        c.advance(5);
        c.fail_peers(&[victim]);
        let mut when = None;
        for _ in 0..60 {
            if c.step().new_suspects.contains(&victim) {
                when = Some(c.now());
                break;
            }
        }
        // Last publish at 0, expiry 30.
        assert_eq!(when, Some(30));
        let frozen = c.detect_failures();
        assert_eq!(frozen, c.detect_failures());
        assert!(frozen.iter().all(|(p, _)| *p == victim));
    }

    #[test]
    fn rf2_holder_death_is_repaired() {
        let mut c = cluster(20);
        let id = stage(&mut c, b"keep two");
        let alloc = c.pin(&id, 2, 2).unwrap();
        c.gc().unwrap();
        c.fail_peers(&alloc[..1]);
        c.advance(60);
        assert_eq!(c.live_replicas(&id).len(), 2);
        let repin = c.events.named("repin").next().unwrap();
        let initiator = c.closest_alive(&alloc[0]).unwrap().to_string();
        assert_eq!(repin.payload["initiator"], initiator);
    }

    #[test]
    fn rf1_holder_death_is_data_lost() {
        let mut c = cluster(5);
        let id = stage(&mut c, b"only once");
        let alloc = c.pin(&id, 1, 1).unwrap();
        c.gc().unwrap();
        c.fail_peers(&alloc);
        let mut lost = Vec::new();
        for r in c.advance(40) {
            for rep in r.repins {
                lost.extend(rep.lost);
            }
        }
        assert_eq!(lost, vec![id]);
    }

    #[test]
    fn seeded_failures_are_reproducible() {
        let mut a = cluster(20);
        let mut b = cluster(20);
        assert_eq!(a.fail_fraction(0.3), b.fail_fraction(0.3));
        assert_eq!(a.alive_ids().len(), 14);
        assert!(cluster(5).fail_fraction(0.0).is_empty());
        let mut all = cluster(5);
        all.fail_fraction(1.0);
        assert!(all.alive_ids().is_empty());
    }

    #[test]
    fn discovery_follows_health_checks() {
        let mut c = cluster(5);
        assert_eq!(c.discovery.list_peers().len(), 5);
        let ids = c.peer_ids();
        c.fail_peers(&ids[..2]);
        c.advance(1);
        assert_eq!(c.discovery.list_peers().len(), 3);
        c.heal_peer(&ids[0]);
        assert_eq!(c.discovery.list_peers().len(), 3);
        c.advance(30);
        assert_eq!(c.discovery.list_peers().len(), 4);
    }

    #[test]
    fn leases_exclude_other_holders_until_expiry() {
        let mut c = Cluster::new(&Scenario { peers: 2, lease_ticks: 10, ..Default::default() }).unwrap();
        let [a, b] = [c.peer_ids()[0], c.peer_ids()[1]];
        let file = cid_of(&Block::new(b"f".to_vec()), BlockKind::Metadata);
        assert!(c.try_acquire_lease(&file, &a));
        assert!(!c.try_acquire_lease(&file, &b));
        c.advance(10);
        assert!(c.try_acquire_lease(&file, &b));
        c.release_lease(&file, &b);
        assert!(c.lease(&file).is_none());
    }

    #[test]
    fn state_round_trips_through_json() {
        let mut c = cluster(4);
        let id = stage(&mut c, b"persist");
        c.pin(&id, 2, 2).unwrap();
        c.advance(7);
        let text = serde_json::to_string(&c.state()).unwrap();
        let state: ClusterState = serde_json::from_str(&text).unwrap();
        let stores: Vec<Arc<dyn BlockStore>> = c.peers().iter().map(|p| p.store.clone()).collect();
        let back = Cluster::restore(state, |i| Ok(stores[i].clone())).unwrap();
        assert_eq!(back.now(), 7);
        assert_eq!(back.pinset.get(&id), c.pinset.get(&id));
    }
}
