//! Collaborative repair: the coordinator finds missing leaves, splits them
//! over peers from discovery, and each worker recovers its share with its
//! own cache.

use std::collections::{BTreeMap, HashMap};
use std::sync::{mpsc, Arc};

use parking_lot::RwLock;

use crate::block::{cid_of, Block, BlockId, BlockKind};
use crate::cluster::{Cluster, PeerId};
use crate::connector::{Connector, ConnectorSource, SimConnector};
use crate::edag::fetch_metadata;
use crate::error::{Error, Result};

use super::download::{assemble, scan_file, scan_parities};
use super::engine::{Repairer, Session};
use super::wire::{RepairRequest, RepairResponse, ResponseEntry, Status};
use super::{Depth, PeerWork, RepairOutcome, Scope, Target};

/// Delivers an encoded `RepairRequest` to a peer and returns its encoded
/// `RepairResponse`.
pub trait WorkerTransport: Sync {
    fn call(&self, peer: &PeerId, request: &[u8]) -> Result<Vec<u8>>;
}

/// Workers are peers of a shared simulated cluster.
pub struct SimTransport {
    pub cluster: Arc<RwLock<Cluster>>,
}

impl WorkerTransport for SimTransport {
    fn call(&self, peer: &PeerId, request: &[u8]) -> Result<Vec<u8>> {
        if !self.cluster.read().is_alive(peer) {
            return Err(Error::BackendUnavailable(format!("worker {} is down", peer.short())));
        }
        let req = RepairRequest::decode(request)?;
        let conn = SimConnector::new(self.cluster.clone(), *peer);
        Ok(worker_repair(&conn, &req).encode())
    }
}

/// Every worker reads through one connector.
pub struct LocalTransport<'a>(pub &'a dyn Connector);

impl WorkerTransport for LocalTransport<'_> {
    fn call(&self, _peer: &PeerId, request: &[u8]) -> Result<Vec<u8>> {
        Ok(worker_repair(self.0, &RepairRequest::decode(request)?).encode())
    }
}

/// Contiguous split into `parts` runs whose sizes differ by at most one,
/// larger runs first.
pub fn partition<T: Clone>(items: &[T], parts: usize) -> Vec<Vec<T>> {
    let parts = parts.clamp(1, items.len().max(1));
    let (base, extra) = (items.len() / parts, items.len() % parts);
    let mut out = Vec::with_capacity(parts);
    let mut at = 0;
    for k in 0..parts {
        let len = base + usize::from(k < extra);
        out.push(items[at..at + len].to_vec());
        at += len;
    }
    out
}

/// Recover the requested targets; failures are reported per target.
pub fn worker_repair(conn: &dyn Connector, req: &RepairRequest) -> RepairResponse {
    let source = ConnectorSource(conn);
    let session = Session::new(&source);
    let failed = |status| RepairResponse {
        entries: req.targets.iter().map(|t| ResponseEntry { target: *t, status, block: None }).collect(),
        counters: session.counters(),
    };
    let Ok(meta) = fetch_metadata(&session, &req.meta_id) else {
        return failed(Status::Failed);
    };
    let Ok(mut repairer) = Repairer::new(&meta, &session, req.depth) else {
        return failed(Status::Failed);
    };
    let results = repairer.run(&req.targets);
    let entries = req
        .targets
        .iter()
        .map(|t| {
            let res = &results[t];
            ResponseEntry { target: *t, status: Status::of(res), block: res.as_ref().ok().cloned() }
        })
        .collect();
    RepairResponse { entries, counters: session.counters() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollabOptions {
    pub peer_budget: usize,
    pub depth: Depth,
    pub scope: Scope,
    /// Put and pin recovered blocks.
    pub reupload: bool,
}

impl Default for CollabOptions {
    fn default() -> Self {
        Self { peer_budget: 3, depth: Depth::Unbounded, scope: Scope::Data, reupload: true }
    }
}

#[derive(Debug, Clone)]
pub struct CollabResult {
    pub outcome: RepairOutcome,
    /// The file, when every data leaf is available afterwards.
    pub bytes: Option<Vec<u8>>,
    pub assignments: Vec<(PeerId, Vec<Target>)>,
    /// No worker was available and the coordinator repaired alone.
    pub fallback: bool,
}

/// Run the coordinator side of a collaborative repair. `peers` is the
/// discovery listing; the coordinator itself is skipped.
pub fn collaborative_repair(
    conn: &dyn Connector,
    coordinator: &PeerId,
    peers: &[PeerId],
    transport: &dyn WorkerTransport,
    meta_id: &BlockId,
    opts: &CollabOptions,
) -> Result<CollabResult> {
    let source = ConnectorSource(conn);
    let session = Session::new(&source);
    let meta = fetch_metadata(&session, meta_id)?;
    let leaves = scan_file(&session, &meta)?;

    let mut blocks: BTreeMap<usize, Block> = BTreeMap::new();
    let mut targets: Vec<Target> = Vec::new();
    let mut expected: HashMap<Target, BlockId> = HashMap::new();
    for (i, (id, block)) in leaves.iter().enumerate() {
        match block {
            Some(b) => {
                blocks.insert(i + 1, b.clone());
            }
            None => {
                targets.push(Target::Data(i + 1));
                expected.insert(Target::Data(i + 1), *id);
            }
        }
    }
    let mut outcome = RepairOutcome { missing: targets.iter().filter_map(data_pos).collect(), ..Default::default() };
    if opts.scope == Scope::Full {
        for (edge, id, present) in scan_parities(&session, &meta)? {
            if !present {
                targets.push(Target::Parity(edge));
                expected.insert(Target::Parity(edge), id);
            }
        }
        outcome.parities_missing = targets.len() - outcome.missing.len();
    }
    outcome.scan = session.counters();
    if targets.is_empty() {
        outcome.coordinator = session.counters();
        return Ok(CollabResult { outcome, bytes: Some(assemble(&meta, &blocks)), assignments: Vec::new(), fallback: false });
    }

    let workers: Vec<PeerId> = peers.iter().filter(|p| *p != coordinator).take(opts.peer_budget).copied().collect();
    let mut results: Vec<(Target, Option<Block>)> = Vec::new();
    let mut assignments = Vec::new();
    let fallback = workers.is_empty();
    if fallback {
        let mut repairer = Repairer::new(&meta, &session, opts.depth)?.with_data_ids(leaves.iter().enumerate().map(|(i, (id, _))| (i + 1, *id)));
        for (pos, b) in &blocks {
            repairer.seed_data(*pos, b);
        }
        for (t, res) in repairer.run(&targets) {
            results.push((t, res.ok()));
        }
    } else {
        assignments = workers.iter().copied().zip(partition(&targets, workers.len())).collect::<Vec<_>>();
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|scope| {
            for (k, (peer, share)) in assignments.iter().enumerate() {
                let tx = tx.clone();
                let req = RepairRequest { meta_id: *meta_id, targets: share.clone(), depth: opts.depth }.encode();
                scope.spawn(move || {
                    let reply = transport.call(peer, &req).and_then(|bytes| RepairResponse::decode(&bytes));
                    let _ = tx.send((k, reply));
                });
            }
        });
        drop(tx);
        let mut replies: Vec<_> = rx.into_iter().collect();
        replies.sort_by_key(|(k, _)| *k);
        for (k, reply) in replies {
            let (peer, share) = &assignments[k];
            match reply {
                Ok(resp) => {
                    outcome.workers.push(PeerWork { peer: peer.to_string(), positions: share.len(), counters: resp.counters });
                    let mut answered: HashMap<Target, Option<Block>> = resp.entries.into_iter().map(|e| (e.target, e.block)).collect();
                    for t in share {
                        results.push((*t, answered.remove(t).flatten()));
                    }
                }
                Err(e) => {
                    log::warn!("worker {} failed: {e}", peer.short());
                    outcome.workers.push(PeerWork { peer: peer.to_string(), positions: share.len(), counters: Default::default() });
                    results.extend(share.iter().map(|t| (*t, None)));
                }
            }
        }
    }

    let rf = meta.direct_replication.max(1);
    for (t, block) in results {
        // Nothing unverified is accepted, whoever produced it.
        let verified = block.filter(|b| match t {
            Target::Data(_) => cid_of(b, BlockKind::DataLeaf) == expected[&t],
            Target::Parity(_) => cid_of(b, BlockKind::ParityLeaf) == expected[&t],
        });
        match (t, verified) {
            (Target::Data(pos), Some(b)) => {
                if opts.reupload {
                    conn.put(&b, BlockKind::DataLeaf)?;
                    conn.pin(&expected[&t], rf, rf)?;
                }
                outcome.recovered.insert(pos, expected[&t]);
                blocks.insert(pos, b);
            }
            (Target::Data(pos), None) => outcome.failed.push(pos),
            (Target::Parity(_), Some(b)) => {
                if opts.reupload {
                    conn.put(&b, BlockKind::ParityLeaf)?;
                    conn.pin(&expected[&t], rf, rf)?;
                }
                outcome.parities_recovered += 1;
            }
            (Target::Parity(_), None) => {}
        }
    }
    outcome.failed.sort_unstable();
    outcome.coordinator = session.counters();
    let bytes = (blocks.len() == meta.n).then(|| assemble(&meta, &blocks));
    Ok(CollabResult { outcome, bytes, assignments, fallback })
}

fn data_pos(t: &Target) -> Option<usize> {
    match t {
        Target::Data(p) => Some(*p),
        Target::Parity(_) => None,
    }
}
