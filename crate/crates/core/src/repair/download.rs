use std::collections::BTreeMap;

use crate::block::{Block, BlockId, BlockKind};
use crate::connector::{Connector, ConnectorSource};
use crate::dag::{walk_dag, BlockSource, WalkEntry};
use crate::edag::{fetch_metadata, FileMetadata};
use crate::error::{Error, Result};
use crate::lattice::StrandEdge;

use super::engine::{Repairer, Session};
use super::{Depth, RepairOutcome, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownloadOptions {
    pub depth: Depth,
    /// Put and pin repaired blocks again.
    pub upload_recovery: bool,
}

impl Default for DownloadOptions {
    fn default() -> Self {
        Self { depth: Depth::Unbounded, upload_recovery: false }
    }
}

#[derive(Debug, Clone)]
pub struct Downloaded {
    pub bytes: Vec<u8>,
    pub metadata: FileMetadata,
    pub outcome: RepairOutcome,
}

/// File DAG leaves in order; any unreachable interior node aborts.
pub(crate) fn scan_file(source: &dyn BlockSource, meta: &FileMetadata) -> Result<Vec<(BlockId, Option<Block>)>> {
    let walk = match walk_dag(&meta.file_root, source) {
        Err(Error::RootMissing(id)) => return Err(Error::AbortedIntermediateNode(id)),
        other => other?,
    };
    if let Some(id) = walk.missing_nodes().first() {
        return Err(Error::AbortedIntermediateNode(*id));
    }
    let leaves: Vec<(BlockId, Option<Block>)> = walk
        .entries
        .into_iter()
        .filter_map(|e| match e {
            WalkEntry::Leaf { id, block, .. } => Some((id, block)),
            WalkEntry::MissingNode { .. } => None,
        })
        .collect();
    if leaves.len() != meta.n {
        return Err(Error::MalformedMetadata(format!("file dag has {} leaves, metadata says {}", leaves.len(), meta.n)));
    }
    Ok(leaves)
}

/// Parity leaves reachable through the eDAGs, with presence flags.
pub(crate) fn scan_parities(source: &dyn BlockSource, meta: &FileMetadata) -> Result<Vec<(StrandEdge, BlockId, bool)>> {
    let lattice = meta.lattice()?;
    let mut out = Vec::new();
    for (class, root) in &meta.edag_roots {
        let Ok(walk) = walk_dag(root, source) else { continue };
        let mut ordinal = 0;
        for entry in walk.entries {
            match entry {
                WalkEntry::Leaf { id, block, .. } => {
                    if let Some(edge) = lattice.edge_at(*class, ordinal) {
                        out.push((edge, id, block.is_some()));
                    }
                    ordinal += 1;
                }
                // Subtree size in leaves is unknown without the node; the
                // rest of this class cannot be placed.
                WalkEntry::MissingNode { .. } => break,
            }
        }
    }
    Ok(out)
}

pub(crate) fn assemble(meta: &FileMetadata, blocks: &BTreeMap<usize, Block>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(meta.file_len() as usize);
    for pos in 1..=meta.n {
        bytes.extend_from_slice(blocks[&pos].as_bytes());
    }
    bytes
}

struct Pass {
    meta: FileMetadata,
    blocks: BTreeMap<usize, Block>,
    outcome: RepairOutcome,
}

fn repair_pass(conn: &dyn Connector, meta_id: &BlockId, depth: Depth) -> Result<Pass> {
    let source = ConnectorSource(conn);
    let session = Session::new(&source);
    let meta = fetch_metadata(&session, meta_id)?;
    let leaves = scan_file(&session, &meta)?;
    let mut repairer = Repairer::new(&meta, &session, depth)?.with_data_ids(leaves.iter().enumerate().map(|(i, (id, _))| (i + 1, *id)));
    let mut blocks = BTreeMap::new();
    let mut missing = Vec::new();
    for (i, (_, block)) in leaves.iter().enumerate() {
        match block {
            Some(b) => {
                repairer.seed_data(i + 1, b);
                blocks.insert(i + 1, b.clone());
            }
            None => missing.push(i + 1),
        }
    }
    let targets: Vec<Target> = missing.iter().map(|p| Target::Data(*p)).collect();
    let mut outcome = RepairOutcome { missing: missing.clone(), scan: session.counters(), ..Default::default() };
    for (t, res) in repairer.run(&targets) {
        let Target::Data(pos) = t else { continue };
        match res {
            Ok(b) => {
                outcome.recovered.insert(pos, leaves[pos - 1].0);
                blocks.insert(pos, b);
            }
            Err(_) => outcome.failed.push(pos),
        }
    }
    outcome.coordinator = session.counters();
    Ok(Pass { meta, blocks, outcome })
}

/// Scan a file and repair its missing leaves on this node alone. Failed
/// positions are reported in the outcome rather than as an error.
pub fn single_repair(conn: &dyn Connector, meta_id: &BlockId, depth: Depth) -> Result<RepairOutcome> {
    repair_pass(conn, meta_id, depth).map(|p| p.outcome)
}

/// Fetch a file, repairing missing leaves within `opts.depth`.
pub fn download(conn: &dyn Connector, meta_id: &BlockId, opts: DownloadOptions) -> Result<Downloaded> {
    let Pass { meta, blocks, outcome } = repair_pass(conn, meta_id, opts.depth)?;
    if !outcome.failed.is_empty() {
        return Err(Error::RepairFailed(outcome.failed));
    }
    if opts.upload_recovery {
        let rf = meta.direct_replication.max(1);
        for pos in outcome.recovered.keys() {
            let id = conn.put(&blocks[pos], BlockKind::DataLeaf)?;
            conn.pin(&id, rf, rf)?;
        }
    }
    Ok(Downloaded { bytes: assemble(&meta, &blocks), metadata: meta, outcome })
}

/// Fetch a file by its DAG root with no repair at all.
pub fn fetch_plain(conn: &dyn Connector, file_root: &BlockId) -> Result<Vec<u8>> {
    let source = ConnectorSource(conn);
    let walk = match walk_dag(file_root, &source) {
        Err(Error::RootMissing(id)) => return Err(Error::AbortedIntermediateNode(id)),
        other => other?,
    };
    if let Some(id) = walk.missing_nodes().first() {
        return Err(Error::AbortedIntermediateNode(*id));
    }
    let mut bytes = Vec::new();
    let mut failed = Vec::new();
    for (i, e) in walk.entries.iter().enumerate() {
        match e {
            WalkEntry::Leaf { block: Some(b), .. } => bytes.extend_from_slice(b.as_bytes()),
            _ => failed.push(i + 1),
        }
    }
    if failed.is_empty() {
        Ok(bytes)
    } else {
        Err(Error::RepairFailed(failed))
    }
}
