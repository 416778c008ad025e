//! Entangled Merkle DAGs and the compact file descriptor.
//!
//! Each strand class gets its own Merkle DAG whose leaves are that class's
//! parities, ordered by strand and then by hop along the strand. With the
//! ordering fixed, an edge maps to a leaf ordinal arithmetically and the
//! parity is reached by walking one root-to-leaf path, so uploads need no
//! per-block mapping table.

use crate::block::{cid_of, Block, BlockId, BlockKind};
use crate::connector::Connector;
use crate::dag::{build_dag, chunk, lookup_leaf, BlockSource, BuiltNode, DagConfig, Link};
use crate::error::{Error, Result};
use crate::lattice::{entangle, CodingParams, Lattice, ParitySet, StrandClass, StrandEdge};

#[derive(Debug, Clone)]
pub struct EDag {
    pub class: StrandClass,
    pub root: BlockId,
    pub leaf_order: Vec<StrandEdge>,
    pub leaves: Vec<Link>,
    pub nodes: Vec<BuiltNode>,
    pub replication_internal: usize,
}

/// One eDAG per class, leaves in (strand, hop) order.
pub fn build_edags(parities: &ParitySet, cfg: &DagConfig, replication_internal: usize) -> Result<Vec<EDag>> {
    parities
        .lattice
        .classes()
        .iter()
        .map(|&class| {
            let ordered = parities.class_in_order(class);
            let leaves: Vec<Link> = ordered.iter().map(|(_, b)| Link { id: cid_of(b, BlockKind::ParityLeaf), size: b.len() as u64 }).collect();
            let dag = build_dag(&leaves, cfg)?;
            Ok(EDag {
                class,
                root: dag.root,
                leaf_order: ordered.into_iter().map(|(e, _)| e).collect(),
                leaves,
                nodes: dag.nodes,
                replication_internal,
            })
        })
        .collect()
}

/// Everything needed to locate and repair a file, content-addressed itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileMetadata {
    pub file_root: BlockId,
    pub n: usize,
    pub block_size: usize,
    /// Run-length encoded leaf lengths: `(length, count)`.
    pub true_lengths: Vec<(u64, u64)>,
    pub params: CodingParams,
    pub fanout: usize,
    pub edag_roots: Vec<(StrandClass, BlockId)>,
    pub direct_replication: usize,
    pub internal_replication: usize,
}

const MAGIC: &[u8; 4] = b"EDM\x01";

/// Canonical run-length encoding of leaf lengths.
pub fn rle_lengths(lengths: impl IntoIterator<Item = u64>) -> Vec<(u64, u64)> {
    let mut runs: Vec<(u64, u64)> = Vec::new();
    for len in lengths {
        match runs.last_mut() {
            Some((l, c)) if *l == len => *c += 1,
            _ => runs.push((len, 1)),
        }
    }
    runs
}

impl FileMetadata {
    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.params, self.n)
    }

    /// Unpadded byte length of the leaf at 1-based `pos`.
    pub fn leaf_len(&self, pos: usize) -> Option<usize> {
        let mut idx = pos.checked_sub(1)? as u64;
        for (len, count) in &self.true_lengths {
            if idx < *count {
                return Some(*len as usize);
            }
            idx -= count;
        }
        None
    }

    pub fn file_len(&self) -> u64 {
        self.true_lengths.iter().map(|(l, c)| l * c).sum()
    }

    pub fn edag_root(&self, class: StrandClass) -> Option<BlockId> {
        self.edag_roots.iter().find(|(c, _)| *c == class).map(|(_, id)| *id)
    }

    pub fn encode(&self) -> Block {
        let mut out = Vec::with_capacity(128);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.file_root.to_bytes());
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&(self.block_size as u64).to_le_bytes());
        out.extend_from_slice(&(self.fanout as u32).to_le_bytes());
        out.extend_from_slice(&(self.true_lengths.len() as u32).to_le_bytes());
        for (len, count) in &self.true_lengths {
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(&count.to_le_bytes());
        }
        out.push(self.params.alpha);
        out.extend_from_slice(&(self.params.s as u32).to_le_bytes());
        out.extend_from_slice(&(self.params.p as u32).to_le_bytes());
        out.push(self.edag_roots.len() as u8);
        for (class, id) in &self.edag_roots {
            out.push(class.code());
            out.extend_from_slice(&id.to_bytes());
        }
        out.extend_from_slice(&(self.direct_replication as u32).to_le_bytes());
        out.extend_from_slice(&(self.internal_replication as u32).to_le_bytes());
        Block(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(malformed("bad magic"));
        }
        let file_root = r.id()?;
        let n = r.u64()? as usize;
        let block_size = r.u64()? as usize;
        let fanout = r.u32()? as usize;
        let runs = r.u32()? as usize;
        let mut true_lengths = Vec::with_capacity(runs.min(1024));
        for _ in 0..runs {
            true_lengths.push((r.u64()?, r.u64()?));
        }
        let params = CodingParams { alpha: r.u8()?, s: r.u32()? as usize, p: r.u32()? as usize };
        let roots = r.u8()? as usize;
        let mut edag_roots = Vec::with_capacity(roots);
        for _ in 0..roots {
            let class = StrandClass::from_code(r.u8()?).ok_or_else(|| malformed("unknown strand class"))?;
            edag_roots.push((class, r.id()?));
        }
        let direct_replication = r.u32()? as usize;
        let internal_replication = r.u32()? as usize;
        if r.at != bytes.len() {
            return Err(malformed("trailing bytes"));
        }
        let meta = Self { file_root, n, block_size, true_lengths, params, fanout, edag_roots, direct_replication, internal_replication };
        meta.check()?;
        Ok(meta)
    }

    /// Structural checks that make decoding the exact inverse of encoding.
    fn check(&self) -> Result<()> {
        self.params.validate().map_err(|e| malformed(&e.to_string()))?;
        if self.n == 0 || self.fanout < 2 {
            return Err(malformed("empty file or bad fanout"));
        }
        if self.true_lengths != rle_lengths(self.true_lengths.iter().flat_map(|(l, c)| std::iter::repeat_n(*l, *c as usize))) {
            return Err(malformed("non-canonical length runs"));
        }
        if self.true_lengths.iter().map(|(_, c)| *c).sum::<u64>() != self.n as u64 {
            return Err(malformed("length runs do not cover every leaf"));
        }
        if self.true_lengths.iter().any(|(l, _)| *l as usize > self.block_size) {
            return Err(malformed("leaf longer than block size"));
        }
        let classes: Vec<StrandClass> = self.edag_roots.iter().map(|(c, _)| *c).collect();
        if classes != self.params.classes() {
            return Err(malformed("edag roots do not match alpha"));
        }
        let kinds_ok = self.file_root.kind == BlockKind::DagNode && self.edag_roots.iter().all(|(_, id)| id.kind == BlockKind::DagNode);
        if !kinds_ok {
            return Err(malformed("roots must be dag nodes"));
        }
        Ok(())
    }

    pub fn id(&self) -> BlockId {
        cid_of(&self.encode(), BlockKind::Metadata)
    }
}

fn malformed(m: &str) -> Error {
    Error::MalformedMetadata(m.to_string())
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub at: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(k).filter(|e| *e <= self.bytes.len()).ok_or_else(|| malformed("truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn id(&mut self) -> Result<BlockId> {
        BlockId::from_bytes(self.take(33)?).ok_or_else(|| malformed("bad block id"))
    }

    pub fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}

/// Leaf link of `edge` in its class's eDAG, resolved through the tree.
pub fn parity_link(meta: &FileMetadata, edge: &StrandEdge, source: &dyn BlockSource) -> Result<Link> {
    let lattice = meta.lattice()?;
    let root = meta.edag_root(edge.class).ok_or_else(|| Error::UnsupportedParams(format!("class {:?} not in use", edge.class)))?;
    lookup_leaf(source, &root, meta.n, meta.fanout, lattice.edge_ordinal(edge))
}

/// Parity bytes for `edge`.
pub fn parity_lookup(meta: &FileMetadata, edge: &StrandEdge, source: &dyn BlockSource) -> Result<Block> {
    let link = parity_link(meta, edge, source)?;
    source.fetch(&link.id)
}

/// Inputs of the per-peer index size estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverheadQuery {
    pub files: u64,
    pub peers: u64,
    pub blocks_per_file: u64,
    pub alpha: u64,
    pub entry_bytes: u64,
}

impl OverheadQuery {
    pub const DEFAULT_ENTRY_BYTES: u64 = 40;
}

/// Bytes a per-peer lattice-index to hash map would need cluster-wide.
pub fn estimate_total_storage(q: &OverheadQuery) -> u128 {
    let per_file = (1 + q.alpha as u128) * (q.blocks_per_file as u128 * q.entry_bytes as u128);
    q.files as u128 * q.peers as u128 * per_file
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UploadOptions {
    pub params: CodingParams,
    pub dag: DagConfig,
    /// Pin replication of data and parity leaves.
    pub direct_replication: usize,
    /// Pin replication of interior nodes and the metadata block.
    pub internal_replication: usize,
}

impl UploadOptions {
    pub fn new(params: CodingParams, dag: DagConfig) -> Self {
        Self { params, dag, direct_replication: 1, internal_replication: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct UploadReceipt {
    pub file_root: BlockId,
    pub meta_id: BlockId,
    pub metadata: FileMetadata,
    pub data_leaves: Vec<BlockId>,
    pub parity_leaves: Vec<BlockId>,
    pub interior_nodes: Vec<BlockId>,
}

/// Everything an upload would store, computed without touching a backend.
#[derive(Debug, Clone)]
pub struct EncodedFile {
    pub metadata: FileMetadata,
    pub data: Vec<(BlockId, Block)>,
    pub file_nodes: Vec<BuiltNode>,
    pub parities: ParitySet,
    pub edags: Vec<EDag>,
}

impl EncodedFile {
    pub fn parity_blocks(&self) -> impl Iterator<Item = (BlockId, &Block)> + '_ {
        self.parities.iter().map(|(_, b)| (cid_of(b, BlockKind::ParityLeaf), b))
    }
}

/// Chunk, build the file DAG, entangle and build the eDAGs.
pub fn encode_file(bytes: &[u8], opts: &UploadOptions) -> Result<EncodedFile> {
    opts.params.validate()?;
    opts.dag.validate()?;
    let leaves = chunk(bytes, &opts.dag);
    let data: Vec<(BlockId, Block)> = leaves.iter().map(|b| (cid_of(b, BlockKind::DataLeaf), b.clone())).collect();
    let links: Vec<Link> = data.iter().map(|(id, b)| Link { id: *id, size: b.len() as u64 }).collect();
    let file_dag = build_dag(&links, &opts.dag)?;
    let parities = entangle(&leaves, opts.params)?;
    let edags = build_edags(&parities, &opts.dag, opts.internal_replication)?;
    let metadata = FileMetadata {
        file_root: file_dag.root,
        n: leaves.len(),
        block_size: parities.block_size,
        true_lengths: rle_lengths(leaves.iter().map(|b| b.len() as u64)),
        params: opts.params,
        fanout: opts.dag.fanout,
        edag_roots: edags.iter().map(|e| (e.class, e.root)).collect(),
        direct_replication: opts.direct_replication,
        internal_replication: opts.internal_replication,
    };
    Ok(EncodedFile { metadata, data, file_nodes: file_dag.nodes, parities, edags })
}

/// Store and pin a file with its eDAGs; returns the file and metadata ids.
pub fn upload(conn: &dyn Connector, bytes: &[u8], opts: &UploadOptions) -> Result<UploadReceipt> {
    let enc = encode_file(bytes, opts)?;
    let direct = opts.direct_replication.max(1);
    let internal = opts.internal_replication.max(1);

    let mut data_leaves = Vec::with_capacity(enc.data.len());
    for (id, block) in &enc.data {
        conn.put(block, BlockKind::DataLeaf)?;
        data_leaves.push(*id);
    }
    let mut interior_nodes = Vec::new();
    for node in enc.file_nodes.iter().chain(enc.edags.iter().flat_map(|e| e.nodes.iter())) {
        conn.put(&node.block, BlockKind::DagNode)?;
        interior_nodes.push(node.id);
    }
    let mut parity_leaves = Vec::with_capacity(enc.parities.len());
    for (id, block) in enc.parity_blocks() {
        conn.put(block, BlockKind::ParityLeaf)?;
        parity_leaves.push(id);
    }
    let meta_block = enc.metadata.encode();
    let meta_id = conn.put(&meta_block, BlockKind::Metadata)?;

    for id in data_leaves.iter().chain(&parity_leaves) {
        conn.pin(id, direct, direct)?;
    }
    for id in interior_nodes.iter().chain(std::iter::once(&meta_id)) {
        conn.pin(id, internal, internal)?;
    }
    Ok(UploadReceipt { file_root: enc.metadata.file_root, meta_id, metadata: enc.metadata, data_leaves, parity_leaves, interior_nodes })
}

/// Fetch and decode a metadata block.
pub fn fetch_metadata(source: &dyn BlockSource, meta_id: &BlockId) -> Result<FileMetadata> {
    match source.fetch(meta_id) {
        Ok(b) => FileMetadata::decode(b.as_bytes()),
        Err(Error::NotFound(_)) | Err(Error::IntegrityMismatch(_)) => Err(Error::MetadataMissing(*meta_id)),
        Err(e) => Err(e),
    }
}
