//! File chunking and balanced Merkle DAGs.
//!
//! Trees are built greedily, left to right, one level at a time: level `k`
//! node `j` links level `k-1` nodes `j*fanout .. (j+1)*fanout`. Every tree
//! has at least one node level, so a single-leaf file still gets a root
//! node with one child. Because the shape depends only on the leaf count
//! and fanout, leaf ordinals can be resolved by walking one root-to-leaf
//! path.

use serde::{Deserialize, Serialize};

use crate::block::{cid_of, Block, BlockId, BlockKind};
use crate::error::{Error, Result};
use crate::store::BlockStore;

pub const DEFAULT_CHUNK_SIZE: usize = 256 * 1024;
pub const DEFAULT_FANOUT: usize = 174;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagConfig {
    pub chunk_size: usize,
    pub fanout: usize,
}

impl Default for DagConfig {
    fn default() -> Self {
        Self { chunk_size: DEFAULT_CHUNK_SIZE, fanout: DEFAULT_FANOUT }
    }
}

impl DagConfig {
    pub fn new(chunk_size: usize, fanout: usize) -> Result<Self> {
        let cfg = Self { chunk_size, fanout };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk size must be at least 1".into()));
        }
        if self.fanout < 2 {
            return Err(Error::Config("fanout must be at least 2".into()));
        }
        Ok(())
    }
}

/// Anything blocks can be fetched from.
pub trait BlockSource {
    fn fetch(&self, id: &BlockId) -> Result<Block>;
}

impl<T: BlockStore + ?Sized> BlockSource for T {
    fn fetch(&self, id: &BlockId) -> Result<Block> {
        self.get(id)
    }
}

/// Split `bytes` into `chunk_size` blocks; empty input yields one empty block.
pub fn chunk(bytes: &[u8], cfg: &DagConfig) -> Vec<Block> {
    if bytes.is_empty() {
        return vec![Block::default()];
    }
    bytes.chunks(cfg.chunk_size).map(Block::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub id: BlockId,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleNode {
    /// Kind shared by every child: leaves or further nodes.
    pub child_kind: BlockKind,
    pub children: Vec<Link>,
}

impl MerkleNode {
    pub fn payload_len(&self) -> u64 {
        self.children.iter().map(|c| c.size).sum()
    }

    /// `kind:u8 | count:u32 | (digest:[u8;32] size:u64)*`, little-endian.
    pub fn encode(&self) -> Block {
        let mut out = Vec::with_capacity(5 + self.children.len() * 40);
        out.push(self.child_kind.code());
        out.extend_from_slice(&(self.children.len() as u32).to_le_bytes());
        for c in &self.children {
            out.extend_from_slice(&c.id.digest);
            out.extend_from_slice(&c.size.to_le_bytes());
        }
        Block(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::MalformedMetadata(format!("dag node: {m}"));
        if bytes.len() < 5 {
            return Err(bad("truncated header"));
        }
        let child_kind = BlockKind::from_code(bytes[0]).ok_or_else(|| bad("unknown kind"))?;
        let count = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
        let body = &bytes[5..];
        if body.len() != count * 40 {
            return Err(bad("child table length"));
        }
        let children = body
            .chunks_exact(40)
            .map(|c| Link { id: BlockId::new(child_kind, c[..32].try_into().unwrap()), size: u64::from_le_bytes(c[32..].try_into().unwrap()) })
            .collect();
        Ok(Self { child_kind, children })
    }
}

#[derive(Debug, Clone)]
pub struct BuiltNode {
    pub id: BlockId,
    pub node: MerkleNode,
    pub block: Block,
}

#[derive(Debug, Clone)]
pub struct BuiltDag {
    pub root: BlockId,
    /// Bottom-up, left to right; the root is last.
    pub nodes: Vec<BuiltNode>,
}

/// Number of nodes on each level above the leaves, bottom-up.
pub fn level_widths(leaf_count: usize, fanout: usize) -> Vec<usize> {
    let mut widths = Vec::new();
    let mut w = leaf_count.max(1);
    loop {
        w = w.div_ceil(fanout);
        widths.push(w);
        if w == 1 {
            return widths;
        }
    }
}

/// Build the tree over `leaves` (id and byte length each).
pub fn build_dag(leaves: &[Link], cfg: &DagConfig) -> Result<BuiltDag> {
    cfg.validate()?;
    if leaves.is_empty() {
        return Err(Error::Config("a dag needs at least one leaf".into()));
    }
    let mut nodes = Vec::new();
    let mut level: Vec<Link> = leaves.to_vec();
    let mut child_kind = leaves[0].id.kind;
    loop {
        let mut next = Vec::with_capacity(level.len().div_ceil(cfg.fanout));
        for group in level.chunks(cfg.fanout) {
            let node = MerkleNode { child_kind, children: group.to_vec() };
            let block = node.encode();
            let id = cid_of(&block, BlockKind::DagNode);
            next.push(Link { id, size: node.payload_len() });
            nodes.push(BuiltNode { id, node, block });
        }
        child_kind = BlockKind::DagNode;
        if next.len() == 1 {
            return Ok(BuiltDag { root: next[0].id, nodes });
        }
        level = next;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WalkEntry {
    Leaf {
        id: BlockId,
        size: u64,
        block: Option<Block>,
    },
    /// An interior node that could not be fetched; its subtree is skipped.
    MissingNode {
        id: BlockId,
        size: u64,
        depth: usize,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Walk {
    pub entries: Vec<WalkEntry>,
}

impl Walk {
    pub fn leaf_ids(&self) -> Vec<BlockId> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                WalkEntry::Leaf { id, .. } => Some(*id),
                WalkEntry::MissingNode { .. } => None,
            })
            .collect()
    }

    pub fn missing_nodes(&self) -> Vec<BlockId> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                WalkEntry::MissingNode { id, .. } => Some(*id),
                WalkEntry::Leaf { .. } => None,
            })
            .collect()
    }

    pub fn all_available(&self) -> bool {
        self.entries.iter().all(|e| matches!(e, WalkEntry::Leaf { block: Some(_), .. }))
    }
}

fn is_absent(e: &Error) -> bool {
    matches!(e, Error::NotFound(_) | Error::IntegrityMismatch(_))
}

/// Depth-first, child-order traversal fetching every reachable block.
pub fn walk_dag(root: &BlockId, source: &dyn BlockSource) -> Result<Walk> {
    let root_block = match source.fetch(root) {
        Ok(b) => b,
        Err(e) if is_absent(&e) => return Err(Error::RootMissing(*root)),
        Err(e) => return Err(e),
    };
    let mut walk = Walk::default();
    visit(MerkleNode::decode(root_block.as_bytes())?, 1, source, &mut walk)?;
    Ok(walk)
}

fn visit(node: MerkleNode, depth: usize, source: &dyn BlockSource, walk: &mut Walk) -> Result<()> {
    for child in node.children {
        let fetched = match source.fetch(&child.id) {
            Ok(b) => Some(b),
            Err(e) if is_absent(&e) => None,
            Err(e) => return Err(e),
        };
        if node.child_kind == BlockKind::DagNode {
            match fetched {
                Some(b) => visit(MerkleNode::decode(b.as_bytes())?, depth + 1, source, walk)?,
                None => walk.entries.push(WalkEntry::MissingNode { id: child.id, size: child.size, depth }),
            }
        } else {
            walk.entries.push(WalkEntry::Leaf { id: child.id, size: child.size, block: fetched });
        }
    }
    Ok(())
}

/// Resolve leaf `ordinal` of a tree with `leaf_count` leaves by fetching the
/// nodes on its root-to-leaf path only.
pub fn lookup_leaf(source: &dyn BlockSource, root: &BlockId, leaf_count: usize, fanout: usize, ordinal: usize) -> Result<Link> {
    if ordinal >= leaf_count {
        return Err(Error::Config(format!("leaf ordinal {ordinal} out of range {leaf_count}")));
    }
    let height = level_widths(leaf_count, fanout).len();
    let mut current = *root;
    for level in (1..=height).rev() {
        let node = MerkleNode::decode(source.fetch(&current)?.as_bytes())?;
        let here = ordinal / span(fanout, level);
        let below = ordinal / span(fanout, level - 1);
        let link =
            node.children.get(below - here * fanout).copied().ok_or_else(|| Error::MalformedMetadata(format!("node {current} is too short")))?;
        if level == 1 {
            return Ok(link);
        }
        current = link.id;
    }
    unreachable!("height is at least one")
}

fn span(fanout: usize, level: usize) -> usize {
    fanout.saturating_pow(level as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::MemoryStore;

    fn leaves(n: usize) -> (MemoryStore, Vec<Link>, Vec<Block>) {
        let store = MemoryStore::new();
        let mut links = Vec::new();
        let mut blocks = Vec::new();
        for i in 0..n {
            let b = Block::new(format!("leaf-{i}").into_bytes());
            let id = cid_of(&b, BlockKind::DataLeaf);
            store.put(id, &b).unwrap();
            links.push(Link { id, size: b.len() as u64 });
            blocks.push(b);
        }
        (store, links, blocks)
    }

    fn store_dag(store: &MemoryStore, dag: &BuiltDag) {
        for n in &dag.nodes {
            store.put(n.id, &n.block).unwrap();
        }
    }

    #[test]
    fn chunk_sizes() {
        let cfg = DagConfig::default();
        assert_eq!(chunk(&vec![0u8; 26_214_400], &cfg).len(), 100);
        let empty = chunk(&[], &cfg);
        assert_eq!(empty.len(), 1);
        assert!(empty[0].is_empty());
        let odd: Vec<usize> = chunk(&vec![1u8; 262_145], &cfg).iter().map(Block::len).collect();
        assert_eq!(odd, vec![262_144, 1]);
    }

    #[test]
    fn tree_shapes() {
        let cfg = DagConfig::new(1024, 2).unwrap();
        let (_, links, _) = leaves(4);
        assert_eq!(build_dag(&links, &cfg).unwrap().nodes.len(), 3);

        let (_, one, _) = leaves(1);
        let dag = build_dag(&one, &DagConfig::default()).unwrap();
        assert_eq!(dag.nodes.len(), 1);
        assert_eq!(dag.nodes[0].node.children.len(), 1);

        let (_, hundred, _) = leaves(100);
        let dag = build_dag(&hundred, &DagConfig::default()).unwrap();
        assert_eq!(dag.nodes.len(), 1);
        assert_eq!(dag.nodes[0].node.children.len(), 100);
    }

    #[test]
    fn node_encoding_round_trip_and_payload() {
        let (_, links, _) = leaves(3);
        let dag = build_dag(&links, &DagConfig::new(8, 4).unwrap()).unwrap();
        let node = &dag.nodes[0].node;
        assert_eq!(node.payload_len(), links.iter().map(|l| l.size).sum::<u64>());
        assert_eq!(MerkleNode::decode(node.encode().as_bytes()).unwrap(), *node);
        assert_eq!(node.encode().len(), 5 + 3 * 40);
        assert!(MerkleNode::decode(&node.encode().as_bytes()[..20]).is_err());
    }

    #[test]
    fn walk_returns_leaves_in_order() {
        let (store, links, _) = leaves(23);
        let dag = build_dag(&links, &DagConfig::new(16, 4).unwrap()).unwrap();
        store_dag(&store, &dag);
        let walk = walk_dag(&dag.root, &store).unwrap();
        assert!(walk.all_available());
        assert_eq!(walk.leaf_ids(), links.iter().map(|l| l.id).collect::<Vec<_>>());
    }

    #[test]
    fn walk_flags_missing_leaf_and_continues() {
        let (store, links, _) = leaves(10);
        let dag = build_dag(&links, &DagConfig::new(16, 4).unwrap()).unwrap();
        store_dag(&store, &dag);
        store.delete(&links[6].id).unwrap();
        let walk = walk_dag(&dag.root, &store).unwrap();
        let flags: Vec<bool> = walk.entries.iter().map(|e| matches!(e, WalkEntry::Leaf { block: Some(_), .. })).collect();
        assert_eq!(flags.len(), 10);
        assert_eq!(flags.iter().filter(|f| !**f).count(), 1);
        assert!(!flags[6]);
    }

    #[test]
    fn walk_reports_missing_interior_node() {
        let (store, links, _) = leaves(10);
        let dag = build_dag(&links, &DagConfig::new(16, 4).unwrap()).unwrap();
        store_dag(&store, &dag);
        let middle = dag.nodes[1].id;
        store.delete(&middle).unwrap();
        let walk = walk_dag(&dag.root, &store).unwrap();
        assert_eq!(walk.missing_nodes(), vec![middle]);
        assert_eq!(walk.leaf_ids().len(), 6);
    }

    #[test]
    fn walk_without_root_fails() {
        let (store, links, _) = leaves(4);
        let dag = build_dag(&links, &DagConfig::new(16, 2).unwrap()).unwrap();
        assert!(matches!(walk_dag(&dag.root, &store), Err(Error::RootMissing(_))));
    }

    #[test]
    fn lookup_matches_walk_order() {
        for (n, fanout) in [(1, 2), (2, 2), (5, 2), (17, 3), (64, 4), (65, 4), (200, 7)] {
            let (store, links, _) = leaves(n);
            let dag = build_dag(&links, &DagConfig::new(16, fanout).unwrap()).unwrap();
            store_dag(&store, &dag);
            for (o, link) in links.iter().enumerate() {
                assert_eq!(lookup_leaf(&store, &dag.root, n, fanout, o).unwrap(), *link);
            }
        }
    }

    #[test]
    fn level_widths_match_built_tree() {
        for (n, f) in [(1, 2), (4, 2), (100, 174), (1000, 10), (2560, 174)] {
            let (_, links, _) = leaves(n);
            let dag = build_dag(&links, &DagConfig::new(16, f).unwrap()).unwrap();
            assert_eq!(level_widths(n, f).iter().sum::<usize>(), dag.nodes.len());
        }
    }
}
