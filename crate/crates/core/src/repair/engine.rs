//! Strand-chain decoder.
//!
//! A missing data block `d_i` is `in ⊕ out` for the two parities of one
//! strand through `i`. A missing parity is rebuilt from a neighbour:
//! walking backward, `P(p→i) = d_p ⊕ P(in of p)`; walking forward,
//! `P(i→q) = d_q ⊕ P(q→next)`. The depth budget caps how many parities a
//! chain may consume in each direction. Data blocks met along a chain must
//! already be known; instead of nesting, the decoder sweeps all targets
//! repeatedly and every recovered block feeds the next sweep.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashMap};

use crate::block::{cid_of, Block, BlockId, BlockKind};
use crate::dag::{lookup_leaf, BlockSource};
use crate::edag::{parity_link, FileMetadata};
use crate::error::{Error, Result};
use crate::lattice::{xor, Lattice, StrandClass, StrandEdge};

use super::{Counters, Depth, Target};

/// Network view of one peer: every fetch is counted and cached, so no
/// block is downloaded twice and no miss is probed twice.
pub struct Session<'a> {
    source: &'a dyn BlockSource,
    fetched: RefCell<HashMap<BlockId, Option<Block>>>,
    counters: Cell<Counters>,
}

impl<'a> Session<'a> {
    pub fn new(source: &'a dyn BlockSource) -> Self {
        Self { source, fetched: RefCell::new(HashMap::new()), counters: Cell::new(Counters::default()) }
    }

    pub fn counters(&self) -> Counters {
        self.counters.get()
    }

    fn bump(&self, f: impl FnOnce(&mut Counters)) {
        let mut c = self.counters.get();
        f(&mut c);
        self.counters.set(c);
    }

    pub fn add_xors(&self, n: u64) {
        self.bump(|c| c.xors += n);
    }
}

impl BlockSource for Session<'_> {
    fn fetch(&self, id: &BlockId) -> Result<Block> {
        if let Some(hit) = self.fetched.borrow().get(id) {
            return hit.clone().ok_or(Error::NotFound(*id));
        }
        self.bump(|c| c.fetch_attempts += 1);
        match self.source.fetch(id) {
            Ok(b) => {
                self.bump(|c| c.blocks_downloaded += 1);
                self.fetched.borrow_mut().insert(*id, Some(b.clone()));
                Ok(b)
            }
            Err(e @ (Error::NotFound(_) | Error::IntegrityMismatch(_))) => {
                self.fetched.borrow_mut().insert(*id, None);
                Err(e)
            }
            Err(e) => Err(e),
        }
    }
}

pub struct Repairer<'a> {
    meta: &'a FileMetadata,
    lattice: Lattice,
    session: &'a Session<'a>,
    budget: usize,
    data_ids: HashMap<usize, Option<BlockId>>,
    parity_ids: HashMap<StrandEdge, Option<BlockId>>,
    data: HashMap<usize, Block>,
    parity: HashMap<StrandEdge, Block>,
    zero: Block,
    hit_limit: bool,
}

impl<'a> Repairer<'a> {
    pub fn new(meta: &'a FileMetadata, session: &'a Session<'a>, depth: Depth) -> Result<Self> {
        Ok(Self {
            meta,
            lattice: meta.lattice()?,
            session,
            budget: depth.budget(),
            data_ids: HashMap::new(),
            parity_ids: HashMap::new(),
            data: HashMap::new(),
            parity: HashMap::new(),
            zero: Block::zeroed(meta.block_size),
            hit_limit: false,
        })
    }

    /// Leaf ids already known from a file DAG walk.
    pub fn with_data_ids(mut self, ids: impl IntoIterator<Item = (usize, BlockId)>) -> Self {
        self.data_ids.extend(ids.into_iter().map(|(pos, id)| (pos, Some(id))));
        self
    }

    pub fn with_parity_ids(mut self, ids: impl IntoIterator<Item = (StrandEdge, BlockId)>) -> Self {
        self.parity_ids.extend(ids.into_iter().map(|(e, id)| (e, Some(id))));
        self
    }

    /// A data block the caller already holds.
    pub fn seed_data(&mut self, pos: usize, block: &Block) {
        self.data.insert(pos, block.padded(self.meta.block_size));
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn xor(&self, a: &Block, b: &Block) -> Option<Block> {
        self.session.add_xors(1);
        xor(a, b).ok()
    }

    pub fn data_id(&mut self, pos: usize) -> Option<BlockId> {
        if let Some(id) = self.data_ids.get(&pos) {
            return *id;
        }
        let m = self.meta;
        let id = lookup_leaf(self.session, &m.file_root, m.n, m.fanout, pos - 1).ok().map(|l| l.id);
        self.data_ids.insert(pos, id);
        id
    }

    pub fn parity_id(&mut self, edge: &StrandEdge) -> Option<BlockId> {
        if let Some(id) = self.parity_ids.get(edge) {
            return *id;
        }
        let id = parity_link(self.meta, edge, self.session).ok().map(|l| l.id);
        self.parity_ids.insert(*edge, id);
        id
    }

    /// Data held or downloadable, never reconstructed.
    fn known_data(&mut self, pos: usize) -> Option<Block> {
        if let Some(b) = self.data.get(&pos) {
            return Some(b.clone());
        }
        let id = self.data_id(pos)?;
        let b = self.session.fetch(&id).ok()?.padded(self.meta.block_size);
        self.data.insert(pos, b.clone());
        Some(b)
    }

    fn known_parity(&mut self, edge: &StrandEdge) -> Option<Block> {
        if let Some(b) = self.parity.get(edge) {
            return Some(b.clone());
        }
        let id = self.parity_id(edge)?;
        let b = self.session.fetch(&id).ok()?;
        if b.len() != self.meta.block_size {
            return None;
        }
        self.parity.insert(*edge, b.clone());
        Some(b)
    }

    /// Keep a chain-rebuilt parity when it matches its leaf id, or when the
    /// id is unreachable and nothing contradicts it.
    fn accept_parity(&mut self, edge: StrandEdge, value: Block) -> Option<Block> {
        if let Some(id) = self.parity_ids.get(&edge).copied().flatten() {
            if cid_of(&value, BlockKind::ParityLeaf) != id {
                return None;
            }
        }
        self.parity.insert(edge, value.clone());
        Some(value)
    }

    /// Parity entering `i` on `class`, consuming at most `k` parities.
    fn parity_in(&mut self, i: usize, class: StrandClass, k: usize) -> Option<Block> {
        let mut chain: Vec<(StrandEdge, Block)> = Vec::new();
        let mut cur = i;
        let mut hops = 0;
        let mut value = loop {
            if hops == k {
                self.hit_limit = true;
                return None;
            }
            hops += 1;
            let Some(edge) = self.lattice.in_edge(cur, class) else {
                break self.zero.clone();
            };
            if let Some(p) = self.known_parity(&edge) {
                break p;
            }
            let d = self.known_data(edge.from)?;
            chain.push((edge, d));
            cur = edge.from;
        };
        while let Some((edge, d)) = chain.pop() {
            value = self.xor(&d, &value)?;
            value = self.accept_parity(edge, value)?;
        }
        Some(value)
    }

    /// Parity leaving `i` on `class`, consuming at most `k` parities.
    fn parity_out(&mut self, i: usize, class: StrandClass, k: usize) -> Option<Block> {
        let mut chain: Vec<(StrandEdge, Block)> = Vec::new();
        let mut cur = i;
        let mut hops = 0;
        let mut value = loop {
            if hops == k {
                self.hit_limit = true;
                return None;
            }
            hops += 1;
            let edge = self.lattice.out_edge(cur, class);
            if let Some(p) = self.known_parity(&edge) {
                break p;
            }
            if !self.lattice.in_range(edge.to) {
                return None;
            }
            let d = self.known_data(edge.to)?;
            chain.push((edge, d));
            cur = edge.to;
        };
        while let Some((edge, d)) = chain.pop() {
            value = self.xor(&d, &value)?;
            value = self.accept_parity(edge, value)?;
        }
        Some(value)
    }

    fn try_data(&mut self, pos: usize) -> Option<Block> {
        let expected = self.data_id(pos)?;
        let len = self.meta.leaf_len(pos)?;
        for &class in self.lattice.classes() {
            let Some(inp) = self.parity_in(pos, class, self.budget) else { continue };
            let Some(out) = self.parity_out(pos, class, self.budget) else { continue };
            let Some(padded) = self.xor(&inp, &out) else { continue };
            let block = padded.clone().truncated(len);
            if cid_of(&block, BlockKind::DataLeaf) == expected {
                self.data.insert(pos, padded);
                return Some(block);
            }
        }
        None
    }

    fn try_parity(&mut self, edge: StrandEdge) -> Option<Block> {
        let expected = self.parity_id(&edge)?;
        let k = self.budget;
        let mut candidates = Vec::new();
        if let (Some(d), Some(inp)) = (self.known_data(edge.from), self.parity_in(edge.from, edge.class, k)) {
            candidates.extend(self.xor(&d, &inp));
        }
        if self.lattice.in_range(edge.to) {
            if let Some(d) = self.known_data(edge.to) {
                if let Some(out) = self.parity_out(edge.to, edge.class, k) {
                    candidates.extend(self.xor(&d, &out));
                }
            }
        }
        let hit = candidates.into_iter().find(|c| cid_of(c, BlockKind::ParityLeaf) == expected)?;
        self.parity.insert(edge, hit.clone());
        Some(hit)
    }

    /// Present already, or recovered in this call.
    fn try_target(&mut self, t: &Target) -> Option<Block> {
        match *t {
            Target::Data(pos) => {
                if !self.lattice.in_range(pos) {
                    return None;
                }
                self.try_data(pos)
            }
            Target::Parity(edge) => {
                if !self.lattice.in_range(edge.from) || !self.lattice.classes().contains(&edge.class) {
                    return None;
                }
                self.try_parity(edge)
            }
        }
    }

    /// Sweep the targets until a full pass makes no progress. Data results
    /// are unpadded; parities keep the block size.
    pub fn run(&mut self, targets: &[Target]) -> BTreeMap<Target, Result<Block>> {
        let mut out = BTreeMap::new();
        let mut pending: Vec<Target> = targets.to_vec();
        pending.sort();
        pending.dedup();
        let mut limited: HashMap<Target, bool> = HashMap::new();
        loop {
            let before = pending.len();
            let mut still = Vec::with_capacity(pending.len());
            for t in pending {
                self.hit_limit = false;
                match self.try_target(&t) {
                    Some(b) => {
                        out.insert(t, Ok(b));
                    }
                    None => {
                        limited.insert(t, self.hit_limit);
                        still.push(t);
                    }
                }
            }
            pending = still;
            if pending.is_empty() || pending.len() == before {
                break;
            }
        }
        for t in pending {
            let e = if limited.get(&t).copied().unwrap_or(false) { Error::DepthExhausted } else { Error::Unrecoverable };
            out.insert(t, Err(e));
        }
        out
    }
}

/// Recover one block through `session` at the given depth.
pub fn repair_block(meta: &FileMetadata, session: &Session<'_>, target: Target, depth: Depth) -> Result<Block> {
    let mut r = Repairer::new(meta, session, depth)?;
    r.run(&[target]).remove(&target).expect("every target gets a result")
}
