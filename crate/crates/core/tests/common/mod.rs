#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use entangled_core::dag::{BlockSource, DagConfig};
use entangled_core::edag::{encode_file, EncodedFile, UploadOptions};
use entangled_core::lattice::{CodingParams, StrandClass, StrandEdge};
use entangled_core::{Block, BlockId, Error, Result};
use entangled_oracle::Var;
use parking_lot::RwLock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every block of one encoded file, with a switchable erasure set.
pub struct Fixture {
    pub enc: EncodedFile,
    pub meta_id: BlockId,
    pub blocks: HashMap<BlockId, Block>,
    pub erased: RwLock<HashSet<BlockId>>,
}

impl BlockSource for Fixture {
    fn fetch(&self, id: &BlockId) -> Result<Block> {
        if self.erased.read().contains(id) {
            return Err(Error::NotFound(*id));
        }
        self.blocks.get(id).cloned().ok_or(Error::NotFound(*id))
    }
}

pub fn class_index(c: StrandClass) -> usize {
    match c {
        StrandClass::H => 0,
        StrandClass::RH => 1,
        StrandClass::LH => 2,
    }
}

pub fn class_of(k: usize) -> StrandClass {
    StrandClass::ALL[k]
}

impl Fixture {
    pub fn new(data: &[u8], params: CodingParams, dag: DagConfig) -> Self {
        let enc = encode_file(data, &UploadOptions::new(params, dag)).unwrap();
        let mut blocks = HashMap::new();
        for (id, b) in &enc.data {
            blocks.insert(*id, b.clone());
        }
        for n in enc.file_nodes.iter().chain(enc.edags.iter().flat_map(|e| e.nodes.iter())) {
            blocks.insert(n.id, n.block.clone());
        }
        for (id, b) in enc.parity_blocks() {
            blocks.insert(id, b.clone());
        }
        let meta_block = enc.metadata.encode();
        let meta_id = enc.metadata.id();
        blocks.insert(meta_id, meta_block);
        Self { enc, meta_id, blocks, erased: RwLock::new(HashSet::new()) }
    }

    pub fn random(n: usize, block: usize, params: CodingParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bytes: Vec<u8> = (0..n * block).map(|_| rng.gen()).collect();
        Self::new(&bytes, params, DagConfig::new(block, 4).unwrap())
    }

    pub fn id_of(&self, v: Var) -> BlockId {
        match v {
            Var::Data(i) => self.enc.data[i - 1].0,
            Var::Parity { class, from } => {
                let l = self.enc.metadata.lattice().unwrap();
                let edge = l.out_edge(from, class_of(class));
                entangled_core::cid_of(self.enc.parities.get(&edge).unwrap(), entangled_core::BlockKind::ParityLeaf)
            }
        }
    }

    pub fn edge_of(&self, class: usize, from: usize) -> StrandEdge {
        self.enc.metadata.lattice().unwrap().out_edge(from, class_of(class))
    }

    /// All lattice variables sharing an id with one of `vars`.
    pub fn expand(&self, vars: &[Var], all: &[Var]) -> Vec<Var> {
        let ids: HashSet<BlockId> = vars.iter().map(|v| self.id_of(*v)).collect();
        all.iter().copied().filter(|v| ids.contains(&self.id_of(*v))).collect()
    }

    pub fn erase(&self, vars: &[Var]) {
        let mut e = self.erased.write();
        e.clear();
        e.extend(vars.iter().map(|v| self.id_of(*v)));
    }
}

impl entangled_core::connector::Connector for Fixture {
    fn put(&self, block: &Block, kind: entangled_core::BlockKind) -> Result<BlockId> {
        Ok(entangled_core::cid_of(block, kind))
    }

    fn get(&self, id: &BlockId) -> Result<Block> {
        self.fetch(id)
    }

    fn has(&self, id: &BlockId) -> Result<bool> {
        Ok(self.fetch(id).is_ok())
    }

    fn pin(&self, _: &BlockId, _: usize, _: usize) -> Result<()> {
        Ok(())
    }

    fn unpin(&self, _: &BlockId) -> Result<()> {
        Ok(())
    }
}
