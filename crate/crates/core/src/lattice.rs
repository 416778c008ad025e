//! Alpha-entanglement lattice: strand topology and XOR parity algebra.
//!
//! Data blocks sit on an `s`-row lattice in column-major order (index 1 is
//! row 1 of column 1). Each strand class links every block to one block in
//! the next column:
//!
//! * `H`  stays on its row,
//! * `RH` moves one row down, wrapping from the bottom row to the top,
//! * `LH` moves one row up, wrapping from the top row to the bottom.
//!
//! The parity on the edge leaving block `i` is `d_i ^ (parity entering i)`,
//! and the parity entering a strand head (column 1) is the zero block.
//! Strands stay open at the end of the file: the parity leaving the last
//! block of a strand is stored, nothing wraps back to the head.

use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrandClass {
    H,
    RH,
    LH,
}

impl StrandClass {
    pub const ALL: [StrandClass; 3] = [StrandClass::H, StrandClass::RH, StrandClass::LH];

    /// Classes in use for a given alpha, in repair attempt order.
    pub fn for_alpha(alpha: u8) -> &'static [StrandClass] {
        &Self::ALL[..alpha.clamp(1, 3) as usize]
    }

    pub fn code(self) -> u8 {
        match self {
            StrandClass::H => 0,
            StrandClass::RH => 1,
            StrandClass::LH => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodingParams {
    pub alpha: u8,
    /// Horizontal strands (lattice rows).
    pub s: usize,
    /// Helical strands per helical class.
    pub p: usize,
}

impl CodingParams {
    pub fn new(alpha: u8, s: usize, p: usize) -> Result<Self> {
        let params = Self { alpha, s, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.alpha) {
            return Err(Error::UnsupportedParams(format!("alpha must be 1..=3, got {}", self.alpha)));
        }
        if self.s == 0 || self.p == 0 {
            return Err(Error::UnsupportedParams("s and p must be at least 1".into()));
        }
        if self.p != self.s {
            return Err(Error::UnsupportedParams(format!("only p = s lattices are supported (s={}, p={})", self.s, self.p)));
        }
        Ok(())
    }

    pub fn classes(&self) -> &'static [StrandClass] {
        StrandClass::for_alpha(self.alpha)
    }

    pub fn row(&self, i: usize) -> usize {
        (i - 1) % self.s + 1
    }

    pub fn column(&self, i: usize) -> usize {
        (i - 1) / self.s + 1
    }

    /// Next index along the strand through `i`. May exceed the block count.
    pub fn successor(&self, i: usize, class: StrandClass) -> Result<usize> {
        self.validate()?;
        let s = self.s;
        let row = self.row(i);
        Ok(match class {
            StrandClass::H => i + s,
            StrandClass::RH if row < s => i + s + 1,
            StrandClass::RH => i + 1,
            StrandClass::LH if row > 1 => i + s - 1,
            StrandClass::LH => i + 2 * s - 1,
        })
    }

    /// Previous index along the strand, or 0 when `i` is a strand head.
    pub fn predecessor(&self, i: usize, class: StrandClass) -> Result<usize> {
        self.validate()?;
        let s = self.s;
        if i <= s {
            return Ok(0);
        }
        let row = self.row(i);
        Ok(match class {
            StrandClass::H => i - s,
            StrandClass::RH if row == 1 => i - 1,
            StrandClass::RH => i - s - 1,
            StrandClass::LH if row == s => i + 1 - 2 * s,
            StrandClass::LH => i + 1 - s,
        })
    }

    /// 0-based strand number of `i` within `class`: the row of its head, minus one.
    pub fn strand_of(&self, i: usize, class: StrandClass) -> usize {
        let (r, c) = (self.row(i) - 1, self.column(i) - 1);
        let s = self.s;
        match class {
            StrandClass::H => r,
            StrandClass::RH => (r + s - c % s) % s,
            StrandClass::LH => (r + c) % s,
        }
    }

    /// Lattice index of the block `hop` columns after the head of `strand`.
    pub fn position_on_strand(&self, strand: usize, hop: usize, class: StrandClass) -> usize {
        let s = self.s;
        let row = match class {
            StrandClass::H => strand,
            StrandClass::RH => (strand + hop) % s,
            StrandClass::LH => (strand + s - hop % s) % s,
        };
        hop * s + row + 1
    }
}

/// The parity block leaving data block `from` along `class`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StrandEdge {
    pub class: StrandClass,
    pub from: usize,
    pub to: usize,
}

/// A lattice over a concrete number of data blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    pub params: CodingParams,
    pub n: usize,
}

impl Lattice {
    pub fn new(params: CodingParams, n: usize) -> Result<Self> {
        params.validate()?;
        if n == 0 {
            return Err(Error::Config("a lattice needs at least one block".into()));
        }
        Ok(Self { params, n })
    }

    pub fn classes(&self) -> &'static [StrandClass] {
        self.params.classes()
    }

    pub fn successor(&self, i: usize, class: StrandClass) -> usize {
        self.params.successor(i, class).expect("validated")
    }

    /// 0 for strand heads.
    pub fn predecessor(&self, i: usize, class: StrandClass) -> usize {
        self.params.predecessor(i, class).expect("validated")
    }

    pub fn out_edge(&self, i: usize, class: StrandClass) -> StrandEdge {
        StrandEdge { class, from: i, to: self.successor(i, class) }
    }

    /// `None` for strand heads, whose incoming parity is the zero block.
    pub fn in_edge(&self, i: usize, class: StrandClass) -> Option<StrandEdge> {
        match self.predecessor(i, class) {
            0 => None,
            p => Some(StrandEdge { class, from: p, to: i }),
        }
    }

    pub fn in_range(&self, i: usize) -> bool {
        (1..=self.n).contains(&i)
    }

    /// Number of blocks on 0-based `strand`.
    pub fn strand_len(&self, strand: usize, class: StrandClass) -> usize {
        let s = self.params.s;
        if strand >= s {
            return 0;
        }
        let full = self.n / s;
        let tail = usize::from(self.params.position_on_strand(strand, full, class) <= self.n);
        full + tail
    }

    /// Rank of an edge within its class: strands in ascending order, then
    /// hop count along the strand.
    pub fn edge_ordinal(&self, edge: &StrandEdge) -> usize {
        let strand = self.params.strand_of(edge.from, edge.class);
        let before: usize = (0..strand).map(|k| self.strand_len(k, edge.class)).sum();
        before + self.params.column(edge.from) - 1
    }

    /// Inverse of [`Lattice::edge_ordinal`].
    pub fn edge_at(&self, class: StrandClass, mut ordinal: usize) -> Option<StrandEdge> {
        for strand in 0..self.params.s {
            let len = self.strand_len(strand, class);
            if ordinal < len {
                let from = self.params.position_on_strand(strand, ordinal, class);
                return Some(self.out_edge(from, class));
            }
            ordinal -= len;
        }
        None
    }

    /// All edges of a class, in leaf order.
    pub fn edges(&self, class: StrandClass) -> Vec<StrandEdge> {
        (0..self.n).map(|o| self.edge_at(class, o).expect("ordinal in range")).collect()
    }
}

/// Bytewise XOR of equal-length blocks.
pub fn xor(a: &Block, b: &Block) -> Result<Block> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(Block(a.as_bytes().iter().zip(b.as_bytes()).map(|(x, y)| x ^ y).collect()))
}

/// Parities for every (class, data block) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParitySet {
    pub lattice: Lattice,
    pub block_size: usize,
    /// `parities[class][from - 1]`.
    parities: Vec<Vec<Block>>,
}

impl ParitySet {
    pub fn get(&self, edge: &StrandEdge) -> Option<&Block> {
        let class = self.lattice.classes().iter().position(|c| *c == edge.class)?;
        self.parities.get(class)?.get(edge.from.checked_sub(1)?)
    }

    pub fn len(&self) -> usize {
        self.parities.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parities of one class in leaf order.
    pub fn class_in_order(&self, class: StrandClass) -> Vec<(StrandEdge, &Block)> {
        self.lattice.edges(class).into_iter().map(|e| (e, self.get(&e).expect("complete set"))).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StrandEdge, &Block)> + '_ {
        self.lattice
            .classes()
            .iter()
            .enumerate()
            .flat_map(move |(k, class)| self.parities[k].iter().enumerate().map(move |(i, b)| (self.lattice.out_edge(i + 1, *class), b)))
    }
}

/// Entangle `data` (zero-padded to the longest block) along every class.
pub fn entangle(data: &[Block], params: CodingParams) -> Result<ParitySet> {
    let lattice = Lattice::new(params, data.len())?;
    let block_size = data.iter().map(Block::len).max().unwrap_or(0);
    let padded: Vec<Block> = data.iter().map(|d| d.padded(block_size)).collect();
    let zero = Block::zeroed(block_size);
    let parities = lattice
        .classes()
        .iter()
        .map(|&class| {
            let mut out: Vec<Block> = Vec::with_capacity(lattice.n);
            // Predecessors always have smaller indices, so one forward pass
            // sees every incoming parity before it is needed.
            for i in 1..=lattice.n {
                let incoming = match lattice.predecessor(i, class) {
                    0 => &zero,
                    p => &out[p - 1],
                };
                let parity = xor(&padded[i - 1], incoming)?;
                out.push(parity);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParitySet { lattice, block_size, parities })
}

/// `d_i` from the parities entering and leaving it on one strand.
pub fn recover_data(in_parity: &Block, out_parity: &Block) -> Result<Block> {
    xor(in_parity, out_parity)
}

/// Parity on `from -> to` given `d_from` and the parity entering `from`.
pub fn recover_parity_forward(d_from: &Block, parity_into_from: &Block) -> Result<Block> {
    xor(d_from, parity_into_from)
}

/// Parity on `from -> to` given `d_to` and the parity leaving `to`.
pub fn recover_parity_backward(d_to: &Block, parity_out_of_to: &Block) -> Result<Block> {
    xor(d_to, parity_out_of_to)
}
