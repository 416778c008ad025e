//! Coordinator/worker messages in the same little-endian style as the
//! metadata block.

use crate::block::{Block, BlockId};
use crate::edag::Reader;
use crate::error::{Error, Result};
use crate::lattice::{StrandClass, StrandEdge};

use super::{Counters, Depth, Target};

const REQUEST_MAGIC: &[u8; 4] = b"ERQ\x01";
const RESPONSE_MAGIC: &[u8; 4] = b"ERS\x01";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairRequest {
    pub meta_id: BlockId,
    pub targets: Vec<Target>,
    pub depth: Depth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Recovered,
    DepthExhausted,
    Unrecoverable,
    Failed,
}

impl Status {
    fn code(self) -> u8 {
        match self {
            Status::Recovered => 0,
            Status::DepthExhausted => 1,
            Status::Unrecoverable => 2,
            Status::Failed => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        [Status::Recovered, Status::DepthExhausted, Status::Unrecoverable, Status::Failed].into_iter().find(|s| s.code() == c)
    }

    pub fn of(res: &Result<Block>) -> Self {
        match res {
            Ok(_) => Status::Recovered,
            Err(Error::DepthExhausted) => Status::DepthExhausted,
            Err(Error::Unrecoverable) => Status::Unrecoverable,
            Err(_) => Status::Failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseEntry {
    pub target: Target,
    pub status: Status,
    pub block: Option<Block>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairResponse {
    pub entries: Vec<ResponseEntry>,
    pub counters: Counters,
}

fn bad(e: Error) -> Error {
    match e {
        Error::MalformedMetadata(m) => Error::MalformedMessage(m),
        other => other,
    }
}

fn put_target(out: &mut Vec<u8>, t: &Target) {
    match t {
        Target::Data(pos) => {
            out.push(0);
            out.extend_from_slice(&(*pos as u64).to_le_bytes());
        }
        Target::Parity(e) => {
            out.push(1);
            out.push(e.class.code());
            out.extend_from_slice(&(e.from as u64).to_le_bytes());
            out.extend_from_slice(&(e.to as u64).to_le_bytes());
        }
    }
}

fn read_target(r: &mut Reader<'_>) -> Result<Target> {
    match r.u8()? {
        0 => Ok(Target::Data(r.u64()? as usize)),
        1 => {
            let class = StrandClass::from_code(r.u8()?).ok_or_else(|| Error::MalformedMessage("unknown class".into()))?;
            Ok(Target::Parity(StrandEdge { class, from: r.u64()? as usize, to: r.u64()? as usize }))
        }
        _ => Err(Error::MalformedMessage("unknown target tag".into())),
    }
}

impl RepairRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(REQUEST_MAGIC);
        out.extend_from_slice(&self.meta_id.to_bytes());
        match self.depth {
            Depth::Limited(k) => {
                out.push(0);
                out.extend_from_slice(&(k as u64).to_le_bytes());
            }
            Depth::Unbounded => out.push(1),
        }
        out.extend_from_slice(&(self.targets.len() as u32).to_le_bytes());
        for t in &self.targets {
            put_target(&mut out, t);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::read(&mut Reader { bytes, at: 0 }).map_err(bad)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        if r.take(4)? != REQUEST_MAGIC {
            return Err(Error::MalformedMessage("bad request magic".into()));
        }
        let meta_id = r.id()?;
        let depth = match r.u8()? {
            0 => Depth::Limited(r.u64()? as usize),
            1 => Depth::Unbounded,
            _ => return Err(Error::MalformedMessage("bad depth tag".into())),
        };
        let count = r.u32()? as usize;
        let targets = (0..count).map(|_| read_target(r)).collect::<Result<Vec<_>>>()?;
        if !r.done() {
            return Err(Error::MalformedMessage("trailing bytes".into()));
        }
        Ok(Self { meta_id, targets, depth })
    }
}

impl RepairResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(RESPONSE_MAGIC);
        for v in [self.counters.fetch_attempts, self.counters.blocks_downloaded, self.counters.xors] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            put_target(&mut out, &e.target);
            out.push(e.status.code());
            match &e.block {
                Some(b) => {
                    out.push(1);
                    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    out.extend_from_slice(b.as_bytes());
                }
                None => out.push(0),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::read(&mut Reader { bytes, at: 0 }).map_err(bad)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        if r.take(4)? != RESPONSE_MAGIC {
            return Err(Error::MalformedMessage("bad response magic".into()));
        }
        let counters = Counters { fetch_attempts: r.u64()?, blocks_downloaded: r.u64()?, xors: r.u64()? };
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let target = read_target(r)?;
            let status = Status::from_code(r.u8()?).ok_or_else(|| Error::MalformedMessage("bad status".into()))?;
            let block = match r.u8()? {
                0 => None,
                1 => {
                    let len = r.u64()? as usize;
                    Some(Block(r.take(len)?.to_vec()))
                }
                _ => return Err(Error::MalformedMessage("bad block flag".into())),
            };
            entries.push(ResponseEntry { target, status, block });
        }
        if !r.done() {
            return Err(Error::MalformedMessage("trailing bytes".into()));
        }
        Ok(Self { entries, counters })
    }
}
