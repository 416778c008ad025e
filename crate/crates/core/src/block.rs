//! Content identifiers and raw blocks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;

/// What a block holds. Rendered as the first byte of the external id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockKind {
    DataLeaf,
    DagNode,
    ParityLeaf,
    Metadata,
}

impl BlockKind {
    pub const ALL: [BlockKind; 4] = [BlockKind::DataLeaf, BlockKind::DagNode, BlockKind::ParityLeaf, BlockKind::Metadata];

    pub fn code(self) -> u8 {
        match self {
            BlockKind::DataLeaf => 0x00,
            BlockKind::DagNode => 0x01,
            BlockKind::ParityLeaf => 0x02,
            BlockKind::Metadata => 0x03,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

/// SHA-256 digest of a block's exact bytes, tagged with the block kind.
///
/// Stores key on the full id, so a parity that happens to equal a data
/// block byte for byte is still tracked as a separate object.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId {
    pub kind: BlockKind,
    pub digest: [u8; 32],
}

impl BlockId {
    pub fn new(kind: BlockKind, digest: [u8; 32]) -> Self {
        Self { kind, digest }
    }

    /// Hex of the digest alone.
    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    pub fn to_bytes(&self) -> [u8; 33] {
        let mut out = [0u8; 33];
        out[0] = self.kind.code();
        out[1..].copy_from_slice(&self.digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != 33 {
            return None;
        }
        let kind = BlockKind::from_code(bytes[0])?;
        let mut digest = [0u8; 32];
        digest.copy_from_slice(&bytes[1..]);
        Some(Self { kind, digest })
    }

    /// Whether `bytes` hash to this id.
    pub fn verify(&self, bytes: &[u8]) -> bool {
        sha256(bytes) == self.digest
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02x}{}", self.kind.code(), hex::encode(self.digest))
    }
}

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockId({self})")
    }
}

impl FromStr for BlockId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = hex::decode(s.trim()).map_err(|e| Error::InvalidId(format!("{s}: {e}")))?;
        BlockId::from_bytes(&raw).ok_or_else(|| Error::InvalidId(s.to_string()))
    }
}

impl Serialize for BlockId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BlockId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Raw block contents.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Block(pub Vec<u8>);

impl Block {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    pub fn zeroed(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    /// Copy padded with zeros up to `len`.
    pub fn padded(&self, len: usize) -> Block {
        let mut v = self.0.clone();
        if v.len() < len {
            v.resize(len, 0);
        }
        Block(v)
    }

    pub fn truncated(mut self, len: usize) -> Block {
        self.0.truncate(len);
        self
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: String = hex::encode(&self.0[..self.0.len().min(8)]);
        write!(f, "Block({} bytes, {head}..)", self.0.len())
    }
}

impl From<Vec<u8>> for Block {
    fn from(v: Vec<u8>) -> Self {
        Block(v)
    }
}

impl From<&[u8]> for Block {
    fn from(v: &[u8]) -> Self {
        Block(v.to_vec())
    }
}

/// Content identifier of `block` under `kind`.
pub fn cid_of(block: &Block, kind: BlockKind) -> BlockId {
    BlockId::new(kind, sha256(block.as_bytes()))
}
