use std::io;

use crate::block::BlockId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure surfaced by the storage layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("block {0} not found")]
    NotFound(BlockId),
    #[error("stored bytes for {0} do not hash to its id")]
    IntegrityMismatch(BlockId),
    #[error("dag root {0} is missing")]
    RootMissing(BlockId),
    #[error("block length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("unsupported coding parameters: {0}")]
    UnsupportedParams(String),
    #[error("malformed metadata: {0}")]
    MalformedMetadata(String),
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("insufficient peers: need {needed}, have {available}")]
    InsufficientPeers { needed: usize, available: usize },
    #[error("no live replica of {0} remains")]
    DataLost(BlockId),
    #[error("repair depth exhausted")]
    DepthExhausted,
    #[error("block is unrecoverable with the available strands")]
    Unrecoverable,
    #[error("repair failed for positions {0:?}")]
    RepairFailed(Vec<usize>),
    #[error("metadata block {0} is missing")]
    MetadataMissing(BlockId),
    #[error("intermediate dag node {0} is missing and could not be restored")]
    AbortedIntermediateNode(BlockId),
    #[error("workers failed to repair positions {0:?}")]
    PartialFailure(Vec<usize>),
    #[error("strand roots of {0} are not pinned")]
    NotPinned(BlockId),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("invalid block id: {0}")]
    InvalidId(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
