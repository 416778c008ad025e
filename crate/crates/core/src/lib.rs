//! Alpha-entanglement coded storage over content-addressed Merkle DAGs.

pub mod block;
pub mod cluster;
pub mod connector;
pub mod dag;
pub mod edag;
pub mod error;
pub mod lattice;
pub mod monitor;
pub mod repair;
pub mod store;

pub use block::{cid_of, Block, BlockId, BlockKind};
pub use error::{Error, Result};
