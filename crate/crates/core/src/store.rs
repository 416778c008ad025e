//! Block stores. Both implementations verify hashes on write and on read.

use std::collections::HashMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;

use crate::block::{Block, BlockId};
use crate::error::{Error, Result};

pub trait BlockStore: Send + Sync {
    /// Store `block` under `id`; the bytes must hash to `id`.
    fn put(&self, id: BlockId, block: &Block) -> Result<()>;
    fn get(&self, id: &BlockId) -> Result<Block>;
    fn has(&self, id: &BlockId) -> bool;
    /// Returns whether the block was present.
    fn delete(&self, id: &BlockId) -> Result<bool>;
    fn ids(&self) -> Vec<BlockId>;
    fn used_bytes(&self) -> u64;
}

fn check(id: &BlockId, block: &Block) -> Result<()> {
    if id.verify(block.as_bytes()) {
        Ok(())
    } else {
        Err(Error::IntegrityMismatch(*id))
    }
}

#[derive(Default)]
pub struct MemoryStore {
    blocks: RwLock<HashMap<BlockId, Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overwrite stored bytes without verification (fault injection).
    pub fn tamper(&self, id: &BlockId, f: impl FnOnce(&mut Vec<u8>)) -> bool {
        match self.blocks.write().get_mut(id) {
            Some(bytes) => {
                f(bytes);
                true
            }
            None => false,
        }
    }
}

impl BlockStore for MemoryStore {
    fn put(&self, id: BlockId, block: &Block) -> Result<()> {
        check(&id, block)?;
        self.blocks.write().insert(id, block.0.clone());
        Ok(())
    }

    fn get(&self, id: &BlockId) -> Result<Block> {
        let guard = self.blocks.read();
        let bytes = guard.get(id).ok_or(Error::NotFound(*id))?;
        let block = Block(bytes.clone());
        check(id, &block)?;
        Ok(block)
    }

    fn has(&self, id: &BlockId) -> bool {
        self.blocks.read().contains_key(id)
    }

    fn delete(&self, id: &BlockId) -> Result<bool> {
        Ok(self.blocks.write().remove(id).is_some())
    }

    fn ids(&self) -> Vec<BlockId> {
        let mut v: Vec<BlockId> = self.blocks.read().keys().copied().collect();
        v.sort();
        v
    }

    fn used_bytes(&self) -> u64 {
        self.blocks.read().values().map(|b| b.len() as u64).sum()
    }
}

/// One file per block at `<root>/<first two digest hex chars>/<full id hex>`.
pub struct FsStore {
    root: PathBuf,
}

impl FsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, id: &BlockId) -> PathBuf {
        let hex = id.digest_hex();
        self.root.join(&hex[..2]).join(id.to_string())
    }
}

impl BlockStore for FsStore {
    fn put(&self, id: BlockId, block: &Block) -> Result<()> {
        check(&id, block)?;
        let path = self.path_of(&id);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        // Write-then-rename so concurrent writers of identical content never
        // expose a torn file.
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, block.as_bytes())?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn get(&self, id: &BlockId) -> Result<Block> {
        match fs::read(self.path_of(id)) {
            Ok(bytes) => {
                let block = Block(bytes);
                check(id, &block)?;
                Ok(block)
            }
            Err(e) if e.kind() == ErrorKind::NotFound => Err(Error::NotFound(*id)),
            Err(e) => Err(e.into()),
        }
    }

    fn has(&self, id: &BlockId) -> bool {
        self.path_of(id).is_file()
    }

    fn delete(&self, id: &BlockId) -> Result<bool> {
        match fs::remove_file(self.path_of(id)) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    fn ids(&self) -> Vec<BlockId> {
        let mut out = Vec::new();
        let Ok(dirs) = fs::read_dir(&self.root) else {
            return out;
        };
        for dir in dirs.flatten() {
            let Ok(files) = fs::read_dir(dir.path()) else {
                continue;
            };
            for f in files.flatten() {
                if let Some(id) = f.file_name().to_str().and_then(|n| n.parse().ok()) {
                    out.push(id);
                }
            }
        }
        out.sort();
        out
    }

    fn used_bytes(&self) -> u64 {
        self.ids().iter().filter_map(|id| fs::metadata(self.path_of(id)).ok()).map(|m| m.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{cid_of, BlockKind};

    fn exercise(store: &dyn BlockStore) {
        let b = Block::new(b"hello world".to_vec());
        let id = cid_of(&b, BlockKind::DataLeaf);
        store.put(id, &b).unwrap();
        assert_eq!(store.get(&id).unwrap(), b);
        assert!(store.has(&id));

        let unknown = cid_of(&Block::new(vec![1]), BlockKind::DataLeaf);
        assert!(matches!(store.get(&unknown), Err(Error::NotFound(_))));
        assert!(!store.has(&unknown));

        let wrong = cid_of(&Block::new(vec![2]), BlockKind::DataLeaf);
        assert!(matches!(store.put(wrong, &b), Err(Error::IntegrityMismatch(_))));

        assert_eq!(store.ids(), vec![id]);
        assert_eq!(store.used_bytes(), 11);
        assert!(store.delete(&id).unwrap());
        assert!(!store.delete(&id).unwrap());
        assert!(!store.has(&id));
    }

    #[test]
    fn memory_store_contract() {
        exercise(&MemoryStore::new());
    }

    #[test]
    fn fs_store_contract() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        exercise(&store);
    }

    #[test]
    fn fs_layout_uses_digest_prefix_directory() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        let b = Block::new(vec![5; 3]);
        let id = cid_of(&b, BlockKind::ParityLeaf);
        store.put(id, &b).unwrap();
        let expected = dir.path().join(&id.digest_hex()[..2]).join(id.to_string());
        assert!(expected.is_file());
    }

    #[test]
    fn corrupted_bytes_fail_integrity_on_read() {
        let store = MemoryStore::new();
        let b = Block::new(vec![0xAA; 64]);
        let id = cid_of(&b, BlockKind::DataLeaf);
        store.put(id, &b).unwrap();
        store.tamper(&id, |bytes| bytes[10] ^= 0x04);
        assert!(matches!(store.get(&id), Err(Error::IntegrityMismatch(_))));

        let dir = tempfile::tempdir().unwrap();
        let fs_store = FsStore::open(dir.path()).unwrap();
        fs_store.put(id, &b).unwrap();
        let mut raw = fs::read(fs_store.path_of(&id)).unwrap();
        raw[0] ^= 1;
        fs::write(fs_store.path_of(&id), raw).unwrap();
        assert!(matches!(fs_store.get(&id), Err(Error::IntegrityMismatch(_))));
    }
}
