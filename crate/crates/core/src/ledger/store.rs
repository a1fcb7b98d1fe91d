//! Append-only on-disk layout for one channel:
//!
//! ```text
//! ledger/<channel>/blocks/<height>.json     canonical Block
//! ledger/<channel>/state.json               rebuildable WorldState snapshot
//! ledger/<channel>/private/<collection>.json
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::private::Collection;
use super::{validate_block_files, Block, BlockFault, Chain, ChainCheck, PrivateStore, WorldState};
use crate::canonical::{from_canonical_slice, to_canonical, CanonicalError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("block {0} already exists on disk")]
    BlockExists(u64),
    #[error("chain on disk fails validation at height {height}: {fault}")]
    Corrupt { height: u64, fault: BlockFault },
    #[error("encoding error in {path}: {source}")]
    Encoding {
        path: PathBuf,
        #[source]
        source: CanonicalError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write via a temp file and rename so readers never see partial content.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[derive(Clone, Debug)]
pub struct LedgerStore {
    channel: String,
    dir: PathBuf,
}

impl LedgerStore {
    /// `ledger_root` is the `ledger/` directory.
    pub fn new(ledger_root: &Path, channel: &str) -> Self {
        LedgerStore {
            channel: channel.to_string(),
            dir: ledger_root.join(channel),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn blocks_dir(&self) -> PathBuf {
        self.dir.join("blocks")
    }

    pub fn block_path(&self, height: u64) -> PathBuf {
        self.blocks_dir().join(format!("{height}.json"))
    }

    pub fn exists(&self) -> bool {
        self.block_path(0).exists()
    }

    pub fn write_block(&self, block: &Block) -> Result<(), StoreError> {
        let dir = self.blocks_dir();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = self.block_path(block.height);
        if path.exists() {
            return Err(StoreError::BlockExists(block.height));
        }
        let bytes = to_canonical(block).map_err(|source| StoreError::Encoding {
            path: path.clone(),
            source,
        })?;
        write_atomic(&path, &bytes).map_err(io_err(&path))
    }

    pub fn write_state(&self, state: &WorldState) -> Result<(), StoreError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let path = self.dir.join("state.json");
        let bytes = to_canonical(state).map_err(|source| StoreError::Encoding {
            path: path.clone(),
            source,
        })?;
        write_atomic(&path, &bytes).map_err(io_err(&path))
    }

    pub fn read_state(&self) -> Result<Option<WorldState>, StoreError> {
        let path = self.dir.join("state.json");
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        from_canonical_slice(&bytes)
            .map(Some)
            .map_err(|source| StoreError::Encoding { path, source })
    }

    pub fn write_private(&self, store: &PrivateStore) -> Result<(), StoreError> {
        let dir = self.dir.join("private");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (name, collection) in store.collections() {
            let path = dir.join(format!("{name}.json"));
            let bytes = to_canonical(collection).map_err(|source| StoreError::Encoding {
                path: path.clone(),
                source,
            })?;
            write_atomic(&path, &bytes).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn read_private(&self) -> Result<PrivateStore, StoreError> {
        let dir = self.dir.join("private");
        let mut store = PrivateStore::new();
        if !dir.exists() {
            return Ok(store);
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let name = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let collection: Collection =
                from_canonical_slice(&bytes).map_err(|source| StoreError::Encoding { path, source })?;
            store.insert_collection(name, collection);
        }
        Ok(store)
    }

    /// Raw block files indexed by height, up to the highest height present;
    /// gaps are `None`.
    pub fn read_block_files(&self) -> Result<Vec<Option<Vec<u8>>>, StoreError> {
        let dir = self.blocks_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut heights: Vec<u64> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().to_string();
                name.strip_suffix(".json")?.parse::<u64>().ok()
            })
            .collect();
        heights.sort_unstable();
        let Some(&max) = heights.last() else {
            return Ok(Vec::new());
        };
        let mut files = vec![None; max as usize + 1];
        for h in heights {
            let path = self.block_path(h);
            files[h as usize] = Some(fs::read(&path).map_err(io_err(&path))?);
        }
        Ok(files)
    }

    pub fn verify(&self) -> Result<ChainCheck, StoreError> {
        Ok(validate_block_files(&self.read_block_files()?))
    }

    /// Load and fully validate the chain, replaying it into a fresh state.
    pub fn load_chain(&self) -> Result<Chain, StoreError> {
        let files = self.read_block_files()?;
        if let ChainCheck::FirstBadHeight { height, fault } = validate_block_files(&files) {
            return Err(StoreError::Corrupt { height, fault });
        }
        let blocks = files
            .into_iter()
            .flatten()
            .map(|bytes| from_canonical_slice::<Block>(&bytes).expect("validated above"));
        Chain::from_blocks(&self.channel, blocks).map_err(|(height, fault)| StoreError::Corrupt { height, fault })
    }
}
