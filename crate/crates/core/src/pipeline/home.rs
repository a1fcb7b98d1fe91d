//! The persisted ledger behind `FABRIC_BIN`:
//!
//! ```text
//! <home>/network.json        NetworkConfig, written last
//! <home>/crypto/<org>/...    org materials
//! <home>/ledger/<channel>/   blocks, state, private data
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::canonical::{from_canonical_slice, to_canonical};
use crate::identity::{load_org_materials, save_org_materials, IdentityError};
use crate::ledger::{Block, Chain, ChainCheck, LedgerStore, StoreError};
use crate::ordering::{Network, NetworkConfig, NetworkError};

#[derive(Debug, Error)]
pub enum HomeError {
    #[error("ledger home {0} is not initialized")]
    NotInitialized(PathBuf),
    #[error("corrupt workspace: {0}")]
    Corrupt(String),
    #[error("i/o error on {path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl From<StoreError> for HomeError {
    fn from(e: StoreError) -> Self {
        HomeError::Network(NetworkError::Store(e))
    }
}

impl From<IdentityError> for HomeError {
    fn from(e: IdentityError) -> Self {
        HomeError::Network(NetworkError::Identity(e))
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HomeError + '_ {
    move |e| HomeError::Io {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

#[derive(Clone, Debug)]
pub struct LedgerHome {
    dir: PathBuf,
}

impl LedgerHome {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        LedgerHome { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.join("network.json")
    }

    pub fn crypto_dir(&self) -> PathBuf {
        self.dir.join("crypto")
    }

    pub fn ledger_root(&self) -> PathBuf {
        self.dir.join("ledger")
    }

    pub fn store(&self, channel: &str) -> LedgerStore {
        LedgerStore::new(&self.ledger_root(), channel)
    }

    pub fn is_initialized(&self) -> bool {
        self.config_path().is_file()
    }

    /// Leftovers of an interrupted or damaged setup: content without the
    /// config marker.
    fn has_partial_content(&self) -> bool {
        self.crypto_dir().exists() || self.ledger_root().exists()
    }

    pub fn read_config(&self) -> Result<NetworkConfig, HomeError> {
        let path = self.config_path();
        if !path.is_file() {
            return Err(HomeError::NotInitialized(self.dir.clone()));
        }
        let bytes = fs::read(&path).map_err(io(&path))?;
        from_canonical_slice(&bytes).map_err(|e| HomeError::Corrupt(format!("{}: {e}", path.display())))
    }

    /// Open when initialized, otherwise create with `config`. The second
    /// element is true when this call created the ledger.
    pub fn ensure(&self, config: &NetworkConfig) -> Result<(Network, bool), HomeError> {
        if self.is_initialized() {
            return Ok((self.open()?, false));
        }
        if self.has_partial_content() {
            return Err(HomeError::Corrupt(format!(
                "{} holds ledger data but no network.json",
                self.dir.display()
            )));
        }
        Ok((self.create(config)?, true))
    }

    fn create(&self, config: &NetworkConfig) -> Result<Network, HomeError> {
        fs::create_dir_all(&self.dir).map_err(io(&self.dir))?;
        let mut net = Network::bootstrap(config.clone())?;
        for m in net.materials() {
            save_org_materials(&self.crypto_dir(), m)?;
        }
        net.attach_store(&self.ledger_root())?;
        let path = self.config_path();
        let bytes = to_canonical(config).expect("config encodes canonically");
        fs::write(&path, bytes).map_err(io(&path))?;
        Ok(net)
    }

    /// Structural check of the block files only.
    pub fn verify(&self) -> Result<ChainCheck, HomeError> {
        let config = self.read_config()?;
        Ok(self.store(&config.channel).verify()?)
    }

    /// Blocks after a structural check, without replaying signatures.
    pub fn load_chain(&self) -> Result<Chain, HomeError> {
        let config = self.read_config()?;
        self.store(&config.channel).load_chain().map_err(|e| match e {
            StoreError::Corrupt { height, fault } => HomeError::Corrupt(format!("block {height}: {fault}")),
            other => other.into(),
        })
    }

    /// Fully re-validate and rebuild the network from disk; any
    /// inconsistency is reported as [`HomeError::Corrupt`].
    pub fn open(&self) -> Result<Network, HomeError> {
        let config = self.read_config()?;
        let store = self.store(&config.channel);
        if let ChainCheck::FirstBadHeight { height, fault } = store.verify()? {
            return Err(HomeError::Corrupt(format!("block {height}: {fault}")));
        }
        let corrupt = |e: &dyn std::fmt::Display| HomeError::Corrupt(e.to_string());
        let mut materials = Vec::with_capacity(config.orgs.len());
        for org in &config.orgs {
            materials.push(load_org_materials(&self.crypto_dir(), org).map_err(|e| corrupt(&e))?);
        }
        let chain = store.load_chain().map_err(|e| corrupt(&e))?;
        let blocks: Vec<Block> = chain.blocks().to_vec();
        let private = store.read_private().map_err(|e| corrupt(&e))?;
        let mut net = Network::restore(config, materials, &blocks, &private).map_err(|e| match e {
            NetworkError::Corrupt(detail) => HomeError::Corrupt(detail),
            NetworkError::Channel(e) => corrupt(&e),
            other => HomeError::Network(other),
        })?;
        let state = store.read_state().map_err(|e| corrupt(&e))?;
        let replayed = net
            .reference_peer()?
            .chain(net.channel())
            .expect("joined")
            .state()
            .digest();
        if state.map(|s| s.digest()) != Some(replayed) {
            return Err(HomeError::Corrupt(
                "state snapshot does not match the replayed chain".into(),
            ));
        }
        net.attach_store(&self.ledger_root())?;
        Ok(net)
    }
}
