//! Per-channel hash-chained ledger: transactions, blocks, world state,
//! history and private data collections.

mod chain;
mod merkle;
mod private;
mod state;
mod store;

pub use chain::{validate_block_files, validate_chain, BlockFault, Chain, ChainCheck, HistoryEntry};
pub use merkle::merkle_root;
pub use private::{PrivateDataError, PrivateStore};
pub use state::{StateEntry, WorldState};
pub use store::{LedgerStore, StoreError};

pub use crate::canonical::{canonical_decode, canonical_encode};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical::{b64, canonical_hash, Digest};
use crate::identity::{KeyId, Signature};

/// Position of a committed write: (block height, index within block).
/// Ordered lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Version {
    pub block_height: u64,
    pub tx_index: u32,
}

impl Version {
    pub fn new(block_height: u64, tx_index: u32) -> Self {
        Version { block_height, tx_index }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.block_height, self.tx_index)
    }
}

/// A key read during execution and the version observed; `None` means the
/// key was absent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadEntry {
    pub key: String,
    pub version: Option<Version>,
}

/// A key written during execution; a `None` value is a delete marker.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WriteEntry {
    pub key: String,
    #[serde(with = "b64::option")]
    pub value: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivateHash {
    pub collection: String,
    pub key: String,
    pub hash: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endorsement {
    pub key_id: KeyId,
    #[serde(with = "b64::array")]
    pub signature: Signature,
}

/// The fields a transaction id commits to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalHeader {
    pub channel: String,
    pub contract: String,
    pub function: String,
    pub args: Vec<String>,
    pub creator: KeyId,
    #[serde(with = "b64::array")]
    pub nonce: [u8; 16],
}

impl ProposalHeader {
    pub fn tx_id(&self) -> Digest {
        canonical_hash(self).expect("proposal header encodes canonically")
    }
}

/// Simulation results a set of endorsers must agree on.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RwSet {
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
    pub private_hashes: Vec<PrivateHash>,
}

#[derive(Serialize)]
struct EndorsementPayload<'a> {
    tx_id: &'a Digest,
    read_set: &'a [ReadEntry],
    write_set: &'a [WriteEntry],
    private_hashes: &'a [PrivateHash],
}

/// Bytes an endorser signs: the tx id together with the rw-set.
pub fn endorsement_payload(tx_id: &Digest, rw: &RwSet) -> Vec<u8> {
    crate::canonical::to_canonical(&EndorsementPayload {
        tx_id,
        read_set: &rw.read_set,
        write_set: &rw.write_set,
        private_hashes: &rw.private_hashes,
    })
    .expect("endorsement payload encodes canonically")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub tx_id: Digest,
    pub channel: String,
    pub contract: String,
    pub function: String,
    pub args: Vec<String>,
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
    pub private_hashes: Vec<PrivateHash>,
    pub endorsements: Vec<Endorsement>,
    pub creator: KeyId,
    #[serde(with = "b64::array")]
    pub nonce: [u8; 16],
}

impl Transaction {
    pub fn new(header: ProposalHeader, rw: RwSet, endorsements: Vec<Endorsement>) -> Self {
        Transaction {
            tx_id: header.tx_id(),
            channel: header.channel,
            contract: header.contract,
            function: header.function,
            args: header.args,
            read_set: rw.read_set,
            write_set: rw.write_set,
            private_hashes: rw.private_hashes,
            endorsements,
            creator: header.creator,
            nonce: header.nonce,
        }
    }

    pub fn header(&self) -> ProposalHeader {
        ProposalHeader {
            channel: self.channel.clone(),
            contract: self.contract.clone(),
            function: self.function.clone(),
            args: self.args.clone(),
            creator: self.creator,
            nonce: self.nonce,
        }
    }

    pub fn rw_set(&self) -> RwSet {
        RwSet {
            read_set: self.read_set.clone(),
            write_set: self.write_set.clone(),
            private_hashes: self.private_hashes.clone(),
        }
    }

    pub fn recompute_tx_id(&self) -> Digest {
        self.header().tx_id()
    }

    /// True when the id matches the header and write keys are unique.
    pub fn is_well_formed(&self) -> bool {
        let mut keys: Vec<&str> = self.write_set.iter().map(|w| w.key.as_str()).collect();
        keys.sort_unstable();
        keys.windows(2).all(|w| w[0] != w[1]) && self.recompute_tx_id() == self.tx_id
    }

    pub fn endorsement_payload(&self) -> Vec<u8> {
        endorsement_payload(&self.tx_id, &self.rw_set())
    }

    /// Merkle leaf: hash of the full canonical transaction, so any field
    /// (rw-sets and endorsements included) is covered by the block hash.
    pub fn leaf_hash(&self) -> Digest {
        canonical_hash(self).expect("transaction encodes canonically")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValidationCode {
    Valid,
    MvccConflict,
    PolicyFail,
    BadSignature,
    DuplicateTxId,
}

impl fmt::Display for ValidationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Serialize)]
struct BlockHeader<'a> {
    height: u64,
    prev_hash: &'a Digest,
    merkle_root: &'a Digest,
    validation_flags: &'a [ValidationCode],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    pub transactions: Vec<Transaction>,
    pub validation_flags: Vec<ValidationCode>,
    pub block_hash: Digest,
}

impl Block {
    /// Build a block with a freshly computed Merkle root and hash.
    pub fn seal(
        height: u64,
        prev_hash: Digest,
        transactions: Vec<Transaction>,
        validation_flags: Vec<ValidationCode>,
    ) -> Block {
        let merkle_root = Block::compute_merkle_root(&transactions);
        let block_hash = header_hash(height, &prev_hash, &merkle_root, &validation_flags);
        Block {
            height,
            prev_hash,
            merkle_root,
            transactions,
            validation_flags,
            block_hash,
        }
    }

    pub fn compute_merkle_root(transactions: &[Transaction]) -> Digest {
        let leaves: Vec<Digest> = transactions.iter().map(Transaction::leaf_hash).collect();
        merkle_root(&leaves)
    }

    pub fn compute_hash(&self) -> Digest {
        header_hash(self.height, &self.prev_hash, &self.merkle_root, &self.validation_flags)
    }

    /// Transactions paired with their flags and indices.
    pub fn flagged(&self) -> impl Iterator<Item = (u32, &Transaction, ValidationCode)> {
        self.transactions
            .iter()
            .zip(self.validation_flags.iter().copied())
            .enumerate()
            .map(|(i, (tx, flag))| (i as u32, tx, flag))
    }

    pub fn valid_transactions(&self) -> impl Iterator<Item = (u32, &Transaction)> {
        self.flagged()
            .filter(|(_, _, f)| *f == ValidationCode::Valid)
            .map(|(i, tx, _)| (i, tx))
    }
}

fn header_hash(height: u64, prev_hash: &Digest, merkle_root: &Digest, validation_flags: &[ValidationCode]) -> Digest {
    canonical_hash(&BlockHeader {
        height,
        prev_hash,
        merkle_root,
        validation_flags,
    })
    .expect("block header encodes canonically")
}
