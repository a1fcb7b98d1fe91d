use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{evaluate_policy, Peer};
use crate::canonical::Digest;
use crate::chaincode::{ChannelConfig, LifecycleRecord, CONFIG_CONTRACT, LIFECYCLE_CONTRACT};
use crate::identity::{Msp, Role};
use crate::ledger::{Block, BlockFault, Chain, Transaction, ValidationCode, Version};

/// An ordered batch as produced by the orderer. Peers derive the flags and
/// the block hash themselves.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockProposal {
    pub channel: String,
    pub height: u64,
    pub transactions: Vec<Transaction>,
}

impl BlockProposal {
    pub fn of_block(channel: &str, block: &Block) -> Self {
        BlockProposal {
            channel: channel.to_string(),
            height: block.height,
            transactions: block.transactions.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommitError {
    #[error("peer has not joined channel {0}")]
    UnknownChannel(String),
    #[error("block {height} rejected: {fault}")]
    Fault { height: u64, fault: BlockFault },
}

/// Decide the flag of every transaction in a batch about to be appended to
/// `chain`. Earlier Valid transactions of the same batch count as state.
pub fn validate_transactions(chain: &Chain, msp: &Msp, transactions: &[Transaction]) -> Vec<ValidationCode> {
    let height = chain.next_height();
    let state = chain.state();
    let config = ChannelConfig::load(state);
    let mut seen_here: HashSet<Digest> = HashSet::new();
    // key -> version after earlier Valid txs in this batch (None = deleted)
    let mut overlay: BTreeMap<&str, Option<Version>> = BTreeMap::new();
    let mut flags = Vec::with_capacity(transactions.len());

    for (index, tx) in transactions.iter().enumerate() {
        let fresh = seen_here.insert(tx.tx_id);
        let flag = if !fresh || chain.contains_tx(&tx.tx_id) {
            ValidationCode::DuplicateTxId
        } else if height == 0 {
            // genesis carries only configuration
            if tx.contract == CONFIG_CONTRACT {
                ValidationCode::Valid
            } else {
                ValidationCode::PolicyFail
            }
        } else {
            match &config {
                None => ValidationCode::PolicyFail,
                Some(config) => check_transaction(tx, chain, msp, config, &overlay),
            }
        };
        if flag == ValidationCode::Valid {
            let version = Version::new(height, index as u32);
            for w in &tx.write_set {
                overlay.insert(&w.key, w.value.as_ref().map(|_| version));
            }
        }
        flags.push(flag);
    }
    flags
}

fn check_transaction(
    tx: &Transaction,
    chain: &Chain,
    msp: &Msp,
    config: &ChannelConfig,
    overlay: &BTreeMap<&str, Option<Version>>,
) -> ValidationCode {
    let payload = tx.endorsement_payload();
    let mut orgs = BTreeSet::new();
    for e in &tx.endorsements {
        match msp.verify(&e.key_id, &payload, &e.signature) {
            Ok(id) if id.role == Role::Peer && config.orgs.contains(&id.org) => {
                orgs.insert(id.org.clone());
            }
            _ => return ValidationCode::BadSignature,
        }
    }

    let policy = match tx.contract.as_str() {
        LIFECYCLE_CONTRACT => Some(config.lifecycle_policy.clone()),
        CONFIG_CONTRACT => None,
        name => LifecycleRecord::load(chain.state(), name).map(|r| r.endorsement_policy),
    };
    match policy {
        Some(policy) if evaluate_policy(&policy, &orgs) => {}
        _ => return ValidationCode::PolicyFail,
    }

    let state = chain.state();
    let stale = tx.read_set.iter().any(|r| {
        let current = match overlay.get(r.key.as_str()) {
            Some(v) => *v,
            None => state.version(&r.key),
        };
        current != r.version
    });
    if stale {
        ValidationCode::MvccConflict
    } else {
        ValidationCode::Valid
    }
}

/// Validate a proposed block on `peer`, seal it against the peer's own tip
/// and append it. Private values waiting for Valid transactions are stored
/// when the peer's org may read the collection and the hash matches.
pub fn validate_and_commit(peer: &mut Peer, proposal: &BlockProposal) -> Result<Block, CommitError> {
    let msp = peer.msp.clone();
    let org = peer.org().to_string();
    let replica = peer
        .channels
        .get_mut(&proposal.channel)
        .ok_or_else(|| CommitError::UnknownChannel(proposal.channel.clone()))?;
    let fault = |fault| CommitError::Fault {
        height: proposal.height,
        fault,
    };
    let expected = replica.chain.next_height();
    if proposal.height != expected {
        return Err(fault(BlockFault::HeightMismatch {
            expected,
            found: proposal.height,
        }));
    }
    let flags = validate_transactions(&replica.chain, &msp, &proposal.transactions);
    let block = Block::seal(
        proposal.height,
        replica.chain.tip_hash(),
        proposal.transactions.clone(),
        flags,
    );
    replica.chain.append_block(block.clone()).map_err(fault)?;

    if block.height == 0 {
        if let Some(config) = ChannelConfig::load(replica.chain.state()) {
            for (name, readers) in &config.collections {
                replica.private.declare(name, readers.iter().cloned());
            }
        }
    }
    for tx in &block.transactions {
        let Some(values) = peer.transient.remove(&tx.tx_id) else {
            continue;
        };
        if !block.valid_transactions().any(|(_, v)| v.tx_id == tx.tx_id) {
            continue;
        }
        for value in values {
            let on_chain = tx
                .private_hashes
                .iter()
                .any(|h| h.collection == value.collection && h.key == value.key && h.hash == Digest::of(&value.value));
            if on_chain && replica.private.is_reader(&value.collection, &org) {
                replica
                    .private
                    .put(&value.collection, &value.key, &value.value)
                    .expect("collection declared at genesis");
            }
        }
    }
    Ok(block)
}
