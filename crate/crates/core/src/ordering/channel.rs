use thiserror::Error;

use super::{validate_and_commit, BlockProposal, CommitError, Peer, Replica};
use crate::canonical::{to_canonical, Digest};
use crate::chaincode::{require, ChaincodeError, ChannelConfig, CHANNEL_CONFIG_KEY, CONFIG_CONTRACT};
use crate::identity::{AclPolicy, Action, Identity};
use crate::ledger::{Block, Chain, PrivateStore, ProposalHeader, RwSet, Transaction, ValidationCode, WriteEntry};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("channel {0} does not exist")]
    UnknownChannel(String),
    #[error("{identity} may not {action}")]
    PermissionDenied { identity: String, action: Action },
    #[error("peer already joined {0}")]
    AlreadyJoined(String),
    #[error("invalid channel config: {0}")]
    BadConfig(String),
    #[error("replayed block {height} does not match the source: {detail}")]
    ReplayDiverged { height: u64, detail: String },
}

impl From<ChaincodeError> for ChannelError {
    fn from(e: ChaincodeError) -> Self {
        match e {
            ChaincodeError::PermissionDenied { identity, action, .. } => {
                ChannelError::PermissionDenied { identity, action }
            }
            other => ChannelError::BadConfig(other.to_string()),
        }
    }
}

/// Genesis block of a new channel: a single configuration transaction.
pub fn create_channel(acl: &AclPolicy, creator: &Identity, config: &ChannelConfig) -> Result<Block, ChannelError> {
    if !crate::identity::check_permission(acl, creator, Action::CreateChannel).is_allowed() {
        return Err(ChannelError::PermissionDenied {
            identity: creator.common_name.clone(),
            action: Action::CreateChannel,
        });
    }
    if config.orgs.is_empty() || config.name.is_empty() {
        return Err(ChannelError::BadConfig(
            "channel needs a name and at least one org".into(),
        ));
    }
    config
        .lifecycle_policy
        .check()
        .map_err(|e| ChannelError::BadConfig(e.to_string()))?;
    if let Some(org) = config
        .lifecycle_policy
        .orgs()
        .into_iter()
        .find(|o| !config.orgs.contains(*o))
    {
        return Err(ChannelError::BadConfig(format!("policy names unknown org {org}")));
    }
    let header = ProposalHeader {
        channel: config.name.clone(),
        contract: CONFIG_CONTRACT.to_string(),
        function: "create".to_string(),
        args: Vec::new(),
        creator: creator.key_id,
        nonce: [0; 16],
    };
    let rw = RwSet {
        read_set: Vec::new(),
        write_set: vec![WriteEntry {
            key: CHANNEL_CONFIG_KEY.to_string(),
            value: Some(to_canonical(config).expect("config encodes canonically")),
        }],
        private_hashes: Vec::new(),
    };
    let tx = Transaction::new(header, rw, Vec::new());
    Ok(Block::seal(0, Digest::ZERO, vec![tx], vec![ValidationCode::Valid]))
}

/// Bring `peer` onto `channel` by re-validating every block of `source`
/// from genesis. The rebuilt chain must reproduce each source block hash.
pub fn join_channel(
    peer: &mut Peer,
    caller: &Identity,
    channel: &str,
    source: &[Block],
) -> Result<Digest, ChannelError> {
    require(peer, caller, Action::JoinChannel)?;
    if source.is_empty() {
        return Err(ChannelError::UnknownChannel(channel.to_string()));
    }
    if peer.channels.contains_key(channel) {
        return Err(ChannelError::AlreadyJoined(channel.to_string()));
    }
    peer.channels.insert(
        channel.to_string(),
        Replica {
            chain: Chain::new(channel),
            private: PrivateStore::new(),
        },
    );
    let result = replay(peer, channel, source);
    if result.is_err() {
        peer.channels.remove(channel);
    }
    result
}

/// Append blocks the peer has not seen yet, re-validating each.
pub fn catch_up(peer: &mut Peer, channel: &str, source: &[Block]) -> Result<Digest, ChannelError> {
    if !peer.channels.contains_key(channel) {
        return Err(ChannelError::UnknownChannel(channel.to_string()));
    }
    replay(peer, channel, source)
}

fn replay(peer: &mut Peer, channel: &str, source: &[Block]) -> Result<Digest, ChannelError> {
    let chain = &peer.channels[channel].chain;
    let start = chain.next_height() as usize;
    if start > 0 && source.get(start - 1).map(|b| b.block_hash) != Some(chain.tip_hash()) {
        return Err(ChannelError::ReplayDiverged {
            height: start as u64 - 1,
            detail: "local tip differs from the source".into(),
        });
    }
    for block in source.iter().skip(start) {
        let committed = validate_and_commit(peer, &BlockProposal::of_block(channel, block)).map_err(|e| match e {
            CommitError::UnknownChannel(c) => ChannelError::UnknownChannel(c),
            CommitError::Fault { height, fault } => ChannelError::ReplayDiverged {
                height,
                detail: fault.to_string(),
            },
        })?;
        if committed.block_hash != block.block_hash {
            return Err(ChannelError::ReplayDiverged {
                height: block.height,
                detail: "validation flags or linkage differ".into(),
            });
        }
    }
    Ok(peer.channels[channel].chain.state().digest())
}
