use thiserror::Error;

use super::Peer;
use crate::chaincode::{ChaincodeError, PrivateValue, TransactionProposal};
use crate::identity::Action;
use crate::ledger::{endorsement_payload, Endorsement, Transaction};

#[derive(Debug, Error)]
pub enum EndorseError {
    #[error("peer {0} is unavailable")]
    PeerUnavailable(String),
    #[error("peer {peer} produced a different read/write set")]
    EndorsementMismatch { peer: String },
    #[error("no endorsing peers given")]
    NoEndorsers,
    #[error("execution failed: {0}")]
    Chaincode(#[from] ChaincodeError),
}

/// A transaction ready for ordering, plus what stays off the chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EndorsedTransaction {
    pub transaction: Transaction,
    pub response: Vec<u8>,
    pub private_values: Vec<PrivateValue>,
}

/// Re-execute `proposal` on every endorsing peer and collect signatures over
/// the shared read/write set. Every peer must reproduce the set exactly.
pub fn endorse_proposal(proposal: &TransactionProposal, peers: &[&Peer]) -> Result<EndorsedTransaction, EndorseError> {
    if peers.is_empty() {
        return Err(EndorseError::NoEndorsers);
    }
    if let Some(down) = peers.iter().find(|p| !p.is_online()) {
        return Err(EndorseError::PeerUnavailable(down.name().to_string()));
    }
    let payload = endorsement_payload(&proposal.tx_id, &proposal.rw);
    let mut endorsements = Vec::with_capacity(peers.len());
    for peer in peers {
        let mine = peer.execute(&proposal.header, Action::Invoke)?;
        if mine.rw != proposal.rw || mine.private_values != proposal.private_values {
            return Err(EndorseError::EndorsementMismatch {
                peer: peer.name().to_string(),
            });
        }
        endorsements.push(Endorsement {
            key_id: peer.identity().key_id,
            signature: peer.sign(&payload),
        });
    }
    Ok(EndorsedTransaction {
        transaction: Transaction::new(proposal.header.clone(), proposal.rw.clone(), endorsements),
        response: proposal.response.clone(),
        private_values: proposal.private_values.clone(),
    })
}
