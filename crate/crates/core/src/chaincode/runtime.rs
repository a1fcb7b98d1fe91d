use std::collections::BTreeSet;
use std::sync::Arc;

use super::lifecycle::{ChannelConfig, LifecycleContract, LifecycleRecord, LIFECYCLE_CONTRACT};
use super::{ChaincodeError, Contract, ContractError, ContractPackage, InvocationContext, PrivateValue};
use crate::canonical::Digest;
use crate::identity::{check_permission, AccessDecision, Action, Identity};
use crate::ledger::{ProposalHeader, RwSet};
use crate::ordering::Peer;

/// The result of executing a proposal on one peer, before endorsement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransactionProposal {
    pub header: ProposalHeader,
    pub tx_id: Digest,
    pub rw: RwSet,
    pub response: Vec<u8>,
    pub private_values: Vec<PrivateValue>,
}

pub(crate) fn require(acl_holder: &Peer, identity: &Identity, action: Action) -> Result<(), ChaincodeError> {
    match check_permission(acl_holder.acl(), identity, action) {
        AccessDecision::Allow => Ok(()),
        AccessDecision::Deny(_) => Err(ChaincodeError::PermissionDenied {
            identity: identity.common_name.clone(),
            role: identity.role,
            action,
        }),
    }
}

/// Make a contract available on `peer`. Reinstalling the identical package
/// is a no-op returning the same id.
pub fn install_contract(
    peer: &mut Peer,
    caller: &Identity,
    contract: Arc<dyn Contract>,
) -> Result<Digest, ChaincodeError> {
    require(peer, caller, Action::InstallContract)?;
    let package = ContractPackage::of(contract.as_ref());
    let key = (package.name.clone(), package.version.clone());
    if let Some(existing) = peer.installed.get(&key) {
        if existing.package.package_id != package.package_id {
            return Err(ChaincodeError::VersionConflict {
                name: package.name,
                version: package.version,
            });
        }
        return Ok(existing.package.package_id);
    }
    let id = package.package_id;
    peer.installed
        .insert(key, crate::ordering::peer::Installed { package, contract });
    Ok(id)
}

impl Peer {
    /// Execute `header` against this peer's current snapshot of its channel.
    /// Nothing is mutated; the returned read/write sets are what endorsers
    /// sign.
    pub fn execute(&self, header: &ProposalHeader, action: Action) -> Result<TransactionProposal, ChaincodeError> {
        let replica = self
            .replica(&header.channel)
            .ok_or_else(|| ChaincodeError::UnknownChannel(header.channel.clone()))?;
        let creator = self
            .msp()
            .identity(&header.creator)
            .ok_or(ChaincodeError::UnknownCreator(header.creator))?;
        let state = replica.chain.state();

        let lifecycle = LifecycleContract;
        let (contract, action): (&dyn Contract, Action) = if header.contract == LIFECYCLE_CONTRACT {
            // init names a package that must already be installed here
            if let [name, version, package_id, ..] = header.args.as_slice() {
                let installed = self
                    .installed(name, version)
                    .filter(|i| i.package.package_id.to_hex() == *package_id);
                if installed.is_none() {
                    return Err(ChaincodeError::NotInstalled(name.clone()));
                }
            }
            (&lifecycle, Action::InitContract)
        } else {
            let record = LifecycleRecord::load(state, &header.contract)
                .ok_or_else(|| ChaincodeError::UnknownContract(header.contract.clone()))?;
            let installed = self
                .installed(&record.name, &record.version)
                .filter(|i| i.package.package_id == record.package_id)
                .ok_or_else(|| ChaincodeError::NotInstalled(header.contract.clone()))?;
            (installed.contract.as_ref(), action)
        };
        require(self, creator, action)?;
        if contract.function(&header.function).is_none() {
            return Err(ChaincodeError::UnknownFunction {
                contract: header.contract.clone(),
                function: header.function.clone(),
            });
        }

        let collections: BTreeSet<String> = ChannelConfig::load(state)
            .map(|c| c.collections.into_keys().collect())
            .unwrap_or_default();
        let mut ctx = InvocationContext::new(&header.channel, creator, &replica.chain, &collections);
        let response = contract
            .call(&header.function, &header.args, &mut ctx)
            .map_err(|e| match e {
                ContractError::AlreadyInitialized(name) => ChaincodeError::AlreadyInitialized(name),
                other => ChaincodeError::Contract(other),
            })?;
        let (rw, private_values) = ctx.finish();
        Ok(TransactionProposal {
            tx_id: header.tx_id(),
            header: header.clone(),
            rw,
            response,
            private_values,
        })
    }
}

/// Simulate a state-changing call on `peer`. The result still has to be
/// endorsed, ordered and validated before anything is committed.
pub fn invoke_contract(
    peer: &Peer,
    channel: &str,
    contract: &str,
    function: &str,
    args: &[String],
    creator: &Identity,
    nonce: [u8; 16],
) -> Result<TransactionProposal, ChaincodeError> {
    let header = ProposalHeader {
        channel: channel.to_string(),
        contract: contract.to_string(),
        function: function.to_string(),
        args: args.to_vec(),
        creator: creator.key_id,
        nonce,
    };
    peer.execute(&header, Action::Invoke)
}

/// Evaluate a read-only call. Produces no transaction.
pub fn query_contract(
    peer: &Peer,
    channel: &str,
    contract: &str,
    function: &str,
    args: &[String],
    creator: &Identity,
) -> Result<Vec<u8>, ChaincodeError> {
    let header = ProposalHeader {
        channel: channel.to_string(),
        contract: contract.to_string(),
        function: function.to_string(),
        args: args.to_vec(),
        creator: creator.key_id,
        nonce: [0; 16],
    };
    let proposal = peer.execute(&header, Action::Query)?;
    if !proposal.rw.write_set.is_empty() || !proposal.rw.private_hashes.is_empty() {
        return Err(ChaincodeError::WriteInReadOnly {
            contract: contract.to_string(),
            function: function.to_string(),
        });
    }
    Ok(proposal.response)
}
