use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ed25519_dalek::SigningKey;

use crate::canonical::Digest;
use crate::chaincode::{Contract, ContractPackage, PrivateValue};
use crate::identity::{sign_payload, AclPolicy, Certificate, Identity, Msp, Signature};
use crate::ledger::{Chain, PrivateStore};

/// A peer's copy of one channel.
#[derive(Clone, Debug)]
pub struct Replica {
    pub chain: Chain,
    pub private: PrivateStore,
}

#[derive(Clone)]
pub(crate) struct Installed {
    pub package: ContractPackage,
    pub contract: Arc<dyn Contract>,
}

/// A committing and endorsing node.
#[derive(Clone)]
pub struct Peer {
    pub(crate) cert: Certificate,
    pub(crate) key: SigningKey,
    pub(crate) msp: Arc<Msp>,
    pub(crate) acl: AclPolicy,
    /// Keyed by (name, version).
    pub(crate) installed: BTreeMap<(String, String), Installed>,
    pub(crate) channels: BTreeMap<String, Replica>,
    /// Private values received out of band, waiting for their transaction
    /// to commit.
    pub(crate) transient: BTreeMap<Digest, Vec<PrivateValue>>,
    pub(crate) online: bool,
}

impl fmt::Debug for Peer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Peer")
            .field("name", &self.name())
            .field("channels", &self.channels.keys().collect::<Vec<_>>())
            .field("online", &self.online)
            .finish_non_exhaustive()
    }
}

impl Peer {
    pub fn new(cert: Certificate, key: SigningKey, msp: Arc<Msp>, acl: AclPolicy) -> Self {
        Peer {
            cert,
            key,
            msp,
            acl,
            installed: BTreeMap::new(),
            channels: BTreeMap::new(),
            transient: BTreeMap::new(),
            online: true,
        }
    }

    pub fn name(&self) -> &str {
        &self.cert.identity.common_name
    }

    pub fn org(&self) -> &str {
        &self.cert.identity.org
    }

    pub fn identity(&self) -> &Identity {
        &self.cert.identity
    }

    pub fn msp(&self) -> &Msp {
        &self.msp
    }

    pub fn acl(&self) -> &AclPolicy {
        &self.acl
    }

    pub fn is_online(&self) -> bool {
        self.online
    }

    pub fn set_online(&mut self, online: bool) {
        self.online = online;
    }

    pub fn replica(&self, channel: &str) -> Option<&Replica> {
        self.channels.get(channel)
    }

    pub fn chain(&self, channel: &str) -> Option<&Chain> {
        self.channels.get(channel).map(|r| &r.chain)
    }

    /// Mutable replica access, for fault-injection tests only.
    #[doc(hidden)]
    pub fn replica_mut_for_tests(&mut self, channel: &str) -> Option<&mut Replica> {
        self.channels.get_mut(channel)
    }

    pub fn installed_packages(&self) -> impl Iterator<Item = &ContractPackage> {
        self.installed.values().map(|i| &i.package)
    }

    pub(crate) fn installed(&self, name: &str, version: &str) -> Option<&Installed> {
        self.installed.get(&(name.to_string(), version.to_string()))
    }

    pub(crate) fn sign(&self, payload: &[u8]) -> Signature {
        sign_payload(&self.key, payload)
    }

    /// Hand private values to this peer ahead of commit. At commit they are
    /// kept only if this peer's org may read the collection.
    pub fn receive_private(&mut self, tx_id: Digest, values: &[PrivateValue]) {
        if !values.is_empty() {
            self.transient.insert(tx_id, values.to_vec());
        }
    }
}
