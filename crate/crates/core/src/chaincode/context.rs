use std::collections::{BTreeMap, BTreeSet};

use super::ContractError;
use crate::canonical::Digest;
use crate::identity::Identity;
use crate::ledger::{Chain, HistoryEntry, PrivateHash, ReadEntry, RwSet, WriteEntry};

/// A private value put during execution. Travels beside the transaction to
/// committing peers; only its hash is recorded on the chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrivateValue {
    pub collection: String,
    pub key: String,
    pub value: Vec<u8>,
}

/// Execution view over a channel snapshot. Reads are recorded with the
/// version observed; writes are buffered and never touch the snapshot.
pub struct InvocationContext<'a> {
    channel: &'a str,
    creator: &'a Identity,
    chain: &'a Chain,
    collections: &'a BTreeSet<String>,
    reads: Vec<ReadEntry>,
    read_keys: BTreeSet<String>,
    writes: BTreeMap<String, Option<Vec<u8>>>,
    private_puts: Vec<PrivateValue>,
}

impl<'a> InvocationContext<'a> {
    pub fn new(channel: &'a str, creator: &'a Identity, chain: &'a Chain, collections: &'a BTreeSet<String>) -> Self {
        InvocationContext {
            channel,
            creator,
            chain,
            collections,
            reads: Vec::new(),
            read_keys: BTreeSet::new(),
            writes: BTreeMap::new(),
            private_puts: Vec::new(),
        }
    }

    pub fn channel(&self) -> &str {
        self.channel
    }

    pub fn creator(&self) -> &Identity {
        self.creator
    }

    fn record_read(&mut self, key: &str) {
        if self.read_keys.insert(key.to_string()) {
            self.reads.push(ReadEntry {
                key: key.to_string(),
                version: self.chain.state().version(key),
            });
        }
    }

    /// Read a key. Own buffered writes are visible; otherwise the committed
    /// value is returned and its version recorded for MVCC.
    pub fn get_state(&mut self, key: &str) -> Option<Vec<u8>> {
        if let Some(buffered) = self.writes.get(key) {
            return buffered.clone();
        }
        self.record_read(key);
        self.chain.state().get_value(key).map(<[u8]>::to_vec)
    }

    pub fn put_state(&mut self, key: &str, value: Vec<u8>) {
        self.writes.insert(key.to_string(), Some(value));
    }

    pub fn delete_state(&mut self, key: &str) {
        self.writes.insert(key.to_string(), None);
    }

    /// Committed keys under `prefix`. Each returned key is recorded as read.
    pub fn scan_prefix(&mut self, prefix: &str) -> Vec<(String, Vec<u8>)> {
        let found: Vec<(String, Vec<u8>)> = self
            .chain
            .state()
            .scan_prefix(prefix)
            .map(|(k, e)| (k.clone(), e.value.clone()))
            .collect();
        for (key, _) in &found {
            self.record_read(key);
        }
        found
    }

    /// Committed history of a key. Not part of the read set.
    pub fn history(&self, key: &str) -> Vec<HistoryEntry> {
        self.chain.read_history(key)
    }

    pub fn version_of(&self, key: &str) -> Option<crate::ledger::Version> {
        self.chain.state().version(key)
    }

    pub fn put_private(&mut self, collection: &str, key: &str, value: Vec<u8>) -> Result<Digest, ContractError> {
        if !self.collections.contains(collection) {
            return Err(ContractError::UnknownCollection(collection.to_string()));
        }
        let hash = Digest::of(&value);
        self.private_puts
            .retain(|p| !(p.collection == collection && p.key == key));
        self.private_puts.push(PrivateValue {
            collection: collection.to_string(),
            key: key.to_string(),
            value,
        });
        Ok(hash)
    }

    pub fn has_writes(&self) -> bool {
        !self.writes.is_empty() || !self.private_puts.is_empty()
    }

    pub fn finish(self) -> (RwSet, Vec<PrivateValue>) {
        let rw = RwSet {
            read_set: self.reads,
            write_set: self
                .writes
                .into_iter()
                .map(|(key, value)| WriteEntry { key, value })
                .collect(),
            private_hashes: self
                .private_puts
                .iter()
                .map(|p| PrivateHash {
                    collection: p.collection.clone(),
                    key: p.key.clone(),
                    hash: Digest::of(&p.value),
                })
                .collect(),
        };
        (rw, self.private_puts)
    }
}
