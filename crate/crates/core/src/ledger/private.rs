use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{b64, Digest};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrivateDataError {
    #[error("collection {0:?} is not declared")]
    UnknownCollection(String),
    #[error("org {org:?} may not read collection {collection:?}")]
    ReadDenied { org: String, collection: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Collection {
    pub readers: BTreeSet<String>,
    pub entries: BTreeMap<String, Blob>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Blob(#[serde(with = "b64")] pub Vec<u8>);

/// Off-chain values shared among authorized orgs; only their hashes go on
/// the chain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrivateStore {
    collections: BTreeMap<String, Collection>,
}

impl PrivateStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, collection: &str, readers: impl IntoIterator<Item = String>) {
        let entry = self.collections.entry(collection.to_string()).or_default();
        entry.readers.extend(readers);
    }

    pub fn is_declared(&self, collection: &str) -> bool {
        self.collections.contains_key(collection)
    }

    pub fn is_reader(&self, collection: &str, org: &str) -> bool {
        self.collections
            .get(collection)
            .is_some_and(|c| c.readers.contains(org))
    }

    /// Store a value and return the hash to place on the chain.
    pub fn put(&mut self, collection: &str, key: &str, value: &[u8]) -> Result<Digest, PrivateDataError> {
        let coll = self
            .collections
            .get_mut(collection)
            .ok_or_else(|| PrivateDataError::UnknownCollection(collection.to_string()))?;
        coll.entries.insert(key.to_string(), Blob(value.to_vec()));
        Ok(Digest::of(value))
    }

    pub fn read(&self, collection: &str, key: &str, org: &str) -> Result<Option<&[u8]>, PrivateDataError> {
        let coll = self
            .collections
            .get(collection)
            .ok_or_else(|| PrivateDataError::UnknownCollection(collection.to_string()))?;
        if !coll.readers.contains(org) {
            return Err(PrivateDataError::ReadDenied {
                org: org.to_string(),
                collection: collection.to_string(),
            });
        }
        Ok(coll.entries.get(key).map(|b| b.0.as_slice()))
    }

    pub fn collections(&self) -> &BTreeMap<String, Collection> {
        &self.collections
    }

    pub(crate) fn insert_collection(&mut self, name: String, collection: Collection) {
        self.collections.insert(name, collection);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> PrivateStore {
        let mut s = PrivateStore::new();
        s.declare("secrets", ["Org1".to_string()]);
        s
    }

    #[test]
    fn member_reads_value_matching_hash() {
        let mut s = store();
        let hash = s.put("secrets", "k", b"value").unwrap();
        assert_eq!(s.read("secrets", "k", "Org1").unwrap(), Some(&b"value"[..]));
        assert_eq!(hash, Digest::of(b"value"));
    }

    #[test]
    fn non_member_denied() {
        let mut s = store();
        s.put("secrets", "k", b"value").unwrap();
        assert!(matches!(
            s.read("secrets", "k", "Org2"),
            Err(PrivateDataError::ReadDenied { .. })
        ));
    }

    #[test]
    fn undeclared_collection() {
        let mut s = store();
        assert_eq!(
            s.put("other", "k", b"v"),
            Err(PrivateDataError::UnknownCollection("other".into()))
        );
    }
}
