use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Block, Version, WriteEntry};
use crate::canonical::{b64, canonical_hash, Digest};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateEntry {
    #[serde(with = "b64")]
    pub value: Vec<u8>,
    pub version: Version,
}

/// Current key → value view of one channel.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldState {
    pub channel: String,
    pub entries: BTreeMap<String, StateEntry>,
}

impl WorldState {
    pub fn new(channel: &str) -> Self {
        WorldState {
            channel: channel.to_string(),
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&StateEntry> {
        self.entries.get(key)
    }

    pub fn get_value(&self, key: &str) -> Option<&[u8]> {
        self.entries.get(key).map(|e| e.value.as_slice())
    }

    pub fn version(&self, key: &str) -> Option<Version> {
        self.entries.get(key).map(|e| e.version)
    }

    pub fn apply_writes(&mut self, writes: &[WriteEntry], version: Version) {
        for w in writes {
            match &w.value {
                Some(value) => {
                    self.entries.insert(
                        w.key.clone(),
                        StateEntry {
                            value: value.clone(),
                            version,
                        },
                    );
                }
                None => {
                    self.entries.remove(&w.key);
                }
            }
        }
    }

    /// Apply every Valid transaction of a committed block, in order.
    pub fn apply_block(&mut self, block: &Block) {
        for (index, tx) in block.valid_transactions() {
            self.apply_writes(&tx.write_set, Version::new(block.height, index));
        }
    }

    /// Keys with the given prefix, in key order.
    pub fn scan_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a StateEntry)> {
        self.entries
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
    }

    pub fn digest(&self) -> Digest {
        canonical_hash(self).expect("world state encodes canonically")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
