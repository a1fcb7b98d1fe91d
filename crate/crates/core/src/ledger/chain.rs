use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Block, Version, WorldState};
use crate::canonical::{from_canonical_slice, CanonicalError, Digest};

/// What is wrong with a block, relative to its position in the chain.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum BlockFault {
    #[error("block file missing")]
    Missing,
    #[error("block file unreadable: {0}")]
    Unreadable(String),
    #[error("block file is not in canonical encoding")]
    NonCanonical,
    #[error("height mismatch: expected {expected}, found {found}")]
    HeightMismatch { expected: u64, found: u64 },
    #[error("prev_hash does not match the previous block hash")]
    PrevHashMismatch,
    #[error("validation flag count does not match transaction count")]
    FlagCountMismatch,
    #[error("transaction {index} has a tx_id that does not recompute")]
    BadTxId { index: u32 },
    #[error("merkle root does not recompute")]
    BadMerkleRoot,
    #[error("block hash does not recompute")]
    BadBlockHash,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChainCheck {
    Ok,
    FirstBadHeight { height: u64, fault: BlockFault },
}

impl ChainCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainCheck::Ok)
    }
}

impl fmt::Display for ChainCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainCheck::Ok => f.write_str("Ok"),
            ChainCheck::FirstBadHeight { height, fault } => {
                write!(f, "FirstBadHeight({height}, {fault})")
            }
        }
    }
}

/// Structural check of one block against the expected position.
pub(crate) fn check_block(block: &Block, height: u64, prev_hash: &Digest) -> Result<(), BlockFault> {
    if block.height != height {
        return Err(BlockFault::HeightMismatch {
            expected: height,
            found: block.height,
        });
    }
    if &block.prev_hash != prev_hash {
        return Err(BlockFault::PrevHashMismatch);
    }
    if block.validation_flags.len() != block.transactions.len() {
        return Err(BlockFault::FlagCountMismatch);
    }
    for (index, tx) in block.transactions.iter().enumerate() {
        if tx.recompute_tx_id() != tx.tx_id {
            return Err(BlockFault::BadTxId { index: index as u32 });
        }
    }
    if Block::compute_merkle_root(&block.transactions) != block.merkle_root {
        return Err(BlockFault::BadMerkleRoot);
    }
    if block.compute_hash() != block.block_hash {
        return Err(BlockFault::BadBlockHash);
    }
    Ok(())
}

/// Walk from genesis and report the lowest failing height.
pub fn validate_chain(blocks: &[Block]) -> ChainCheck {
    let mut prev = Digest::ZERO;
    for (height, block) in blocks.iter().enumerate() {
        if let Err(fault) = check_block(block, height as u64, &prev) {
            return ChainCheck::FirstBadHeight {
                height: height as u64,
                fault,
            };
        }
        prev = block.block_hash;
    }
    ChainCheck::Ok
}

/// Validate serialized block files, where `files[h]` is the content stored
/// for height `h` (`None` when missing). Files must be canonical.
pub fn validate_block_files(files: &[Option<Vec<u8>>]) -> ChainCheck {
    let mut prev = Digest::ZERO;
    for (height, file) in files.iter().enumerate() {
        let height = height as u64;
        let fault = match file {
            None => Some(BlockFault::Missing),
            Some(bytes) => match from_canonical_slice::<Block>(bytes) {
                Ok(block) => match check_block(&block, height, &prev) {
                    Ok(()) => {
                        prev = block.block_hash;
                        None
                    }
                    Err(fault) => Some(fault),
                },
                Err(CanonicalError::NonCanonical) => Some(BlockFault::NonCanonical),
                Err(e) => Some(BlockFault::Unreadable(e.to_string())),
            },
        };
        if let Some(fault) = fault {
            return ChainCheck::FirstBadHeight { height, fault };
        }
    }
    ChainCheck::Ok
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub tx_id: Digest,
    #[serde(with = "crate::canonical::b64::option")]
    pub value: Option<Vec<u8>>,
    pub version: Version,
}

/// One channel's committed blocks plus the state derived from them.
#[derive(Clone, Debug)]
pub struct Chain {
    channel: String,
    blocks: Vec<Block>,
    state: WorldState,
    seen_tx_ids: HashSet<Digest>,
}

impl Chain {
    pub fn new(channel: &str) -> Self {
        Chain {
            channel: channel.to_string(),
            blocks: Vec::new(),
            state: WorldState::new(channel),
            seen_tx_ids: HashSet::new(),
        }
    }

    /// Rebuild a chain by appending `blocks` one by one.
    pub fn from_blocks(channel: &str, blocks: impl IntoIterator<Item = Block>) -> Result<Self, (u64, BlockFault)> {
        let mut chain = Chain::new(channel);
        for block in blocks {
            let height = chain.next_height();
            chain.append_block(block).map_err(|f| (height, f))?;
        }
        Ok(chain)
    }

    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Mutable state access, for fault-injection tests only.
    #[doc(hidden)]
    pub fn state_mut_for_tests(&mut self) -> &mut WorldState {
        &mut self.state
    }

    pub fn next_height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    /// Hash of the tip block, or zeros for an empty chain.
    pub fn tip_hash(&self) -> Digest {
        self.tip().map(|b| b.block_hash).unwrap_or(Digest::ZERO)
    }

    pub fn contains_tx(&self, tx_id: &Digest) -> bool {
        self.seen_tx_ids.contains(tx_id)
    }

    /// Append after checking linkage and recomputing the Merkle root and
    /// block hash; then apply the block's Valid write sets.
    pub fn append_block(&mut self, block: Block) -> Result<(), BlockFault> {
        check_block(&block, self.next_height(), &self.tip_hash())?;
        self.state.apply_block(&block);
        self.seen_tx_ids.extend(block.transactions.iter().map(|tx| tx.tx_id));
        self.blocks.push(block);
        Ok(())
    }

    pub fn get_state(&self, key: &str) -> Option<(&[u8], Version)> {
        self.state.get(key).map(|e| (e.value.as_slice(), e.version))
    }

    /// All Valid writes to `key`, in commit order.
    pub fn read_history(&self, key: &str) -> Vec<HistoryEntry> {
        let mut out = Vec::new();
        for block in &self.blocks {
            for (index, tx) in block.valid_transactions() {
                for w in tx.write_set.iter().filter(|w| w.key == key) {
                    out.push(HistoryEntry {
                        tx_id: tx.tx_id,
                        value: w.value.clone(),
                        version: Version::new(block.height, index),
                    });
                }
            }
        }
        out
    }

    /// Latest on-chain hash for a private data key; readable by everyone.
    pub fn private_hash(&self, collection: &str, key: &str) -> Option<Digest> {
        self.blocks
            .iter()
            .flat_map(|b| b.valid_transactions().map(|(_, tx)| tx))
            .flat_map(|tx| tx.private_hashes.iter())
            .filter(|p| p.collection == collection && p.key == key)
            .map(|p| p.hash)
            .last()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::tests::sample_tx;
    use crate::ledger::{ReadEntry, ValidationCode};

    fn build(n: usize) -> Vec<Block> {
        let mut blocks = Vec::new();
        let mut prev = Digest::ZERO;
        for h in 0..n {
            let tx = sample_tx(&[&h.to_string()], &[("k", Some(h.to_string().as_bytes()))]);
            let block = Block::seal(h as u64, prev, vec![tx], vec![ValidationCode::Valid]);
            prev = block.block_hash;
            blocks.push(block);
        }
        blocks
    }

    #[test]
    fn genesis_accepted() {
        let mut chain = Chain::new("main");
        chain.append_block(build(1).remove(0)).unwrap();
        assert_eq!(chain.next_height(), 1);
    }

    #[test]
    fn prev_hash_mismatch_rejected() {
        let blocks = build(2);
        let mut chain = Chain::new("main");
        chain.append_block(blocks[0].clone()).unwrap();
        let bad = Block::seal(
            1,
            Digest::of(b"other"),
            blocks[1].transactions.clone(),
            vec![ValidationCode::Valid],
        );
        assert_eq!(chain.append_block(bad), Err(BlockFault::PrevHashMismatch));
    }

    #[test]
    fn bad_merkle_root_rejected() {
        let mut block = build(1).remove(0);
        block.merkle_root = Digest::of(b"nope");
        assert_eq!(Chain::new("main").append_block(block), Err(BlockFault::BadMerkleRoot));
    }

    #[test]
    fn wrong_height_rejected() {
        let block = build(2).remove(1);
        assert!(matches!(
            Chain::new("main").append_block(block),
            Err(BlockFault::HeightMismatch { expected: 0, found: 1 })
        ));
    }

    #[test]
    fn untampered_chain_validates() {
        assert_eq!(validate_chain(&build(10)), ChainCheck::Ok);
    }

    #[test]
    fn interior_mutation_found_at_its_height() {
        let mut blocks = build(10);
        blocks[4].transactions[0].args[0].push('x');
        match validate_chain(&blocks) {
            ChainCheck::FirstBadHeight { height: 4, fault } => {
                assert!(matches!(fault, BlockFault::BadTxId { .. } | BlockFault::BadMerkleRoot))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wholesale_replacement_with_stale_prev_hash() {
        let mut blocks = build(10);
        let tx = sample_tx(&["forged"], &[("k", Some(b"evil"))]);
        blocks[7] = Block::seal(7, blocks[5].block_hash, vec![tx], vec![ValidationCode::Valid]);
        assert_eq!(
            validate_chain(&blocks),
            ChainCheck::FirstBadHeight {
                height: 7,
                fault: BlockFault::PrevHashMismatch
            }
        );
    }

    #[test]
    fn state_lookup_and_delete() {
        let mut blocks = build(3);
        let chain = Chain::from_blocks("main", blocks.clone()).unwrap();
        assert_eq!(chain.get_state("k"), Some((&b"2"[..], Version::new(2, 0))));
        assert_eq!(chain.get_state("unknown"), None);

        let del = sample_tx(&["del"], &[("k", None)]);
        blocks.push(Block::seal(
            3,
            blocks[2].block_hash,
            vec![del],
            vec![ValidationCode::Valid],
        ));
        let chain = Chain::from_blocks("main", blocks).unwrap();
        assert_eq!(chain.get_state("k"), None);
        let history = chain.read_history("k");
        assert_eq!(history.len(), 4);
        assert_eq!(history.last().unwrap().value, None);
    }

    #[test]
    fn invalid_writes_excluded_from_history() {
        let mut tx = sample_tx(&["x"], &[("only-invalid", Some(b"v"))]);
        tx.read_set.push(ReadEntry {
            key: "only-invalid".into(),
            version: None,
        });
        let block = Block::seal(0, Digest::ZERO, vec![tx], vec![ValidationCode::MvccConflict]);
        let chain = Chain::from_blocks("main", [block]).unwrap();
        assert!(chain.read_history("only-invalid").is_empty());
        assert!(chain.read_history("never").is_empty());
        assert_eq!(chain.get_state("only-invalid"), None);
    }

    #[test]
    fn history_written_twice_in_height_order() {
        let chain = Chain::from_blocks("main", build(2)).unwrap();
        let h = chain.read_history("k");
        assert_eq!(h.len(), 2);
        assert!(h[0].version < h[1].version);
    }

    #[test]
    fn block_files_must_be_canonical() {
        let blocks = build(3);
        let mut files: Vec<Option<Vec<u8>>> = blocks
            .iter()
            .map(|b| Some(crate::canonical::to_canonical(b).unwrap()))
            .collect();
        assert_eq!(validate_block_files(&files), ChainCheck::Ok);
        // uppercase a hex digit of prev_hash in block 2: same bytes if decoded
        // leniently, so only the canonical check can catch it
        let text = String::from_utf8(files[2].clone().unwrap()).unwrap();
        let hex = blocks[2].prev_hash.to_hex();
        let pos = hex.find(|c: char| c.is_ascii_alphabetic()).unwrap();
        let mut upper = hex.clone();
        upper.replace_range(pos..=pos, &hex[pos..=pos].to_uppercase());
        files[2] = Some(text.replace(&hex, &upper).into_bytes());
        assert!(matches!(
            validate_block_files(&files),
            ChainCheck::FirstBadHeight { height: 2, .. }
        ));
        files[1] = None;
        assert_eq!(
            validate_block_files(&files),
            ChainCheck::FirstBadHeight {
                height: 1,
                fault: BlockFault::Missing
            }
        );
    }
}
