use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::BlockProposal;
use crate::canonical::Digest;
use crate::identity::{check_permission, AclPolicy, Action, Identity};
use crate::ledger::Transaction;

/// When the orderer closes a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockCutConfig {
    /// At least 1.
    pub max_tx_per_block: usize,
    /// Simulated milliseconds a transaction may wait for company.
    pub max_wait_ms: u64,
}

impl Default for BlockCutConfig {
    fn default() -> Self {
        BlockCutConfig {
            max_tx_per_block: 10,
            max_wait_ms: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingTx {
    pub tx: Transaction,
    pub arrived_at: u64,
}

/// Greedy batching of `pending` (in arrival order): full blocks of
/// `max_tx_per_block`, then the remainder if its oldest member has waited
/// `max_wait_ms` by `clock`. Uncut transactions are the suffix not covered
/// by the returned batches.
pub fn cut_blocks(pending: &[PendingTx], config: &BlockCutConfig, clock: u64) -> Vec<Vec<Transaction>> {
    let max = config.max_tx_per_block.max(1);
    let mut batches: Vec<Vec<Transaction>> = Vec::new();
    let mut chunks = pending.chunks(max).peekable();
    while let Some(chunk) = chunks.next() {
        let is_tail = chunks.peek().is_none();
        let timed_out = clock.saturating_sub(chunk[0].arrived_at) >= config.max_wait_ms;
        if chunk.len() == max || (is_tail && timed_out) {
            batches.push(chunk.iter().map(|p| p.tx.clone()).collect());
        }
    }
    batches
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderError {
    #[error("{0} may not order transactions")]
    PermissionDenied(String),
    #[error("transaction {0} is malformed (tx_id or write set)")]
    Malformed(Digest),
    #[error("transaction for channel {found} sent to orderer of {expected}")]
    WrongChannel { expected: String, found: String },
}

/// Single ordering node for one channel. Assigns heights and order; does not
/// validate contents beyond well-formedness.
#[derive(Clone, Debug)]
pub struct Orderer {
    name: String,
    channel: String,
    config: BlockCutConfig,
    next_height: u64,
    pending: Vec<PendingTx>,
}

impl Orderer {
    pub fn new(
        identity: &Identity,
        acl: &AclPolicy,
        channel: &str,
        next_height: u64,
        config: BlockCutConfig,
    ) -> Result<Self, OrderError> {
        if !check_permission(acl, identity, Action::Order).is_allowed() {
            return Err(OrderError::PermissionDenied(identity.common_name.clone()));
        }
        Ok(Orderer {
            name: identity.common_name.clone(),
            channel: channel.to_string(),
            config,
            next_height,
            pending: Vec::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &BlockCutConfig {
        &self.config
    }

    pub fn next_height(&self) -> u64 {
        self.next_height
    }

    pub fn pending(&self) -> &[PendingTx] {
        &self.pending
    }

    pub fn broadcast(&mut self, tx: Transaction, now: u64) -> Result<(), OrderError> {
        if tx.channel != self.channel {
            return Err(OrderError::WrongChannel {
                expected: self.channel.clone(),
                found: tx.channel,
            });
        }
        if !tx.is_well_formed() {
            return Err(OrderError::Malformed(tx.tx_id));
        }
        self.pending.push(PendingTx { tx, arrived_at: now });
        Ok(())
    }

    /// Time at which the pending tail times out, if anything is pending.
    pub fn deadline(&self) -> Option<u64> {
        let max = self.config.max_tx_per_block.max(1);
        let tail_start = (self.pending.len() / max) * max;
        self.pending
            .get(tail_start)
            .map(|p| p.arrived_at + self.config.max_wait_ms)
    }

    pub fn cut(&mut self, now: u64) -> Vec<BlockProposal> {
        let batches = cut_blocks(&self.pending, &self.config, now);
        self.emit(batches)
    }

    /// Cut everything pending regardless of the timer.
    pub fn flush(&mut self) -> Vec<BlockProposal> {
        let batches = cut_blocks(&self.pending, &self.config, u64::MAX);
        self.emit(batches)
    }

    fn emit(&mut self, batches: Vec<Vec<Transaction>>) -> Vec<BlockProposal> {
        let taken: usize = batches.iter().map(Vec::len).sum();
        self.pending.drain(..taken);
        batches
            .into_iter()
            .map(|transactions| {
                let height = self.next_height;
                self.next_height += 1;
                BlockProposal {
                    channel: self.channel.clone(),
                    height,
                    transactions,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::tests::sample_tx;

    fn pending(n: usize, arrived_at: u64) -> Vec<PendingTx> {
        (0..n)
            .map(|i| PendingTx {
                tx: sample_tx(&[&i.to_string()], &[]),
                arrived_at,
            })
            .collect()
    }

    fn sizes(batches: &[Vec<Transaction>]) -> Vec<usize> {
        batches.iter().map(Vec::len).collect()
    }

    #[test]
    fn greedy_cut_without_timeout() {
        let cfg = BlockCutConfig {
            max_tx_per_block: 2,
            max_wait_ms: 0,
        };
        assert_eq!(sizes(&cut_blocks(&pending(5, 0), &cfg, 0)), vec![2, 2, 1]);
    }

    #[test]
    fn tail_waits_for_timer() {
        let cfg = BlockCutConfig {
            max_tx_per_block: 10,
            max_wait_ms: 500,
        };
        let p = pending(1, 0);
        assert!(cut_blocks(&p, &cfg, 499).is_empty());
        assert_eq!(sizes(&cut_blocks(&p, &cfg, 500)), vec![1]);
        assert!(cut_blocks(&[], &cfg, 10_000).is_empty());
    }

    #[test]
    fn order_preserved() {
        let cfg = BlockCutConfig {
            max_tx_per_block: 3,
            max_wait_ms: 0,
        };
        let p = pending(7, 0);
        let flat: Vec<Digest> = cut_blocks(&p, &cfg, 0).concat().iter().map(|t| t.tx_id).collect();
        let want: Vec<Digest> = p.iter().map(|t| t.tx.tx_id).collect();
        assert_eq!(flat, want);
    }
}
