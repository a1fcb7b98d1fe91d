//! Execute-order-validate: endorsement, block cutting, MVCC validation and
//! the peers that hold channel replicas.

mod channel;
mod commit;
mod endorse;
mod network;
mod orderer;
pub(crate) mod peer;
mod policy;
mod simnet;

pub use channel::{catch_up, create_channel, join_channel, ChannelError};
pub use commit::{validate_and_commit, validate_transactions, BlockProposal, CommitError};
pub use endorse::{endorse_proposal, EndorseError, EndorsedTransaction};
pub use network::{channel_config_for, generate_materials, Network, NetworkConfig, NetworkError, TxOutcome};
pub use orderer::{cut_blocks, BlockCutConfig, OrderError, Orderer, PendingTx};
pub use peer::{Peer, Replica};
pub use policy::{evaluate_policy, EndorsementPolicy, PolicyError};
pub use simnet::{run_simnet, EventKind, Partition, Ratio, SimError, SimEvent, SimNetConfig, SimOutcome, WorkItem};
