use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::provenance::encode;
use super::{expect_args, parse_digest_arg, Contract, ContractError, FunctionSpec, InvocationContext};
use crate::canonical::Digest;
use crate::ledger::WorldState;
use crate::ordering::EndorsementPolicy;

/// System contract that activates packages on a channel.
pub const LIFECYCLE_CONTRACT: &str = "_lifecycle";
/// Pseudo-contract of the genesis configuration transaction.
pub const CONFIG_CONTRACT: &str = "_config";
pub const CHANNEL_CONFIG_KEY: &str = "config/channel";

pub fn lifecycle_key(contract: &str) -> String {
    format!("lifecycle/{contract}")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifecycleRecord {
    pub name: String,
    pub version: String,
    pub package_id: Digest,
    pub endorsement_policy: EndorsementPolicy,
}

impl LifecycleRecord {
    pub fn load(state: &WorldState, contract: &str) -> Option<Self> {
        state
            .get_value(&lifecycle_key(contract))
            .and_then(|b| serde_json::from_slice(b).ok())
    }
}

/// Channel configuration written by the genesis block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub name: String,
    pub orgs: BTreeSet<String>,
    /// Policy for `_lifecycle` transactions.
    pub lifecycle_policy: EndorsementPolicy,
    /// Private collection name → orgs allowed to read it.
    pub collections: BTreeMap<String, BTreeSet<String>>,
}

impl ChannelConfig {
    pub fn load(state: &WorldState) -> Option<Self> {
        state
            .get_value(CHANNEL_CONFIG_KEY)
            .and_then(|b| serde_json::from_slice(b).ok())
    }
}

pub struct LifecycleContract;

const FUNCTIONS: &[FunctionSpec] = &[FunctionSpec::write("init")];

impl Contract for LifecycleContract {
    fn name(&self) -> &str {
        LIFECYCLE_CONTRACT
    }

    fn version(&self) -> &str {
        "1"
    }

    fn functions(&self) -> &[FunctionSpec] {
        FUNCTIONS
    }

    fn call(&self, function: &str, args: &[String], ctx: &mut InvocationContext<'_>) -> Result<Vec<u8>, ContractError> {
        if function != "init" {
            return Err(ContractError::BadArguments(format!("no function {function}")));
        }
        let [name, version, package_id, policy] = expect_args(args, ["name", "version", "package_id", "policy"])?;
        let package_id = parse_digest_arg(package_id)?;
        let endorsement_policy: EndorsementPolicy =
            serde_json::from_str(policy).map_err(|e| ContractError::BadArguments(format!("bad policy: {e}")))?;
        endorsement_policy
            .check()
            .map_err(|e| ContractError::BadArguments(format!("bad policy: {e}")))?;
        let key = lifecycle_key(name);
        if let Some(existing) = ctx.get_state(&key) {
            let existing: LifecycleRecord = serde_json::from_slice(&existing)
                .map_err(|e| ContractError::BadArguments(format!("corrupt lifecycle record: {e}")))?;
            if existing.version == version {
                return Err(ContractError::AlreadyInitialized(name.to_string()));
            }
        }
        let record = LifecycleRecord {
            name: name.to_string(),
            version: version.to_string(),
            package_id,
            endorsement_policy,
        };
        let bytes = encode(&record);
        ctx.put_state(&key, bytes.clone());
        Ok(bytes)
    }
}
