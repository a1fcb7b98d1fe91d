//! Contract runtime: packages, the install/init/invoke/query lifecycle and
//! the invocation context that records read/write sets.
//!
//! Contracts are natively registered Rust types implementing [`Contract`].
//! Execution is a pure function of (function, args, state snapshot), which
//! is what lets several peers endorse the same proposal independently.

mod attestation;
mod context;
mod deployment;
mod lifecycle;
mod provenance;
mod runtime;

pub use attestation::{attestation_key, AttestationContract, ScanAttestation, REPORTS_COLLECTION};
pub use context::{InvocationContext, PrivateValue};
pub use deployment::{deployment_key, DeploymentContract, DeploymentRecord, DEPLOY_PREFIX};
pub use lifecycle::{
    lifecycle_key, ChannelConfig, LifecycleContract, LifecycleRecord, CHANNEL_CONFIG_KEY, CONFIG_CONTRACT,
    LIFECYCLE_CONTRACT,
};
pub use provenance::{artifact_key, ArtifactRecord, ArtifactStatus, ProvenanceContract, VerifyResult, ARTIFACT_PREFIX};
pub(crate) use runtime::require;
pub use runtime::{install_contract, invoke_contract, query_contract, TransactionProposal};

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{canonical_hash, Digest};
use crate::identity::Action;

/// Errors raised from inside a contract function body.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ContractError {
    #[error("artifact {0} already registered with different metadata")]
    DuplicateArtifact(String),
    #[error("malformed digest {0:?}: expected 64 lowercase hex characters")]
    MalformedDigest(String),
    #[error("artifact {0} is not registered")]
    UnknownArtifact(String),
    #[error("artifact {0} has no passing scan attestation")]
    NoPassingAttestation(String),
    #[error("contract {0} already initialized at this version")]
    AlreadyInitialized(String),
    #[error("verdict does not follow from score, threshold and unverified count")]
    InconsistentVerdict,
    #[error("collection {0:?} is not declared on this channel")]
    UnknownCollection(String),
    #[error("bad arguments: {0}")]
    BadArguments(String),
}

#[derive(Debug, Error)]
pub enum ChaincodeError {
    #[error("{identity} ({role}) may not perform {action}")]
    PermissionDenied {
        identity: String,
        role: crate::identity::Role,
        action: Action,
    },
    #[error("contract {name} v{version} already installed with a different function list")]
    VersionConflict { name: String, version: String },
    #[error("contract {0} is not installed on every endorsing peer")]
    NotInstalled(String),
    #[error("contract {0} already initialized at this version")]
    AlreadyInitialized(String),
    #[error("contract {0} is not initialized on this channel")]
    UnknownContract(String),
    #[error("contract {contract} has no function {function}")]
    UnknownFunction { contract: String, function: String },
    #[error("peer has not joined channel {0}")]
    UnknownChannel(String),
    #[error("creator {0} is not a known identity")]
    UnknownCreator(Digest),
    #[error("read-only function {contract}.{function} attempted a write")]
    WriteInReadOnly { contract: String, function: String },
    #[error("contract error: {0}")]
    Contract(#[from] ContractError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FunctionSpec {
    pub name: &'static str,
    pub read_only: bool,
}

impl FunctionSpec {
    pub const fn write(name: &'static str) -> Self {
        FunctionSpec { name, read_only: false }
    }

    pub const fn read(name: &'static str) -> Self {
        FunctionSpec { name, read_only: true }
    }
}

pub trait Contract: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    fn functions(&self) -> &[FunctionSpec];
    fn call(&self, function: &str, args: &[String], ctx: &mut InvocationContext<'_>) -> Result<Vec<u8>, ContractError>;

    fn function(&self, name: &str) -> Option<FunctionSpec> {
        self.functions().iter().copied().find(|f| f.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractPackage {
    pub name: String,
    pub version: String,
    pub package_id: Digest,
    pub functions: BTreeSet<String>,
}

#[derive(Serialize)]
struct PackageIdInput<'a> {
    name: &'a str,
    version: &'a str,
    functions: &'a BTreeSet<String>,
}

impl ContractPackage {
    pub fn new(name: &str, version: &str, functions: BTreeSet<String>) -> Self {
        let package_id = Self::compute_id(name, version, &functions);
        ContractPackage {
            name: name.to_string(),
            version: version.to_string(),
            package_id,
            functions,
        }
    }

    pub fn of(contract: &dyn Contract) -> Self {
        let functions = contract.functions().iter().map(|f| f.name.to_string()).collect();
        Self::new(contract.name(), contract.version(), functions)
    }

    fn compute_id(name: &str, version: &str, functions: &BTreeSet<String>) -> Digest {
        canonical_hash(&PackageIdInput {
            name,
            version,
            functions,
        })
        .expect("package encodes canonically")
    }

    pub fn id_is_consistent(&self) -> bool {
        Self::compute_id(&self.name, &self.version, &self.functions) == self.package_id
    }
}

/// The three contracts that enforce the build → scan → deploy workflow.
pub fn builtin_contracts() -> Vec<Arc<dyn Contract>> {
    vec![
        Arc::new(ProvenanceContract),
        Arc::new(AttestationContract),
        Arc::new(DeploymentContract),
    ]
}

pub(crate) fn parse_digest_arg(text: &str) -> Result<Digest, ContractError> {
    Digest::from_hex(text).ok_or_else(|| ContractError::MalformedDigest(text.to_string()))
}

pub(crate) fn expect_args<'a, const N: usize>(
    args: &'a [String],
    names: [&str; N],
) -> Result<[&'a str; N], ContractError> {
    if args.len() != N {
        return Err(ContractError::BadArguments(format!(
            "expected {N} arguments ({}), got {}",
            names.join(", "),
            args.len()
        )));
    }
    Ok(std::array::from_fn(|i| args[i].as_str()))
}
