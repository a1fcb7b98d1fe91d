use serde::{Deserialize, Serialize};

use super::{expect_args, parse_digest_arg, Contract, ContractError, FunctionSpec, InvocationContext};
use crate::canonical::{to_canonical, Digest};
use crate::identity::KeyId;
use crate::ledger::Version;

pub const ARTIFACT_PREFIX: &str = "artifact/";

pub fn artifact_key(digest: &Digest) -> String {
    format!("{ARTIFACT_PREFIX}{digest}")
}

/// What is stored at `artifact/<digest>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredArtifact {
    digest: Digest,
    name: String,
    tag: String,
    source_digest: Digest,
    builder: KeyId,
}

/// A registered build output. `registered_at` is the version of the
/// committing transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub digest: Digest,
    pub name: String,
    pub tag: String,
    pub source_digest: Digest,
    pub builder: KeyId,
    pub registered_at: Version,
}

impl ArtifactRecord {
    fn from_stored(stored: StoredArtifact, registered_at: Version) -> Self {
        ArtifactRecord {
            digest: stored.digest,
            name: stored.name,
            tag: stored.tag,
            source_digest: stored.source_digest,
            builder: stored.builder,
            registered_at,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArtifactStatus {
    Registered,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub status: ArtifactStatus,
    pub record: Option<ArtifactRecord>,
}

#[derive(Serialize)]
struct HistoryRow {
    tx_id: Digest,
    version: Version,
    record: Option<StoredArtifact>,
}

/// Look up a registered artifact from inside another contract.
pub(crate) fn lookup(ctx: &mut InvocationContext<'_>, digest: &Digest) -> Option<ArtifactRecord> {
    let key = artifact_key(digest);
    let bytes = ctx.get_state(&key)?;
    let stored: StoredArtifact = serde_json::from_slice(&bytes).ok()?;
    // own writes carry no committed version yet
    let version = ctx.version_of(&key).unwrap_or(Version::new(u64::MAX, u32::MAX));
    Some(ArtifactRecord::from_stored(stored, version))
}

pub struct ProvenanceContract;

const FUNCTIONS: &[FunctionSpec] = &[
    FunctionSpec::write("register"),
    FunctionSpec::read("verify"),
    FunctionSpec::read("history"),
];

impl Contract for ProvenanceContract {
    fn name(&self) -> &str {
        "provenance"
    }

    fn version(&self) -> &str {
        "1"
    }

    fn functions(&self) -> &[FunctionSpec] {
        FUNCTIONS
    }

    fn call(&self, function: &str, args: &[String], ctx: &mut InvocationContext<'_>) -> Result<Vec<u8>, ContractError> {
        match function {
            "register" => {
                let [digest, name, tag, source] = expect_args(args, ["digest", "name", "tag", "source_digest"])?;
                let digest = parse_digest_arg(digest)?;
                let source_digest = parse_digest_arg(source)?;
                if name.is_empty() || tag.is_empty() {
                    return Err(ContractError::BadArguments("name and tag must be nonempty".into()));
                }
                let key = artifact_key(&digest);
                if let Some(existing) = ctx.get_state(&key) {
                    let existing: StoredArtifact = serde_json::from_slice(&existing)
                        .map_err(|e| ContractError::BadArguments(format!("corrupt record: {e}")))?;
                    if existing.name == name && existing.tag == tag && existing.source_digest == source_digest {
                        return Ok(encode(&existing));
                    }
                    return Err(ContractError::DuplicateArtifact(digest.to_hex()));
                }
                let stored = StoredArtifact {
                    digest,
                    name: name.to_string(),
                    tag: tag.to_string(),
                    source_digest,
                    builder: ctx.creator().key_id,
                };
                let bytes = encode(&stored);
                ctx.put_state(&key, bytes.clone());
                Ok(bytes)
            }
            "verify" => {
                let [digest] = expect_args(args, ["digest"])?;
                let digest = parse_digest_arg(digest)?;
                let record = lookup(ctx, &digest);
                let status = if record.is_some() {
                    ArtifactStatus::Registered
                } else {
                    ArtifactStatus::Unknown
                };
                Ok(encode(&VerifyResult { status, record }))
            }
            "history" => {
                let [digest] = expect_args(args, ["digest"])?;
                let digest = parse_digest_arg(digest)?;
                let rows: Vec<HistoryRow> = ctx
                    .history(&artifact_key(&digest))
                    .into_iter()
                    .map(|h| HistoryRow {
                        tx_id: h.tx_id,
                        version: h.version,
                        record: h.value.and_then(|v| serde_json::from_slice(&v).ok()),
                    })
                    .collect();
                Ok(encode(&rows))
            }
            other => Err(ContractError::BadArguments(format!("no function {other}"))),
        }
    }
}

pub(crate) fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    to_canonical(value).expect("contract values encode canonically")
}
