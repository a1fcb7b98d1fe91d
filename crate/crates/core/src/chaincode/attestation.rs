use serde::{Deserialize, Serialize};

use super::provenance::{encode, lookup};
use super::{expect_args, parse_digest_arg, Contract, ContractError, FunctionSpec, InvocationContext};
use crate::canonical::Digest;
use crate::identity::KeyId;
use crate::vulnscan::Verdict;

/// Private collection holding full scan report bodies.
pub const REPORTS_COLLECTION: &str = "reports";

pub fn attestation_key(digest: &Digest, seq: u64) -> String {
    format!("attest/{digest}/{seq}")
}

/// Outcome of a dependency scan bound to an artifact. Scores are CVSS
/// base scores in tenths (0..=100).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanAttestation {
    pub artifact_digest: Digest,
    pub seq: u64,
    pub report_hash: Digest,
    pub max_score: u8,
    pub threshold: u8,
    pub unverified_sources: u32,
    pub verdict: Verdict,
    pub scanner: KeyId,
}

impl ScanAttestation {
    pub fn verdict_is_consistent(&self) -> bool {
        let halt = self.max_score >= self.threshold || self.unverified_sources > 0;
        (self.verdict == Verdict::Halt) == halt
    }
}

/// Highest-sequence attestation for `digest`, probing keys in order so that
/// every probe (including the first absent one) lands in the read set.
pub(crate) fn latest(ctx: &mut InvocationContext<'_>, digest: &Digest) -> (Option<ScanAttestation>, u64) {
    let mut latest = None;
    let mut seq = 0;
    while let Some(bytes) = ctx.get_state(&attestation_key(digest, seq)) {
        latest = serde_json::from_slice(&bytes).ok();
        seq += 1;
    }
    (latest, seq)
}

fn parse_tenths(name: &str, text: &str) -> Result<u8, ContractError> {
    match text.parse::<u8>() {
        Ok(v) if v <= 100 => Ok(v),
        _ => Err(ContractError::BadArguments(format!(
            "{name} must be an integer 0..=100, got {text:?}"
        ))),
    }
}

pub struct AttestationContract;

const FUNCTIONS: &[FunctionSpec] = &[FunctionSpec::write("record"), FunctionSpec::read("latest")];

impl Contract for AttestationContract {
    fn name(&self) -> &str {
        "attestation"
    }

    fn version(&self) -> &str {
        "1"
    }

    fn functions(&self) -> &[FunctionSpec] {
        FUNCTIONS
    }

    fn call(&self, function: &str, args: &[String], ctx: &mut InvocationContext<'_>) -> Result<Vec<u8>, ContractError> {
        match function {
            "record" => {
                // an optional seventh argument carries the report body, kept
                // in the private collection
                let (fixed, body) = match args.len() {
                    6 => (args, None),
                    7 => (&args[..6], Some(args[6].as_bytes().to_vec())),
                    _ => (args, None),
                };
                let [digest, report_hash, max_score, threshold, unverified, verdict] = expect_args(
                    fixed,
                    [
                        "digest",
                        "report_hash",
                        "max_score",
                        "threshold",
                        "unverified_sources",
                        "verdict",
                    ],
                )?;
                let digest = parse_digest_arg(digest)?;
                let report_hash = parse_digest_arg(report_hash)?;
                let max_score = parse_tenths("max_score", max_score)?;
                let threshold = parse_tenths("threshold", threshold)?;
                let unverified_sources: u32 = unverified
                    .parse()
                    .map_err(|_| ContractError::BadArguments(format!("bad unverified count {unverified:?}")))?;
                let verdict: Verdict = verdict
                    .parse()
                    .map_err(|_| ContractError::BadArguments(format!("bad verdict {verdict:?}")))?;
                if lookup(ctx, &digest).is_none() {
                    return Err(ContractError::UnknownArtifact(digest.to_hex()));
                }
                let (_, seq) = latest(ctx, &digest);
                let attestation = ScanAttestation {
                    artifact_digest: digest,
                    seq,
                    report_hash,
                    max_score,
                    threshold,
                    unverified_sources,
                    verdict,
                    scanner: ctx.creator().key_id,
                };
                if !attestation.verdict_is_consistent() {
                    return Err(ContractError::InconsistentVerdict);
                }
                if let Some(body) = body {
                    ctx.put_private(REPORTS_COLLECTION, &format!("{digest}/{seq}"), body)?;
                }
                let bytes = encode(&attestation);
                ctx.put_state(&attestation_key(&digest, seq), bytes.clone());
                Ok(bytes)
            }
            "latest" => {
                let [digest] = expect_args(args, ["digest"])?;
                let digest = parse_digest_arg(digest)?;
                let (latest, _) = latest(ctx, &digest);
                Ok(encode(&latest))
            }
            other => Err(ContractError::BadArguments(format!("no function {other}"))),
        }
    }
}
