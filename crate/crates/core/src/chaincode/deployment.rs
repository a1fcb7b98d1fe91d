use serde::{Deserialize, Serialize};

use super::attestation::latest;
use super::provenance::{encode, lookup};
use super::{expect_args, parse_digest_arg, Contract, ContractError, FunctionSpec, InvocationContext};
use crate::canonical::Digest;
use crate::identity::KeyId;
use crate::vulnscan::Verdict;

pub const DEPLOY_PREFIX: &str = "deploy/";

pub fn deployment_key(environment: &str, container_name: &str) -> String {
    format!("{DEPLOY_PREFIX}{environment}/{container_name}")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentRecord {
    pub artifact_digest: Digest,
    pub environment: String,
    pub container_name: String,
    pub deployer: KeyId,
    /// Sequence number of the Pass attestation that admitted this deploy.
    pub attestation_seq: u64,
}

pub struct DeploymentContract;

const FUNCTIONS: &[FunctionSpec] = &[FunctionSpec::write("record"), FunctionSpec::read("status")];

fn check_segment(name: &str, value: &str) -> Result<(), ContractError> {
    if value.is_empty() || value.contains('/') {
        return Err(ContractError::BadArguments(format!(
            "{name} must be nonempty and contain no '/'"
        )));
    }
    Ok(())
}

impl Contract for DeploymentContract {
    fn name(&self) -> &str {
        "deployment"
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
                let [digest, environment, container] = expect_args(args, ["digest", "environment", "container_name"])?;
                let digest = parse_digest_arg(digest)?;
                check_segment("environment", environment)?;
                check_segment("container_name", container)?;
                if lookup(ctx, &digest).is_none() {
                    return Err(ContractError::UnknownArtifact(digest.to_hex()));
                }
                let attestation = match latest(ctx, &digest).0 {
                    Some(a) if a.verdict == Verdict::Pass => a,
                    _ => return Err(ContractError::NoPassingAttestation(digest.to_hex())),
                };
                let record = DeploymentRecord {
                    artifact_digest: digest,
                    environment: environment.to_string(),
                    container_name: container.to_string(),
                    deployer: ctx.creator().key_id,
                    attestation_seq: attestation.seq,
                };
                let bytes = encode(&record);
                ctx.put_state(&deployment_key(environment, container), bytes.clone());
                Ok(bytes)
            }
            "status" => {
                // status(env) lists every container; status(env, name) one
                let (environment, container) = match args {
                    [env] => (env.as_str(), None),
                    [env, name] => (env.as_str(), Some(name.as_str())),
                    _ => {
                        return Err(ContractError::BadArguments(
                            "expected environment [container_name]".into(),
                        ))
                    }
                };
                check_segment("environment", environment)?;
                let records: Vec<DeploymentRecord> = match container {
                    Some(name) => ctx
                        .get_state(&deployment_key(environment, name))
                        .and_then(|b| serde_json::from_slice(&b).ok())
                        .into_iter()
                        .collect(),
                    None => ctx
                        .scan_prefix(&format!("{DEPLOY_PREFIX}{environment}/"))
                        .into_iter()
                        .filter_map(|(_, b)| serde_json::from_slice(&b).ok())
                        .collect(),
                };
                Ok(encode(&records))
            }
            other => Err(ContractError::BadArguments(format!("no function {other}"))),
        }
    }
}
