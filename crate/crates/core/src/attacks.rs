//! Scripted attacks against copies of a deployed workspace. Each kind pairs
//! one on-disk or on-ledger injection with the detector expected to catch it.
//!
//! Denial of service and information disclosure have no scenario.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{from_canonical_slice, to_canonical, Digest};
use crate::chaincode::{invoke_contract, ArtifactStatus, ChaincodeError, LifecycleRecord, VerifyResult};
use crate::identity::{generate_org_materials, Role};
use crate::ledger::{ChainCheck, Endorsement, ValidationCode};
use crate::ordering::{endorse_proposal, EndorsementPolicy, Network, NetworkError};
use crate::pipeline::{
    load_run, read_allowlist, stage_depcheck, stage_deploy, DepCheckInput, LedgerHome, Overall, PackagedImage,
    PipelineRun, StageError, StageKind, StageStatus, RUNS_DIR,
};
use crate::vulnscan::{load_feed, load_manifest, match_predicate, CpeMatch, ScanReport, Verdict};

pub const ATTACK_REPORT: &str = "attack-report.json";

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("workspace not ready: {0}")]
    WorkspaceNotReady(String),
    #[error("i/o error on {path}: {detail}")]
    Io { path: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AttackError + '_ {
    move |e| AttackError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    ArtifactTamper,
    LedgerRewrite,
    UnauthorizedInvoke,
    ReplayTransaction,
    DependencyDowngrade,
    EndorsementForgery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stride {
    Spoofing,
    Tampering,
    Repudiation,
    InformationDisclosure,
    DenialOfService,
    ElevationOfPrivilege,
}

impl Stride {
    pub const ALL: [Stride; 6] = [
        Stride::Spoofing,
        Stride::Tampering,
        Stride::Repudiation,
        Stride::InformationDisclosure,
        Stride::DenialOfService,
        Stride::ElevationOfPrivilege,
    ];
}

/// Which detector should fire and the error or flag it should report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedDetection {
    pub detector: String,
    pub signal: String,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::ArtifactTamper,
        AttackKind::LedgerRewrite,
        AttackKind::UnauthorizedInvoke,
        AttackKind::ReplayTransaction,
        AttackKind::DependencyDowngrade,
        AttackKind::EndorsementForgery,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::ArtifactTamper => "ArtifactTamper",
            AttackKind::LedgerRewrite => "LedgerRewrite",
            AttackKind::UnauthorizedInvoke => "UnauthorizedInvoke",
            AttackKind::ReplayTransaction => "ReplayTransaction",
            AttackKind::DependencyDowngrade => "DependencyDowngrade",
            AttackKind::EndorsementForgery => "EndorsementForgery",
        }
    }

    pub fn stride(self) -> Stride {
        match self {
            AttackKind::ArtifactTamper | AttackKind::LedgerRewrite | AttackKind::DependencyDowngrade => {
                Stride::Tampering
            }
            AttackKind::UnauthorizedInvoke => Stride::ElevationOfPrivilege,
            AttackKind::ReplayTransaction | AttackKind::EndorsementForgery => Stride::Spoofing,
        }
    }

    pub fn expected_detection(self) -> ExpectedDetection {
        let (detector, signal) = match self {
            AttackKind::ArtifactTamper => ("stage_deploy", "DigestMismatch"),
            AttackKind::LedgerRewrite => ("validate_chain", "FirstBadHeight"),
            AttackKind::UnauthorizedInvoke => ("init_contract", "PermissionDenied"),
            AttackKind::ReplayTransaction => ("commit validation", "DuplicateTxId"),
            AttackKind::DependencyDowngrade => ("dependency gate", "Halt"),
            AttackKind::EndorsementForgery => ("commit validation", "BadSignature+PolicyFail"),
        };
        ExpectedDetection {
            detector: detector.to_string(),
            signal: signal.to_string(),
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    /// Accepts the variant name in any case, with or without `-`/`_`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .map(|c| c.to_ascii_lowercase())
            .collect();
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == folded)
            .ok_or_else(|| format!("unknown attack kind {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub kind: AttackKind,
    pub seed: u64,
    pub stride: Stride,
    pub expected_detection: ExpectedDetection,
}

impl AttackScenario {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        AttackScenario {
            kind,
            seed,
            stride: kind.stride(),
            expected_detection: kind.expected_detection(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioOutcome {
    Detected(String),
    Missed(String),
}

impl ScenarioOutcome {
    pub fn is_detected(&self) -> bool {
        matches!(self, ScenarioOutcome::Detected(_))
    }

    fn detail(&self) -> &str {
        match self {
            ScenarioOutcome::Detected(d) | ScenarioOutcome::Missed(d) => d,
        }
    }
}

/// SHA-256(base_seed ‖ kind ‖ index), first eight bytes big-endian.
pub fn derive_seed(base_seed: u64, kind: AttackKind, index: u32) -> u64 {
    let mut input = base_seed.to_be_bytes().to_vec();
    input.extend_from_slice(kind.name().as_bytes());
    input.extend_from_slice(&index.to_be_bytes());
    let digest = Digest::of(&input);
    u64::from_be_bytes(digest.as_bytes()[..8].try_into().expect("eight bytes"))
}

/// What a scenario needs from the workspace's latest successful run.
struct Target {
    run: PipelineRun,
    image: PackagedImage,
    report_path: String,
    manifest: String,
    feed: String,
    allowlist: String,
    threshold: u8,
    home: PathBuf,
}

impl Target {
    fn home(&self, workspace: &Path) -> LedgerHome {
        LedgerHome::new(workspace.join(&self.home))
    }

    fn report(&self, workspace: &Path) -> Result<ScanReport, AttackError> {
        let path = workspace.join(&self.report_path);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        from_canonical_slice(&bytes).map_err(|e| not_ready(format!("scan report {}: {e}", self.report_path)))
    }

    fn open(&self, workspace: &Path) -> Result<Network, AttackError> {
        self.home(workspace)
            .open()
            .map_err(|e| not_ready(format!("ledger does not open: {e}")))
    }
}

fn not_ready(detail: impl Into<String>) -> AttackError {
    AttackError::WorkspaceNotReady(detail.into())
}

fn stage_outputs(run: &PipelineRun, kind: StageKind) -> Result<&BTreeMap<String, String>, AttackError> {
    run.stage_results
        .iter()
        .find(|r| r.kind == kind && r.status == StageStatus::Success)
        .map(|r| &r.outputs)
        .ok_or_else(|| not_ready(format!("{} has no successful {kind:?} stage", run.run_id)))
}

fn output(outputs: &BTreeMap<String, String>, key: &str) -> Result<String, AttackError> {
    outputs
        .get(key)
        .cloned()
        .ok_or_else(|| not_ready(format!("stage output {key} missing")))
}

/// The newest run that deployed successfully.
fn load_target(workspace: &Path) -> Result<Target, AttackError> {
    let runs = workspace.join(RUNS_DIR);
    let mut ids: Vec<String> = match fs::read_dir(&runs) {
        Ok(entries) => entries
            .filter_map(Result::ok)
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect(),
        Err(_) => Vec::new(),
    };
    ids.sort();
    let run = ids
        .iter()
        .rev()
        .filter_map(|id| load_run(workspace, id).ok())
        .find(|run| {
            run.overall == Overall::Success
                && run
                    .stage_results
                    .iter()
                    .any(|r| r.kind == StageKind::Deploy && r.status == StageStatus::Success)
        })
        .ok_or_else(|| not_ready("no completed clean pipeline run"))?;
    let image =
        PackagedImage::from_outputs(stage_outputs(&run, StageKind::Package)?).map_err(|e| not_ready(e.to_string()))?;
    let dc = stage_outputs(&run, StageKind::DepCheck)?;
    let threshold = output(dc, "threshold")?
        .parse()
        .map_err(|_| not_ready("dependency-check threshold unreadable"))?;
    let home = PathBuf::from(&run.config.fabric_bin);
    if !LedgerHome::new(workspace.join(&home)).is_initialized() {
        return Err(not_ready(format!("no ledger at {}", home.display())));
    }
    Ok(Target {
        image,
        report_path: output(dc, "report_path")?,
        manifest: output(dc, "manifest")?,
        feed: output(dc, "feed")?,
        allowlist: output(dc, "allowlist")?,
        threshold,
        home,
        run,
    })
}

/// Recursive copy of regular files and directories.
pub fn copy_workspace(from: &Path, to: &Path) -> Result<(), AttackError> {
    fs::create_dir_all(to).map_err(io_err(to))?;
    for entry in fs::read_dir(from).map_err(io_err(from))? {
        let entry = entry.map_err(io_err(from))?;
        let src = entry.path();
        let dst = to.join(entry.file_name());
        let ty = entry.file_type().map_err(io_err(&src))?;
        if ty.is_dir() {
            copy_workspace(&src, &dst)?;
        } else if ty.is_file() {
            fs::copy(&src, &dst).map_err(io_err(&src))?;
        }
    }
    Ok(())
}

fn short(d: &Digest) -> String {
    d.to_hex()[..12].to_string()
}

fn first_client(net: &Network) -> Result<crate::identity::Identity, NetworkError> {
    let org = net.config().orgs[0].clone();
    net.client_of(&org).cloned()
}

fn provenance_status(net: &Network, digest: &Digest) -> Result<ArtifactStatus, NetworkError> {
    let client = first_client(net)?;
    let bytes = net.query(&client.key_id, "provenance", "verify", &[digest.to_hex()])?;
    let result: VerifyResult =
        serde_json::from_slice(&bytes).map_err(|e| NetworkError::Corrupt(format!("verify response: {e}")))?;
    Ok(result.status)
}

fn state_digest(net: &Network) -> Result<Digest, NetworkError> {
    let channel = net.channel().to_string();
    Ok(net
        .reference_peer()?
        .chain(&channel)
        .ok_or_else(|| NetworkError::Corrupt("reference peer has no chain".into()))?
        .state()
        .digest())
}

/// Injection and detection for one scenario. `inject == false` runs the
/// detector alone, which must stay quiet.
fn run_detector(
    kind: AttackKind,
    rng: &mut ChaCha8Rng,
    target: &Target,
    ws: &Path,
    inject: bool,
) -> Result<ScenarioOutcome, AttackError> {
    use ScenarioOutcome::{Detected, Missed};
    let ledger = |e: NetworkError| Missed(format!("ledger error: {e}"));
    Ok(match kind {
        AttackKind::ArtifactTamper => {
            let path = ws.join(&target.image.path);
            let mut bytes = fs::read(&path).map_err(io_err(&path))?;
            let at = rng.gen_range(0..bytes.len());
            if inject {
                bytes[at] ^= rng.gen_range(1..=u8::MAX);
                fs::write(&path, &bytes).map_err(io_err(&path))?;
            }
            let report = target.report(ws)?;
            let mut net = target.open(ws)?;
            match stage_deploy(&mut net, &target.image, &report, "production", ws) {
                Err(StageError::DigestMismatch { registered, on_disk }) => match provenance_status(&net, &on_disk) {
                    Ok(ArtifactStatus::Unknown) => Detected(format!(
                        "DigestMismatch at byte {at}: registered {} on disk {} (unregistered)",
                        short(&registered),
                        short(&on_disk)
                    )),
                    Ok(ArtifactStatus::Registered) => {
                        Missed(format!("tampered digest {} is registered", short(&on_disk)))
                    }
                    Err(e) => ledger(e),
                },
                Ok(d) => Missed(format!("deploy accepted the archive as {}", d.deployment_key)),
                Err(e) => Missed(format!("deploy failed otherwise: {e}")),
            }
        }
        AttackKind::LedgerRewrite => {
            let home = target.home(ws);
            let config = home.read_config().map_err(|e| not_ready(e.to_string()))?;
            let store = home.store(&config.channel);
            let height = rng.gen_range(0..store.read_block_files().map_err(|e| not_ready(e.to_string()))?.len());
            let path = store.block_path(height as u64);
            let mut bytes = fs::read(&path).map_err(io_err(&path))?;
            let at = rng.gen_range(0..bytes.len());
            let bit = rng.gen_range(0..8u8);
            if inject {
                bytes[at] ^= 1 << bit;
                fs::write(&path, &bytes).map_err(io_err(&path))?;
            }
            match store.verify().map_err(|e| not_ready(e.to_string()))? {
                ChainCheck::FirstBadHeight { height: found, fault } if found <= height as u64 => Detected(format!(
                    "FirstBadHeight {found} (bit {bit} of byte {at} in block {height}): {fault}"
                )),
                ChainCheck::FirstBadHeight { height: found, .. } => {
                    Missed(format!("fault reported at {found}, after the rewritten block {height}"))
                }
                ChainCheck::Ok => Missed(format!("chain verifies after rewriting block {height}")),
            }
        }
        AttackKind::UnauthorizedInvoke => {
            let mut net = target.open(ws)?;
            let orgs = net.config().orgs.clone();
            let org = orgs[rng.gen_range(0..orgs.len())].clone();
            let contract = ["provenance", "attestation", "deployment"][rng.gen_range(0..3)];
            let actor = if inject {
                net.client_of(&org).map_err(|e| not_ready(e.to_string()))?.key_id
            } else {
                net.admin_of(&org).map_err(|e| not_ready(e.to_string()))?.key_id
            };
            let version = {
                let peer = net.reference_peer().map_err(|e| not_ready(e.to_string()))?;
                let chain = peer.chain(net.channel()).ok_or_else(|| not_ready("no chain"))?;
                LifecycleRecord::load(chain.state(), contract)
                    .ok_or_else(|| not_ready(format!("{contract} is not initialized")))?
                    .version
            };
            let height = net.blocks().map_err(|e| not_ready(e.to_string()))?.len();
            // narrow the policy to the actor's own org
            let policy = EndorsementPolicy::out_of_orgs(1, std::slice::from_ref(&org));
            match net.init_contract(&actor, contract, &version, &policy) {
                Err(NetworkError::Chaincode(e @ ChaincodeError::PermissionDenied { .. })) => {
                    let after = net.blocks().map_err(|e| not_ready(e.to_string()))?.len();
                    if after == height {
                        Detected(format!("PermissionDenied: {e}"))
                    } else {
                        Missed(format!("denied, yet the chain grew from {height} to {after}"))
                    }
                }
                Ok(o) => Missed(format!("{contract} re-initialized at height {}", o.height)),
                Err(e) => Missed(format!("init failed otherwise: {e}")),
            }
        }
        AttackKind::ReplayTransaction => {
            let mut net = target.open(ws)?;
            let before = state_digest(&net).map_err(|e| not_ready(e.to_string()))?;
            if inject {
                let committed: Vec<_> = net
                    .blocks()
                    .map_err(|e| not_ready(e.to_string()))?
                    .iter()
                    .flat_map(|b| b.valid_transactions().map(|(_, tx)| (b.height, tx.clone())))
                    .collect();
                let (height, tx) = committed[rng.gen_range(0..committed.len())].clone();
                let tx_id = tx.tx_id;
                let outcome = match net.order_raw(vec![tx]) {
                    Ok(mut o) => o.remove(0),
                    Err(e) => return Ok(ledger(e)),
                };
                let after = state_digest(&net).map_err(|e| not_ready(e.to_string()))?;
                match outcome.code {
                    ValidationCode::DuplicateTxId if after == before => Detected(format!(
                        "DuplicateTxId for {} from block {height}, state unchanged",
                        short(&tx_id)
                    )),
                    code => Missed(format!("replay of {} committed as {code}", short(&tx_id))),
                }
            } else {
                let client = first_client(&net).map_err(|e| not_ready(e.to_string()))?;
                match register_fresh(&mut net, &client.key_id, rng) {
                    Ok(ValidationCode::DuplicateTxId) => Detected("fresh transaction flagged DuplicateTxId".into()),
                    Ok(code) => Missed(format!("fresh transaction committed as {code}")),
                    Err(e) => ledger(e),
                }
            }
        }
        AttackKind::DependencyDowngrade => downgrade(rng, target, ws, inject)?,
        AttackKind::EndorsementForgery => {
            let mut net = target.open(ws)?;
            if !inject {
                let client = first_client(&net).map_err(|e| not_ready(e.to_string()))?;
                return Ok(match register_fresh(&mut net, &client.key_id, rng) {
                    Ok(code @ (ValidationCode::BadSignature | ValidationCode::PolicyFail)) => {
                        Detected(format!("honest endorsement flagged {code}"))
                    }
                    Ok(code) => Missed(format!("honest endorsement committed as {code}")),
                    Err(e) => ledger(e),
                });
            }
            forge(&mut net, rng).unwrap_or_else(ledger)
        }
    })
}

fn random_digest(rng: &mut ChaCha8Rng) -> Digest {
    let mut bytes = [0u8; 32];
    rng.fill_bytes(&mut bytes);
    Digest::of(&bytes)
}

/// Register an unseen artifact through the normal path.
fn register_fresh(
    net: &mut Network,
    client: &crate::identity::KeyId,
    rng: &mut ChaCha8Rng,
) -> Result<ValidationCode, NetworkError> {
    let args = [
        random_digest(rng).to_hex(),
        "control".into(),
        "1".into(),
        random_digest(rng).to_hex(),
    ];
    Ok(net.submit(client, "provenance", "register", &args)?.code)
}

/// One member endorsement plus a signature from a key no org root issued:
/// either an outsider peer certificate or a forged signature under a
/// member peer's key id. The forged copy must be BadSignature; with the
/// forgery stripped the same write must fail the majority policy.
fn forge(net: &mut Network, rng: &mut ChaCha8Rng) -> Result<ScenarioOutcome, NetworkError> {
    let client = first_client(net)?;
    let endorsers: Vec<_> = net.endorsers().into_iter().cloned().collect();
    let member = &endorsers[0];
    let digest = random_digest(rng);
    let args = [
        digest.to_hex(),
        "forged".into(),
        "1".into(),
        random_digest(rng).to_hex(),
    ];
    let channel = net.channel().to_string();
    let mut nonce = || {
        let mut n = [0u8; 16];
        rng.fill_bytes(&mut n);
        n
    };
    let proposal = invoke_contract(member, &channel, "provenance", "register", &args, &client, nonce())?;
    let stripped = invoke_contract(member, &channel, "provenance", "register", &args, &client, nonce())?;
    let mut outsider_seed = [0u8; 32];
    rng.fill_bytes(&mut outsider_seed);
    let impersonate = rng.gen_bool(0.5);

    let mut forged = endorse_proposal(&proposal, &[member])?.transaction;
    let outsider = generate_org_materials("Outsider", 1, 0, false, &outsider_seed)?;
    let outsider_peer = outsider.by_role(Role::Peer).next().expect("one peer").key_id();
    let signature = outsider.sign(&outsider_peer, &forged.endorsement_payload())?;
    let (key_id, how) = match endorsers.iter().find(|p| p.org() != member.org()) {
        Some(victim) if impersonate => (victim.cert.key_id(), format!("impersonating {}", victim.name())),
        _ => (outsider_peer, "outsider certificate".to_string()),
    };
    forged.endorsements.push(Endorsement { key_id, signature });
    let partial = endorse_proposal(&stripped, &[member])?.transaction;

    let first = net.order_raw(vec![forged])?.remove(0).code;
    let second = net.order_raw(vec![partial])?.remove(0).code;
    let status = provenance_status(net, &digest)?;
    Ok(match (first, second, status) {
        (ValidationCode::BadSignature, ValidationCode::PolicyFail, ArtifactStatus::Unknown) => {
            ScenarioOutcome::Detected(format!("BadSignature then PolicyFail ({how})"))
        }
        _ => ScenarioOutcome::Missed(format!(
            "forged {first}, stripped {second}, artifact {status:?} ({how})"
        )),
    })
}

/// Versions inside `m`'s range, built from its bounds.
fn candidates_in(m: &CpeMatch, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = Vec::new();
    out.extend(m.version_start_including.clone());
    out.extend(m.version_end_including.clone());
    if let Some(s) = &m.version_start_excluding {
        out.push(format!("{s}.1"));
    }
    if let Some(e) = &m.version_end_excluding {
        let segments: Vec<&str> = e.split('.').collect();
        for (i, seg) in segments.iter().enumerate() {
            let Ok(v) = seg.parse::<u64>() else { continue };
            if v == 0 {
                continue;
            }
            let mut parts: Vec<String> = segments[..i].iter().map(|s| s.to_string()).collect();
            parts.push((v - 1).to_string());
            for _ in i + 1..segments.len().max(3) {
                parts.push(rng.gen_range(0..10u32).to_string());
            }
            out.push(parts.join("."));
        }
    }
    if !m.has_bounds() && !m.cpe.version_is_wildcard() {
        out.push(m.cpe.version.clone());
    }
    out
}

fn downgrade(rng: &mut ChaCha8Rng, target: &Target, ws: &Path, inject: bool) -> Result<ScenarioOutcome, AttackError> {
    let manifest_path = ws.join(&target.manifest);
    let feed_path = ws.join(&target.feed);
    let feed = load_feed(&feed_path).map_err(|e| not_ready(e.to_string()))?;
    let deps = load_manifest(&manifest_path, "").map_err(|e| not_ready(e.to_string()))?;
    let mut allowlist = target.run.config.allowlist.clone();
    if !target.allowlist.is_empty() {
        allowlist.extend(read_allowlist(&ws.join(&target.allowlist)).map_err(|e| not_ready(e.to_string()))?);
    }

    let mut change = String::from("manifest untouched");
    if inject {
        let mut options = Vec::new();
        for (i, dep) in deps.iter().enumerate() {
            for entry in feed.iter().filter(|e| e.base_score >= target.threshold) {
                for m in &entry.matches {
                    for version in candidates_in(m, rng) {
                        let mut moved = dep.clone();
                        moved.version = version.clone();
                        if match_predicate(&moved, m).is_some() {
                            options.push((i, version, entry.id.clone()));
                        }
                    }
                }
            }
        }
        if options.is_empty() {
            return Ok(ScenarioOutcome::Missed(
                "no gating range in the feed covers a manifest dependency".into(),
            ));
        }
        let (i, version, cve) = options.swap_remove(rng.gen_range(0..options.len()));
        let bytes = fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
        let mut doc: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| not_ready(format!("manifest: {e}")))?;
        doc[i]["version"] = serde_json::Value::String(version.clone());
        let text = serde_json::to_vec_pretty(&doc).expect("JSON value encodes");
        fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
        change = format!("{} {} -> {version} ({cve})", deps[i].product, deps[i].version);
    }

    let out_dir = tempfile::tempdir_in(ws).map_err(io_err(ws))?;
    let report = stage_depcheck(
        &DepCheckInput {
            manifest: &manifest_path,
            feed: &feed_path,
            allowlist,
            threshold: target.threshold,
            mode: target.run.config.mode,
        },
        out_dir.path(),
    );
    Ok(match report {
        Ok(r) if r.verdict == Verdict::Halt => {
            ScenarioOutcome::Detected(format!("Halt at score {}: {change}", r.max_score))
        }
        Ok(r) => ScenarioOutcome::Missed(format!("gate passed at score {}: {change}", r.max_score)),
        Err(e) => ScenarioOutcome::Missed(format!("gate errored: {e}")),
    })
}

/// Inject and detect in `workspace`, which is modified in place.
pub fn execute_scenario(scenario: &AttackScenario, workspace: &Path) -> Result<ScenarioOutcome, AttackError> {
    let target = load_target(workspace)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    run_detector(scenario.kind, &mut rng, &target, workspace, true)
}

/// The detector for `kind` on an untouched `workspace`.
pub fn control_check(kind: AttackKind, seed: u64, workspace: &Path) -> Result<ScenarioOutcome, AttackError> {
    let target = load_target(workspace)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_detector(kind, &mut rng, &target, workspace, false)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub kind: AttackKind,
    pub index: u32,
    pub seed: u64,
    pub stride: Stride,
    pub expected_detection: ExpectedDetection,
    pub detected: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissedScenario {
    pub kind: AttackKind,
    pub seed: u64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindSummary {
    pub run: u32,
    pub detected: u32,
}

/// A detector run on an untouched copy; `detected` is a false positive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlRecord {
    pub kind: AttackKind,
    pub detected: bool,
    pub detail: String,
}

/// `detected + missed.len() == scenarios_run`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackReport {
    pub base_seed: u64,
    pub scenarios_run: u32,
    pub detected: u32,
    pub missed: Vec<MissedScenario>,
    pub per_kind: BTreeMap<AttackKind, KindSummary>,
    /// Scenario count per category; categories with no scenario are 0.
    pub stride_summary: BTreeMap<Stride, u32>,
    pub scenarios: Vec<ScenarioRecord>,
    pub control: Vec<ControlRecord>,
    pub false_positives: u32,
}

impl AttackReport {
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        to_canonical(self).expect("report encodes canonically")
    }

    pub fn write(&self, path: &Path) -> Result<(), AttackError> {
        fs::write(path, self.to_canonical_bytes()).map_err(io_err(path))
    }
}

fn in_fresh_copy(workspace: &Path, f: impl FnOnce(&Path) -> Result<ScenarioOutcome, AttackError>) -> ScenarioOutcome {
    let result = tempfile::tempdir().map_err(io_err(workspace)).and_then(|dir| {
        copy_workspace(workspace, dir.path())?;
        f(dir.path())
    });
    result.unwrap_or_else(|e| ScenarioOutcome::Missed(e.to_string()))
}

/// Every kind × `seeds_per_kind` scenario, each on its own copy of
/// `workspace`, plus one control run per kind. Deterministic for a given
/// workspace and `base_seed`.
pub fn run_suite(
    workspace: &Path,
    kinds: &[AttackKind],
    seeds_per_kind: u32,
    base_seed: u64,
) -> Result<AttackReport, AttackError> {
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    let plan: Vec<(AttackKind, u32)> = kinds
        .iter()
        .flat_map(|&k| (0..seeds_per_kind).map(move |i| (k, i)))
        .collect();
    if !plan.is_empty() {
        load_target(workspace)?;
    }

    let scenarios: Vec<ScenarioRecord> = plan
        .par_iter()
        .map(|&(kind, index)| {
            let scenario = AttackScenario::new(kind, derive_seed(base_seed, kind, index));
            let outcome = in_fresh_copy(workspace, |ws| execute_scenario(&scenario, ws));
            ScenarioRecord {
                kind,
                index,
                seed: scenario.seed,
                stride: scenario.stride,
                expected_detection: scenario.expected_detection,
                detected: outcome.is_detected(),
                detail: outcome.detail().to_string(),
            }
        })
        .collect();
    let control: Vec<ControlRecord> = if plan.is_empty() {
        Vec::new()
    } else {
        kinds
            .par_iter()
            .map(|&kind| {
                let outcome = in_fresh_copy(workspace, |ws| control_check(kind, base_seed, ws));
                ControlRecord {
                    kind,
                    detected: outcome.is_detected(),
                    detail: outcome.detail().to_string(),
                }
            })
            .collect()
    };

    let mut per_kind: BTreeMap<AttackKind, KindSummary> = BTreeMap::new();
    let mut stride_summary: BTreeMap<Stride, u32> = Stride::ALL.iter().map(|&s| (s, 0)).collect();
    for s in &scenarios {
        let entry = per_kind.entry(s.kind).or_default();
        entry.run += 1;
        entry.detected += u32::from(s.detected);
        *stride_summary.entry(s.stride).or_default() += 1;
    }
    let missed: Vec<MissedScenario> = scenarios
        .iter()
        .filter(|s| !s.detected)
        .map(|s| MissedScenario {
            kind: s.kind,
            seed: s.seed,
            detail: s.detail.clone(),
        })
        .collect();
    Ok(AttackReport {
        base_seed,
        scenarios_run: scenarios.len() as u32,
        detected: scenarios.iter().filter(|s| s.detected).count() as u32,
        missed,
        per_kind,
        stride_summary,
        false_positives: control.iter().filter(|c| c.detected).count() as u32,
        control,
        scenarios,
    })
}
