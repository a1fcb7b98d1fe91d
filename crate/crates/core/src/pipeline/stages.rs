use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::PipelineConfig;
use super::home::{HomeError, LedgerHome};
use crate::canonical::{b64, to_canonical, Digest};
use crate::chaincode::{deployment_key, ChaincodeError, ContractError};
use crate::ledger::Block;
use crate::ordering::{ChannelError, Network, NetworkConfig, NetworkError};
use crate::vulnscan::{load_feed, load_manifest, parse_allowlist, scan_manifest, ScanError, ScanReport, SourceMode};

#[derive(Debug, Error)]
pub enum StageError {
    #[error("missing source tree {0}")]
    MissingSource(String),
    #[error("build command failed with exit code {0}")]
    BuildCommandFailed(i32),
    #[error("IMAGE_NAME is empty")]
    MissingImageName,
    #[error("IMAGE_TAG is empty")]
    MissingImageTag,
    #[error("missing param {0}")]
    MissingParam(String),
    #[error("bad param {param}: {detail}")]
    BadParam { param: String, detail: String },
    #[error("no upstream {0} stage")]
    MissingInput(String),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("corrupt workspace: {0}")]
    CorruptWorkspace(String),
    #[error("ledger is not bootstrapped")]
    LedgerNotReady,
    #[error("packaged archive digest {on_disk} differs from registered {registered}")]
    DigestMismatch { registered: Digest, on_disk: Digest },
    #[error("no passing attestation for {0}")]
    NoPassingAttestation(String),
    #[error("ledger: {0}")]
    Ledger(NetworkError),
    #[error("i/o error on {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("{0}")]
    Custom(String),
}

impl StageError {
    /// Tampered archives, ledgers or reports, as opposed to ordinary
    /// build or configuration failures.
    pub fn is_integrity_violation(&self) -> bool {
        matches!(
            self,
            StageError::CorruptWorkspace(_) | StageError::DigestMismatch { .. } | StageError::NoPassingAttestation(_)
        )
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StageError + '_ {
    move |e| StageError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

impl From<NetworkError> for StageError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Chaincode(ChaincodeError::Contract(ContractError::NoPassingAttestation(d))) => {
                StageError::NoPassingAttestation(d)
            }
            NetworkError::Chaincode(ChaincodeError::PermissionDenied { identity, action, .. }) => {
                StageError::PermissionDenied(format!("{identity} may not {action:?}"))
            }
            NetworkError::Channel(ChannelError::PermissionDenied { identity, action }) => {
                StageError::PermissionDenied(format!("{identity} may not {action:?}"))
            }
            NetworkError::Corrupt(detail) => StageError::CorruptWorkspace(detail),
            other => StageError::Ledger(other),
        }
    }
}

impl From<HomeError> for StageError {
    fn from(e: HomeError) -> Self {
        match e {
            HomeError::Corrupt(detail) => StageError::CorruptWorkspace(detail),
            HomeError::NotInitialized(_) => StageError::LedgerNotReady,
            HomeError::Io { path, detail } => StageError::Io {
                path: path.display().to_string(),
                detail,
            },
            HomeError::Network(e) => e.into(),
        }
    }
}

/// Files of a source tree keyed by `/`-separated relative path.
pub fn read_source_tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, StageError> {
    fn walk(dir: &Path, prefix: &str, out: &mut BTreeMap<String, Vec<u8>>) -> Result<(), StageError> {
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            let rel = if prefix.is_empty() {
                name
            } else {
                format!("{prefix}/{name}")
            };
            let meta = fs::metadata(&path).map_err(io_err(&path))?;
            if meta.is_dir() {
                walk(&path, &rel, out)?;
            } else if meta.is_file() {
                out.insert(rel, fs::read(&path).map_err(io_err(&path))?);
            }
        }
        Ok(())
    }
    if !root.is_dir() {
        return Err(StageError::MissingSource(root.display().to_string()));
    }
    let mut files = BTreeMap::new();
    walk(root, "", &mut files)?;
    if files.is_empty() {
        return Err(StageError::MissingSource(root.display().to_string()));
    }
    Ok(files)
}

/// SHA-256 over `path ‖ 0x00 ‖ SHA-256(content)` for every file, in path
/// order.
pub fn source_digest(files: &BTreeMap<String, Vec<u8>>) -> Digest {
    let mut input = Vec::with_capacity(files.len() * 64);
    for (path, content) in files {
        input.extend_from_slice(path.as_bytes());
        input.push(0);
        input.extend_from_slice(Digest::of(content).as_bytes());
    }
    Digest::of(&input)
}

const ARCHIVE_MAGIC: &[u8] = b"LCIA1\0";

/// Deterministic archive: magic, then per file in path order a 4-byte
/// path length, the path, an 8-byte content length and the content (all
/// lengths big-endian). No timestamps or modes.
pub fn hermetic_archive(files: &BTreeMap<String, Vec<u8>>) -> Vec<u8> {
    let mut out = ARCHIVE_MAGIC.to_vec();
    for (path, content) in files {
        out.extend_from_slice(&(path.len() as u32).to_be_bytes());
        out.extend_from_slice(path.as_bytes());
        out.extend_from_slice(&(content.len() as u64).to_be_bytes());
        out.extend_from_slice(content);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuildOutput {
    pub artifact: Vec<u8>,
    pub source_digest: Digest,
}

pub(crate) fn param<'a>(params: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, StageError> {
    params
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| StageError::MissingParam(key.to_string()))
}

/// Resolve a workspace-relative param path, refusing to leave the
/// workspace.
pub(crate) fn workspace_path(workspace: &Path, rel: &str, name: &str) -> Result<PathBuf, StageError> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(StageError::BadParam {
            param: name.to_string(),
            detail: format!("{rel} must be relative to the workspace"),
        });
    }
    Ok(workspace.join(p))
}

/// `src` names the source tree. With `command`, runs it through `sh -c`
/// inside `work_dir` and takes `artifact` (relative to `work_dir`) as the
/// output; otherwise the artifact is the hermetic archive of the tree.
pub fn stage_build(
    params: &BTreeMap<String, String>,
    workspace: &Path,
    work_dir: &Path,
) -> Result<BuildOutput, StageError> {
    let src = workspace_path(workspace, param(params, "src")?, "src")?;
    let files = read_source_tree(&src)?;
    let source_digest = source_digest(&files);
    let artifact = match params.get("command") {
        None => hermetic_archive(&files),
        Some(command) => {
            let status = Command::new("sh")
                .arg("-c")
                .arg(command)
                .current_dir(work_dir)
                .env("SRC_DIR", &src)
                .status()
                .map_err(io_err(work_dir))?;
            if !status.success() {
                return Err(StageError::BuildCommandFailed(status.code().unwrap_or(-1)));
            }
            let out = work_dir.join(param(params, "artifact")?);
            fs::read(&out).map_err(io_err(&out))?
        }
    };
    Ok(BuildOutput {
        artifact,
        source_digest,
    })
}

#[derive(Serialize)]
struct ImageManifest<'a> {
    name: &'a str,
    tag: &'a str,
    source_digest: Digest,
}

#[derive(Serialize)]
struct ImageArchive<'a> {
    #[serde(with = "b64")]
    artifact: &'a [u8],
    manifest: ImageManifest<'a>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackagedImage {
    pub name: String,
    pub tag: String,
    pub digest: Digest,
    pub source_digest: Digest,
    pub container_name: String,
    /// Workspace-relative.
    pub path: String,
}

impl PackagedImage {
    /// Rebuild from a Package stage's outputs.
    pub fn from_outputs(outputs: &BTreeMap<String, String>) -> Result<Self, StageError> {
        use super::engine::{digest_field, get};
        Ok(PackagedImage {
            name: get(outputs, "image_name")?.to_string(),
            tag: get(outputs, "image_tag")?.to_string(),
            digest: digest_field(outputs, "image_digest")?,
            source_digest: digest_field(outputs, "source_digest")?,
            container_name: get(outputs, "container_name")?.to_string(),
            path: get(outputs, "image_path")?.to_string(),
        })
    }
}

pub fn image_file_name(name: &str, tag: &str) -> String {
    format!("{name}-{tag}.img")
}

/// Canonical archive of artifact plus name/tag/source manifest.
pub fn package_archive(artifact: &[u8], name: &str, tag: &str, source_digest: Digest) -> Vec<u8> {
    to_canonical(&ImageArchive {
        artifact,
        manifest: ImageManifest {
            name,
            tag,
            source_digest,
        },
    })
    .expect("archive encodes canonically")
}

fn check_name_part(value: &str, param: &str) -> Result<(), StageError> {
    if value.contains(['/', '\\']) || value == "." || value == ".." {
        return Err(StageError::BadParam {
            param: param.to_string(),
            detail: format!("{value:?} is not a file name"),
        });
    }
    Ok(())
}

/// Write `dist/<name>-<tag>.img` under the workspace.
pub fn stage_package(
    build: &BuildOutput,
    config: &PipelineConfig,
    workspace: &Path,
) -> Result<PackagedImage, StageError> {
    if build.artifact.is_empty() {
        return Err(StageError::MissingInput("artifact".into()));
    }
    if config.image_name.is_empty() {
        return Err(StageError::MissingImageName);
    }
    if config.image_tag.is_empty() {
        return Err(StageError::MissingImageTag);
    }
    check_name_part(&config.image_name, "IMAGE_NAME")?;
    check_name_part(&config.image_tag, "IMAGE_TAG")?;
    let container_name = config.render_container_name().map_err(|e| StageError::BadParam {
        param: "CONTAINER_NAME".into(),
        detail: e.to_string(),
    })?;
    let archive = package_archive(
        &build.artifact,
        &config.image_name,
        &config.image_tag,
        build.source_digest,
    );
    let rel = format!("dist/{}", image_file_name(&config.image_name, &config.image_tag));
    let path = workspace.join(&rel);
    let dist = workspace.join("dist");
    fs::create_dir_all(&dist).map_err(io_err(&dist))?;
    fs::write(&path, &archive).map_err(io_err(&path))?;
    Ok(PackagedImage {
        name: config.image_name.clone(),
        tag: config.image_tag.clone(),
        digest: Digest::of(&archive),
        source_digest: build.source_digest,
        container_name,
        path: rel,
    })
}

#[derive(Clone, Debug)]
pub struct DepCheckInput<'a> {
    pub manifest: &'a Path,
    pub feed: &'a Path,
    pub allowlist: Vec<String>,
    pub threshold: u8,
    pub mode: SourceMode,
}

/// Scan and write `scan-report.json` / `scan-report.txt` into `out_dir`,
/// whatever the verdict.
pub fn stage_depcheck(input: &DepCheckInput<'_>, out_dir: &Path) -> Result<ScanReport, StageError> {
    let feed = load_feed(input.feed)?;
    let declared_in = input
        .manifest
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let manifest = load_manifest(input.manifest, &declared_in)?;
    let report = scan_manifest(&manifest, &feed, input.threshold, &input.allowlist, input.mode)?;
    write_scan_report(&report, out_dir)?;
    Ok(report)
}

pub fn write_scan_report(report: &ScanReport, out_dir: &Path) -> Result<(), StageError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let json = out_dir.join("scan-report.json");
    fs::write(&json, report.to_canonical_bytes()).map_err(io_err(&json))?;
    let text = out_dir.join("scan-report.txt");
    fs::write(&text, report.render_text()).map_err(io_err(&text))?;
    Ok(())
}

pub fn read_allowlist(path: &Path) -> Result<Vec<String>, StageError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(parse_allowlist(&text))
}

/// Result of bringing the ledger up. `new_txs` lists transactions this
/// call committed; empty when the ledger already existed.
pub struct Bootstrapped {
    pub network: Network,
    pub created: bool,
    pub new_txs: Vec<Digest>,
}

/// Idempotent: reuses a valid existing ledger home, otherwise creates
/// one with `network_config` (or the home's own `network.json`).
pub fn stage_ledger_bootstrap(home: &LedgerHome, network_config: &NetworkConfig) -> Result<Bootstrapped, StageError> {
    let (network, created) = home.ensure(network_config)?;
    let new_txs = if created {
        network
            .blocks()?
            .iter()
            .flat_map(|b: &Block| b.transactions.iter().map(|t| t.tx_id))
            .collect()
    } else {
        Vec::new()
    };
    Ok(Bootstrapped {
        network,
        created,
        new_txs,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Deployed {
    pub deployment_key: String,
    pub txs: Vec<Digest>,
}

/// Register, attest, re-hash the archive on disk, then record the
/// deployment. Each ledger step must commit Valid.
pub fn stage_deploy(
    net: &mut Network,
    image: &PackagedImage,
    report: &ScanReport,
    environment: &str,
    workspace: &Path,
) -> Result<Deployed, StageError> {
    let org = net.config().orgs[0].clone();
    let client = net.client_of(&org)?.key_id;
    let digest = image.digest.to_hex();
    let mut txs = Vec::new();

    let register = [
        digest.clone(),
        image.name.clone(),
        image.tag.clone(),
        image.source_digest.to_hex(),
    ];
    txs.push(
        net.submit(&client, "provenance", "register", &register)?
            .require_valid()?
            .tx_id,
    );

    let body = String::from_utf8(report.to_canonical_bytes()).expect("canonical JSON is UTF-8");
    let attest = [
        digest.clone(),
        report.report_hash.to_hex(),
        report.max_score.to_string(),
        report.threshold.to_string(),
        report.gating_unverified().to_string(),
        report.verdict.to_string(),
        body,
    ];
    txs.push(
        net.submit(&client, "attestation", "record", &attest)?
            .require_valid()?
            .tx_id,
    );

    let path = workspace_path(workspace, &image.path, "image")?;
    let on_disk = Digest::of(&fs::read(&path).map_err(io_err(&path))?);
    if on_disk != image.digest {
        return Err(StageError::DigestMismatch {
            registered: image.digest,
            on_disk,
        });
    }

    let deploy = [digest, environment.to_string(), image.container_name.clone()];
    txs.push(
        net.submit(&client, "deployment", "record", &deploy)?
            .require_valid()?
            .tx_id,
    );
    Ok(Deployed {
        deployment_key: deployment_key(environment, &image.container_name),
        txs,
    })
}
