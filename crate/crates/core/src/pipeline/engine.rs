use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::PipelineConfig;
use super::def::{PipelineDef, StageDef, StageKind};
use super::home::LedgerHome;
use super::stages::{
    io_err, param, read_allowlist, stage_build, stage_depcheck, stage_deploy, stage_ledger_bootstrap, stage_package,
    workspace_path, BuildOutput, DepCheckInput, PackagedImage, StageError,
};
use crate::canonical::{from_canonical_slice, to_canonical, Digest};
use crate::ordering::{Network, NetworkConfig};
use crate::vulnscan::{ScanReport, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageStatus {
    Success,
    Failed,
    Halted,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub name: String,
    pub kind: StageKind,
    pub status: StageStatus,
    /// Microseconds since the run started.
    pub started_us: u64,
    pub ended_us: u64,
    pub duration_us: u64,
    pub outputs: BTreeMap<String, String>,
    pub error: Option<String>,
    /// The failure is evidence of tampering rather than a broken build.
    #[serde(default)]
    pub integrity_violation: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Overall {
    Success,
    HaltedAtGate,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub run_id: String,
    pub config: PipelineConfig,
    /// In completion order.
    pub stage_results: Vec<StageResult>,
    pub overall: Overall,
    pub ledger_txs: Vec<Digest>,
    pub total_wall_us: u64,
}

impl PipelineRun {
    pub fn result(&self, name: &str) -> Option<&StageResult> {
        self.stage_results.iter().find(|r| r.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub kind: StageKind,
    pub status: StageStatus,
    pub started_us: u64,
    pub ended_us: u64,
    pub duration_us: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingReport {
    pub run_id: String,
    pub parallel: bool,
    pub stages: Vec<StageTiming>,
    pub total_wall_us: u64,
    pub serial_sum_us: u64,
    pub depcheck_us: u64,
    /// DepCheck time as parts per million of the serial sum.
    pub depcheck_share_ppm: u64,
}

pub fn emit_timing_report(run: &PipelineRun) -> TimingReport {
    let stages: Vec<StageTiming> = run
        .stage_results
        .iter()
        .map(|r| StageTiming {
            name: r.name.clone(),
            kind: r.kind,
            status: r.status,
            started_us: r.started_us,
            ended_us: r.ended_us,
            duration_us: r.duration_us,
        })
        .collect();
    let serial_sum_us: u64 = stages.iter().map(|s| s.duration_us).sum();
    let depcheck_us: u64 = stages
        .iter()
        .filter(|s| s.kind == StageKind::DepCheck)
        .map(|s| s.duration_us)
        .sum();
    TimingReport {
        run_id: run.run_id.clone(),
        parallel: run.config.parallel,
        stages,
        total_wall_us: run.total_wall_us,
        serial_sum_us,
        depcheck_us,
        depcheck_share_ppm: (depcheck_us * 1_000_000).checked_div(serial_sum_us).unwrap_or(0),
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("i/o error on {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("no run {0}")]
    UnknownRun(String),
    #[error("run report {path} is unreadable: {detail}")]
    BadReport { path: String, detail: String },
}

impl From<StageError> for RunError {
    fn from(e: StageError) -> Self {
        match e {
            StageError::Io { path, detail } => RunError::Io { path, detail },
            other => RunError::Io {
                path: String::new(),
                detail: other.to_string(),
            },
        }
    }
}

pub const RUNS_DIR: &str = "runs";
pub const RUN_REPORT: &str = "run-report.json";
pub const TIMING_REPORT: &str = "timing-report.json";

pub fn run_dir(workspace: &Path, run_id: &str) -> PathBuf {
    workspace.join(RUNS_DIR).join(run_id)
}

fn next_run_id(workspace: &Path) -> Result<String, RunError> {
    let runs = workspace.join(RUNS_DIR);
    let count = match fs::read_dir(&runs) {
        Ok(entries) => entries.filter_map(Result::ok).count(),
        Err(_) => 0,
    };
    Ok(format!("run-{:04}", count + 1))
}

pub fn load_run(workspace: &Path, run_id: &str) -> Result<PipelineRun, RunError> {
    let path = run_dir(workspace, run_id).join(RUN_REPORT);
    let bytes = fs::read(&path).map_err(|_| RunError::UnknownRun(run_id.to_string()))?;
    from_canonical_slice(&bytes).map_err(|e| RunError::BadReport {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Everything stages share. The ledger is the single writer behind a lock.
struct RunContext<'a> {
    def: &'a PipelineDef,
    config: &'a PipelineConfig,
    workspace: &'a Path,
    run_dir: PathBuf,
    run_rel: String,
    ledger: Mutex<Option<Network>>,
}

struct Outcome {
    status: StageStatus,
    outputs: BTreeMap<String, String>,
    ledger_txs: Vec<Digest>,
}

impl Outcome {
    fn success(outputs: BTreeMap<String, String>) -> Self {
        Outcome {
            status: StageStatus::Success,
            outputs,
            ledger_txs: Vec::new(),
        }
    }
}

fn out<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Outputs of the nearest ancestor of `kind`, by topological position.
fn upstream<'r>(
    ctx: &RunContext<'_>,
    stage: &str,
    kind: StageKind,
    done: &'r BTreeMap<String, StageResult>,
) -> Result<&'r BTreeMap<String, String>, StageError> {
    let ancestors = ctx.def.ancestors(stage);
    ctx.def
        .topological_order()
        .into_iter()
        .rev()
        .filter(|n| ancestors.contains(n))
        .filter(|n| ctx.def.stage(n).map(|s| s.kind) == Some(kind))
        .find_map(|n| done.get(n).map(|r| &r.outputs))
        .ok_or_else(|| StageError::MissingInput(kind.to_string()))
}

pub(crate) fn get<'m>(m: &'m BTreeMap<String, String>, key: &str) -> Result<&'m str, StageError> {
    m.get(key)
        .map(String::as_str)
        .ok_or_else(|| StageError::MissingInput(key.to_string()))
}

pub(crate) fn digest_field(m: &BTreeMap<String, String>, key: &str) -> Result<Digest, StageError> {
    Digest::from_hex(get(m, key)?).ok_or_else(|| StageError::BadParam {
        param: key.to_string(),
        detail: "not a digest".into(),
    })
}

fn execute(
    ctx: &RunContext<'_>,
    stage: &StageDef,
    done: &BTreeMap<String, StageResult>,
) -> Result<Outcome, StageError> {
    let work_rel = format!("{}/stages/{}", ctx.run_rel, stage.name);
    let work_dir = ctx.workspace.join(&work_rel);
    fs::create_dir_all(&work_dir).map_err(io_err(&work_dir))?;
    let p = &stage.params;
    match stage.kind {
        StageKind::Build => {
            let built = stage_build(p, ctx.workspace, &work_dir)?;
            let path = work_dir.join("artifact.bin");
            fs::write(&path, &built.artifact).map_err(io_err(&path))?;
            Ok(Outcome::success(out([
                ("artifact_path", format!("{work_rel}/artifact.bin")),
                ("artifact_digest", Digest::of(&built.artifact).to_hex()),
                ("source_digest", built.source_digest.to_hex()),
            ])))
        }
        StageKind::Package => {
            let b = upstream(ctx, &stage.name, StageKind::Build, done)?;
            let path = workspace_path(ctx.workspace, get(b, "artifact_path")?, "artifact_path")?;
            let build = BuildOutput {
                artifact: fs::read(&path).map_err(io_err(&path))?,
                source_digest: digest_field(b, "source_digest")?,
            };
            let image = stage_package(&build, ctx.config, ctx.workspace)?;
            Ok(Outcome::success(out([
                ("image_path", image.path),
                ("image_digest", image.digest.to_hex()),
                ("image_name", image.name),
                ("image_tag", image.tag),
                ("source_digest", image.source_digest.to_hex()),
                ("container_name", image.container_name),
            ])))
        }
        StageKind::DepCheck => {
            let manifest = workspace_path(ctx.workspace, param(p, "manifest")?, "manifest")?;
            let feed = workspace_path(ctx.workspace, param(p, "feed")?, "feed")?;
            let mut allowlist = ctx.config.allowlist.clone();
            if let Some(rel) = p.get("allowlist") {
                allowlist.extend(read_allowlist(&workspace_path(ctx.workspace, rel, "allowlist")?)?);
            }
            let threshold = match p.get("threshold") {
                Some(t) => t.parse().map_err(|_| StageError::BadParam {
                    param: "threshold".into(),
                    detail: format!("{t:?} is not 0..=100"),
                })?,
                None => ctx.config.threshold,
            };
            let gate = p.get("gate").map(|g| g != "false").unwrap_or(true);
            let report = stage_depcheck(
                &DepCheckInput {
                    manifest: &manifest,
                    feed: &feed,
                    allowlist,
                    threshold,
                    mode: ctx.config.mode,
                },
                &work_dir,
            )?;
            let status = if gate && report.verdict == Verdict::Halt {
                StageStatus::Halted
            } else {
                StageStatus::Success
            };
            Ok(Outcome {
                status,
                outputs: out([
                    ("report_path", format!("{work_rel}/scan-report.json")),
                    ("report_hash", report.report_hash.to_hex()),
                    ("verdict", report.verdict.to_string()),
                    ("max_score", report.max_score.to_string()),
                    ("threshold", threshold.to_string()),
                    ("manifest", param(p, "manifest")?.to_string()),
                    ("feed", param(p, "feed")?.to_string()),
                    ("allowlist", p.get("allowlist").cloned().unwrap_or_default()),
                ]),
                ledger_txs: Vec::new(),
            })
        }
        StageKind::LedgerBootstrap => {
            let home = LedgerHome::new(ctx.config.ledger_home(ctx.workspace));
            let net_config = if home.is_initialized() {
                home.read_config()?
            } else {
                NetworkConfig::default()
            };
            let mut ledger = ctx.ledger.lock().expect("ledger lock");
            let boot = stage_ledger_bootstrap(&home, &net_config)?;
            let height = boot.network.blocks()?.len() as u64;
            *ledger = Some(boot.network);
            Ok(Outcome {
                status: StageStatus::Success,
                outputs: out([
                    ("created", boot.created.to_string()),
                    ("height", height.to_string()),
                    ("channel", net_config.channel),
                ]),
                ledger_txs: boot.new_txs,
            })
        }
        StageKind::Deploy => {
            let pk = upstream(ctx, &stage.name, StageKind::Package, done)?;
            let image = PackagedImage::from_outputs(pk)?;
            let report_rel = match p.get("report") {
                Some(r) => r.as_str(),
                None => get(upstream(ctx, &stage.name, StageKind::DepCheck, done)?, "report_path")?,
            };
            let report_path = workspace_path(ctx.workspace, report_rel, "report")?;
            let bytes = fs::read(&report_path).map_err(io_err(&report_path))?;
            let report: ScanReport = from_canonical_slice(&bytes).map_err(|e| StageError::BadParam {
                param: "report".into(),
                detail: e.to_string(),
            })?;
            if !report.hash_is_consistent() {
                return Err(StageError::CorruptWorkspace(format!(
                    "{report_rel}: report hash does not recompute"
                )));
            }
            let environment = p.get("environment").map(String::as_str).unwrap_or("production");
            let mut ledger = ctx.ledger.lock().expect("ledger lock");
            if ledger.is_none() {
                let home = LedgerHome::new(ctx.config.ledger_home(ctx.workspace));
                *ledger = Some(home.open()?);
            }
            let net = ledger.as_mut().expect("set above");
            let deployed = stage_deploy(net, &image, &report, environment, ctx.workspace)?;
            Ok(Outcome {
                status: StageStatus::Success,
                outputs: out([
                    ("deployment_key", deployed.deployment_key),
                    ("image_digest", image.digest.to_hex()),
                ]),
                ledger_txs: deployed.txs,
            })
        }
        StageKind::Custom => {
            if let Some(ms) = p.get("sleep_ms") {
                let ms: u64 = ms.parse().map_err(|_| StageError::BadParam {
                    param: "sleep_ms".into(),
                    detail: format!("{ms:?}"),
                })?;
                std::thread::sleep(Duration::from_millis(ms));
            }
            if let Some(message) = p.get("fail") {
                return Err(StageError::Custom(message.clone()));
            }
            let outputs = p
                .iter()
                .filter(|(k, _)| k.as_str() != "sleep_ms")
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            Ok(Outcome::success(outputs))
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Slot {
    Pending,
    Running,
    Done,
}

fn micros(d: Duration) -> u64 {
    d.as_micros() as u64
}

/// Run every stage once. Failures land in the stage results; only
/// workspace I/O for the run directory is an error here.
pub fn run_pipeline(def: &PipelineDef, config: &PipelineConfig, workspace: &Path) -> Result<PipelineRun, RunError> {
    let run_id = next_run_id(workspace)?;
    let run_rel = format!("{RUNS_DIR}/{run_id}");
    let dir = workspace.join(&run_rel);
    fs::create_dir_all(&dir).map_err(|e| RunError::Io {
        path: dir.display().to_string(),
        detail: e.to_string(),
    })?;
    let ctx = RunContext {
        def,
        config,
        workspace,
        run_dir: dir,
        run_rel,
        ledger: Mutex::new(None),
    };
    let start = Instant::now();
    let order: Vec<usize> = def.topological_order().iter().map(|n| def.index_of(n)).collect();
    let stages = def.stages();
    let limit = if config.parallel { usize::MAX } else { 1 };

    let mut slots = vec![Slot::Pending; stages.len()];
    let mut done: BTreeMap<String, StageResult> = BTreeMap::new();
    let mut completed: Vec<StageResult> = Vec::new();
    let mut ledger_txs = Vec::new();

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, StageResult, Vec<Digest>)>();
        let mut running = 0usize;
        loop {
            for &i in &order {
                if slots[i] != Slot::Pending {
                    continue;
                }
                let deps = &stages[i].depends_on;
                let blocked = deps
                    .iter()
                    .any(|d| done.get(d).is_some_and(|r| r.status != StageStatus::Success));
                if blocked {
                    let now = micros(start.elapsed());
                    let result = StageResult {
                        name: stages[i].name.clone(),
                        kind: stages[i].kind,
                        status: StageStatus::Skipped,
                        started_us: now,
                        ended_us: now,
                        duration_us: 0,
                        outputs: BTreeMap::new(),
                        error: None,
                        integrity_violation: false,
                    };
                    slots[i] = Slot::Done;
                    done.insert(result.name.clone(), result.clone());
                    completed.push(result);
                    continue;
                }
                let ready = deps.iter().all(|d| done.contains_key(d));
                if ready && running < limit {
                    slots[i] = Slot::Running;
                    running += 1;
                    let snapshot = done.clone();
                    let tx = tx.clone();
                    let ctx = &ctx;
                    let stage = &stages[i];
                    scope.spawn(move || {
                        let t0 = start.elapsed();
                        let outcome = execute(ctx, stage, &snapshot);
                        let t1 = start.elapsed();
                        let (status, outputs, txs, error, integrity_violation) = match outcome {
                            Ok(o) => (o.status, o.outputs, o.ledger_txs, None, false),
                            Err(e) => (
                                StageStatus::Failed,
                                BTreeMap::new(),
                                Vec::new(),
                                Some(e.to_string()),
                                e.is_integrity_violation(),
                            ),
                        };
                        let result = StageResult {
                            name: stage.name.clone(),
                            kind: stage.kind,
                            status,
                            started_us: micros(t0),
                            ended_us: micros(t1),
                            duration_us: micros(t1) - micros(t0),
                            outputs,
                            error,
                            integrity_violation,
                        };
                        tx.send((i, result, txs)).expect("scheduler alive");
                    });
                }
            }
            if running == 0 {
                break;
            }
            let (i, result, txs) = rx.recv().expect("a stage is running");
            running -= 1;
            slots[i] = Slot::Done;
            ledger_txs.extend(txs);
            done.insert(result.name.clone(), result.clone());
            completed.push(result);
        }
    });

    let overall = if completed
        .iter()
        .any(|r| r.kind == StageKind::DepCheck && r.status == StageStatus::Halted)
    {
        Overall::HaltedAtGate
    } else if completed.iter().all(|r| r.status == StageStatus::Success) {
        Overall::Success
    } else {
        Overall::Failed
    };
    let run = PipelineRun {
        run_id,
        config: config.clone(),
        stage_results: completed,
        overall,
        ledger_txs,
        total_wall_us: micros(start.elapsed()),
    };
    write_reports(&run, &ctx.run_dir)?;
    Ok(run)
}

fn write_reports(run: &PipelineRun, dir: &Path) -> Result<(), RunError> {
    let write = |name: &str, bytes: Vec<u8>| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| RunError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    };
    write(RUN_REPORT, to_canonical(run).expect("run encodes canonically"))?;
    write(
        TIMING_REPORT,
        to_canonical(&emit_timing_report(run)).expect("timings encode canonically"),
    )
}
