//! Command-line surface. [`run_cli`] is pure over its inputs apart from the
//! workspace on disk, so tests drive it without spawning a process.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 gate halt,
//! 4 integrity violation, 5 internal error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::attacks::{run_suite, AttackError, AttackKind, ATTACK_REPORT};
use crate::canonical::{canonical_encode, Digest};
use crate::chaincode::{ArtifactStatus, VerifyResult};
use crate::fixtures::{write_fixture, Fixture};
use crate::ledger::ChainCheck;
use crate::ordering::{Network, NetworkConfig};
use crate::pipeline::{
    emit_timing_report, layered_vars, load_pipeline_def, load_run, run_pipeline, HomeError, LedgerHome, Overall,
    PipelineConfig, PipelineRun, RunError, StageStatus,
};
use crate::vulnscan::{
    load_feed, load_manifest, parse_allowlist, scan_manifest, ScanError, SourceMode, Verdict, DEFAULT_THRESHOLD,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 2,
    Halt = 3,
    Integrity = 4,
    Internal = 5,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

#[derive(Parser, Debug)]
#[command(
    name = "ledgerci",
    version,
    about = "Ledger-backed provenance and gating for CI/CD pipelines"
)]
struct Cli {
    /// Directory all paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,
    /// Canonical JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create the ledger home (idempotent) and optionally a fixture project.
    Init {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..=16))]
        orgs: Option<u32>,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..=16))]
        peers_per_org: Option<u32>,
        /// Up to 32 bytes of hex, right-aligned.
        #[arg(long)]
        seed: Option<String>,
        /// clean or vulnerable
        #[arg(long)]
        fixture: Option<String>,
    },
    /// Execute a pipeline definition.
    Run {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        parallel: bool,
    },
    /// Scan a dependency manifest against a feed.
    Scan {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        feed: PathBuf,
        /// CVSS tenths, 0..=100.
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=100))]
        threshold: Option<u8>,
        #[arg(long)]
        allowlist: Option<PathBuf>,
        /// strict or permissive
        #[arg(long, default_value = "strict")]
        mode: String,
    },
    /// Structurally validate and fully replay the stored chain.
    LedgerVerify {
        #[arg(long)]
        channel: Option<String>,
    },
    /// Read one key of the world state.
    LedgerQuery {
        #[arg(long)]
        channel: Option<String>,
        #[arg(long)]
        key: String,
        #[arg(long)]
        history: bool,
    },
    /// Check that an artifact digest is registered.
    ArtifactVerify {
        #[arg(long)]
        digest: String,
    },
    /// Run the attack suite against copies of the workspace.
    Attack {
        /// Comma-separated kinds, or `all`.
        #[arg(long, default_value = "all")]
        kinds: String,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(0..=10_000))]
        seeds: u32,
        #[arg(long, default_value = "0")]
        base_seed: String,
    },
    /// Show a stored run with its timing report.
    Report {
        #[arg(long)]
        run: String,
    },
}

#[derive(Debug)]
struct Failure {
    code: ExitCode,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: ExitCode::Usage,
        message: message.into(),
    }
}

fn integrity(message: impl Into<String>) -> Failure {
    Failure {
        code: ExitCode::Integrity,
        message: message.into(),
    }
}

fn internal(message: impl Into<String>) -> Failure {
    Failure {
        code: ExitCode::Internal,
        message: message.into(),
    }
}

/// A completed command; `diagnostic` goes to stderr alongside.
struct Outcome {
    code: ExitCode,
    text: String,
    json: Value,
    diagnostic: Option<String>,
}

impl Outcome {
    fn ok(text: String, json: Value) -> Self {
        Outcome {
            code: ExitCode::Success,
            text,
            json,
            diagnostic: None,
        }
    }
}

fn to_value<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("serializable")
}

fn home_failure(e: HomeError) -> Failure {
    match e {
        HomeError::NotInitialized(_) => usage(format!("{e}; run `ledgerci init` first")),
        HomeError::Corrupt(_) => integrity(e.to_string()),
        HomeError::Io { .. } | HomeError::Network(_) => internal(e.to_string()),
    }
}

struct Ctx<'a> {
    workspace: &'a Path,
    env: &'a BTreeMap<String, String>,
}

impl Ctx<'_> {
    fn config(&self) -> Result<PipelineConfig, Failure> {
        PipelineConfig::resolve(&BTreeMap::new(), self.env).map_err(|e| usage(e.to_string()))
    }

    fn home(&self) -> Result<LedgerHome, Failure> {
        Ok(LedgerHome::new(self.config()?.ledger_home(self.workspace)))
    }

    fn path(&self, rel: &Path) -> PathBuf {
        self.workspace.join(rel)
    }

    /// The initialized home and its channel, checked against `channel`.
    fn channel_home(&self, channel: Option<&str>) -> Result<(LedgerHome, NetworkConfig), Failure> {
        let home = self.home()?;
        let config = home.read_config().map_err(home_failure)?;
        if let Some(c) = channel {
            if c != config.channel {
                return Err(usage(format!(
                    "unknown channel {c:?}; this ledger holds {:?}",
                    config.channel
                )));
            }
        }
        Ok((home, config))
    }
}

fn parse_seed(text: &str) -> Result<[u8; 32], Failure> {
    let digits = text.strip_prefix("0x").unwrap_or(text);
    let padded = if digits.len() % 2 == 1 {
        format!("0{digits}")
    } else {
        digits.to_string()
    };
    let bytes = hex::decode(&padded).map_err(|e| usage(format!("bad --seed {text:?}: {e}")))?;
    if bytes.len() > 32 {
        return Err(usage(format!("--seed {text:?} is longer than 32 bytes")));
    }
    let mut seed = [0u8; 32];
    seed[32 - bytes.len()..].copy_from_slice(&bytes);
    Ok(seed)
}

fn height_and_tip(net: &Network) -> Result<(usize, Digest), Failure> {
    let blocks = net.blocks().map_err(|e| internal(e.to_string()))?;
    let tip = blocks.last().map(|b| b.block_hash).unwrap_or(Digest::ZERO);
    Ok((blocks.len(), tip))
}

fn init(
    ctx: &Ctx<'_>,
    orgs: Option<u32>,
    peers_per_org: Option<u32>,
    seed: Option<String>,
    fixture: Option<String>,
) -> Result<Outcome, Failure> {
    let fixture: Option<Fixture> = fixture.map(|f| f.parse().map_err(|e: String| usage(e))).transpose()?;
    let mut requested = NetworkConfig::default();
    if let Some(n) = orgs {
        requested.orgs = (1..=n).map(|i| format!("Org{i}")).collect();
    }
    if let Some(p) = peers_per_org {
        requested.peers_per_org = p;
    }
    if let Some(s) = &seed {
        requested.seed = parse_seed(s)?;
    }
    let explicit = orgs.is_some() || peers_per_org.is_some() || seed.is_some();

    let home = ctx.home()?;
    if home.is_initialized() && explicit {
        let existing = home.read_config().map_err(home_failure)?;
        if existing != requested {
            return Err(usage(format!(
                "{} already holds a ledger with a different network",
                home.dir().display()
            )));
        }
    }
    fs::create_dir_all(ctx.workspace).map_err(|e| internal(format!("{}: {e}", ctx.workspace.display())))?;
    if let Some(f) = fixture {
        write_fixture(ctx.workspace, f).map_err(|e| internal(format!("writing fixture: {e}")))?;
    }
    let (net, created) = home.ensure(&requested).map_err(home_failure)?;
    let (height, tip) = height_and_tip(&net)?;
    let config = net.config();
    let verb = if created { "initialized" } else { "already initialized" };
    let text = format!(
        "{verb} ledger {} (channel {}, {} orgs x {} peers, height {height})\n",
        ctx.config()?.fabric_bin,
        config.channel,
        config.orgs.len(),
        config.peers_per_org
    );
    Ok(Outcome::ok(
        text,
        json!({
            "created": created,
            "channel": config.channel,
            "orgs": config.orgs,
            "peers_per_org": config.peers_per_org,
            "height": height,
            "tip": tip.to_hex(),
            "fixture": fixture.map(|f| format!("{f:?}").to_lowercase()),
        }),
    ))
}

fn run_exit(run: &PipelineRun) -> ExitCode {
    match run.overall {
        Overall::Success => ExitCode::Success,
        Overall::HaltedAtGate => ExitCode::Halt,
        Overall::Failed if run.stage_results.iter().any(|r| r.integrity_violation) => ExitCode::Integrity,
        Overall::Failed => ExitCode::Internal,
    }
}

fn render_run(run: &PipelineRun) -> String {
    let mut text = format!("{}  {:?}\n", run.run_id, run.overall);
    for r in &run.stage_results {
        let _ = write!(
            text,
            "  {:<20} {:<8} {:>10} us",
            r.name,
            format!("{:?}", r.status),
            r.duration_us
        );
        if let Some(e) = &r.error {
            let _ = write!(text, "  {e}");
        }
        text.push('\n');
    }
    let _ = writeln!(
        text,
        "  ledger txs {}  wall {} us",
        run.ledger_txs.len(),
        run.total_wall_us
    );
    text
}

fn run(ctx: &Ctx<'_>, pipeline: &Path, parallel: bool) -> Result<Outcome, Failure> {
    let mut config = ctx.config()?;
    config.parallel = parallel;
    let vars = layered_vars(&BTreeMap::new(), ctx.env);
    let def = load_pipeline_def(&ctx.path(pipeline), &vars).map_err(|e| usage(e.to_string()))?;
    let run = run_pipeline(&def, &config, ctx.workspace).map_err(|e| internal(e.to_string()))?;
    let code = run_exit(&run);
    let diagnostic = run
        .stage_results
        .iter()
        .filter(|r| matches!(r.status, StageStatus::Failed | StageStatus::Halted))
        .map(|r| {
            format!(
                "{} {:?}: {}",
                r.name,
                r.status,
                r.error.as_deref().unwrap_or("gate halted")
            )
        })
        .reduce(|a, b| format!("{a}\n{b}"));
    Ok(Outcome {
        code,
        text: render_run(&run),
        json: to_value(&run),
        diagnostic,
    })
}

fn scan_failure(e: ScanError) -> Failure {
    match e {
        ScanError::Io { .. }
        | ScanError::FeedInvalid { .. }
        | ScanError::ManifestInvalid { .. }
        | ScanError::BadThreshold(_) => usage(e.to_string()),
    }
}

fn scan(
    ctx: &Ctx<'_>,
    manifest: &Path,
    feed: &Path,
    threshold: Option<u8>,
    allowlist: Option<PathBuf>,
    mode: &str,
) -> Result<Outcome, Failure> {
    let mode: SourceMode = mode.parse().map_err(|e: String| usage(e))?;
    let feed = load_feed(&ctx.path(feed)).map_err(scan_failure)?;
    let declared_in = manifest
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let deps = load_manifest(&ctx.path(manifest), &declared_in).map_err(scan_failure)?;
    let allowlist = match allowlist {
        Some(p) => {
            let path = ctx.path(&p);
            let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            parse_allowlist(&text)
        }
        None => Vec::new(),
    };
    let report =
        scan_manifest(&deps, &feed, threshold.unwrap_or(DEFAULT_THRESHOLD), &allowlist, mode).map_err(scan_failure)?;
    let code = match report.verdict {
        Verdict::Pass => ExitCode::Success,
        Verdict::Halt => ExitCode::Halt,
    };
    Ok(Outcome {
        code,
        text: report.render_text(),
        json: to_value(&report),
        diagnostic: (code == ExitCode::Halt).then(|| {
            format!(
                "gate halted: max score {} against threshold {}",
                report.max_score, report.threshold
            )
        }),
    })
}

fn ledger_verify(ctx: &Ctx<'_>, channel: Option<&str>) -> Result<Outcome, Failure> {
    let (home, config) = ctx.channel_home(channel)?;
    if let ChainCheck::FirstBadHeight { height, fault } = home.verify().map_err(home_failure)? {
        let message = format!("FirstBadHeight {height}: {fault}");
        return Ok(Outcome {
            code: ExitCode::Integrity,
            text: format!("{message}\n"),
            json: json!({"channel": config.channel, "status": "FirstBadHeight", "height": height, "fault": fault.to_string()}),
            diagnostic: Some(message),
        });
    }
    // structure holds; signatures, policies and the state snapshot next
    let net = match home.open() {
        Ok(net) => net,
        Err(HomeError::Corrupt(detail)) => {
            let message = format!("ReplayFailed: {detail}");
            return Ok(Outcome {
                code: ExitCode::Integrity,
                text: format!("{message}\n"),
                json: json!({"channel": config.channel, "status": "ReplayFailed", "detail": detail}),
                diagnostic: Some(message),
            });
        }
        Err(e) => return Err(home_failure(e)),
    };
    let (height, tip) = height_and_tip(&net)?;
    Ok(Outcome::ok(
        format!("channel {} ok: {height} blocks, tip {}\n", config.channel, tip.to_hex()),
        json!({"channel": config.channel, "status": "Ok", "height": height, "tip": tip.to_hex()}),
    ))
}

fn ledger_query(ctx: &Ctx<'_>, channel: Option<&str>, key: &str, history: bool) -> Result<Outcome, Failure> {
    let (home, config) = ctx.channel_home(channel)?;
    let chain = home.load_chain().map_err(home_failure)?;
    let printable = |v: &[u8]| match std::str::from_utf8(v) {
        Ok(s) => s.to_string(),
        Err(_) => format!("base64:{}", crate::canonical::b64::encode(v)),
    };
    if history {
        let entries = chain.read_history(key);
        let mut text = String::new();
        for e in &entries {
            let value = e.value.as_deref().map(printable).unwrap_or_else(|| "(deleted)".into());
            let _ = writeln!(text, "{} {} {value}", e.version, e.tx_id.to_hex());
        }
        if entries.is_empty() {
            let _ = writeln!(text, "no history for {key}");
        }
        return Ok(Outcome::ok(
            text,
            json!({"channel": config.channel, "key": key, "history": to_value(&entries)}),
        ));
    }
    Ok(match chain.state().get(key) {
        Some(entry) => Outcome::ok(
            format!("{}\n", printable(&entry.value)),
            json!({"channel": config.channel, "key": key, "found": true, "entry": to_value(entry)}),
        ),
        None => Outcome::ok(
            format!("{key} not found\n"),
            json!({"channel": config.channel, "key": key, "found": false}),
        ),
    })
}

fn artifact_verify(ctx: &Ctx<'_>, digest: &str) -> Result<Outcome, Failure> {
    let digest =
        Digest::from_hex(digest).ok_or_else(|| usage(format!("--digest {digest:?} is not 64 lowercase hex digits")))?;
    let home = ctx.home()?;
    let net = home.open().map_err(home_failure)?;
    let org = net.config().orgs[0].clone();
    let client = net.client_of(&org).map_err(|e| internal(e.to_string()))?.key_id;
    let bytes = net
        .query(&client, "provenance", "verify", &[digest.to_hex()])
        .map_err(|e| internal(e.to_string()))?;
    let result: VerifyResult = serde_json::from_slice(&bytes).map_err(|e| internal(e.to_string()))?;
    let json = to_value(&result);
    Ok(match (&result.status, &result.record) {
        (ArtifactStatus::Registered, Some(r)) => Outcome::ok(
            format!(
                "{} registered: {}:{} from source {} at {}\n",
                digest.to_hex(),
                r.name,
                r.tag,
                r.source_digest.to_hex(),
                r.registered_at
            ),
            json,
        ),
        _ => Outcome {
            code: ExitCode::Integrity,
            text: format!("{} is not registered\n", digest.to_hex()),
            json,
            diagnostic: Some(format!("artifact {} is not registered on the ledger", digest.to_hex())),
        },
    })
}

fn parse_kinds(text: &str) -> Result<Vec<AttackKind>, Failure> {
    if text.trim() == "all" {
        return Ok(AttackKind::ALL.to_vec());
    }
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: String| usage(e)))
        .collect()
}

fn attack(ctx: &Ctx<'_>, kinds: &str, seeds: u32, base_seed: &str) -> Result<Outcome, Failure> {
    let kinds = parse_kinds(kinds)?;
    let digits = base_seed.strip_prefix("0x").unwrap_or(base_seed);
    let base = u64::from_str_radix(digits, 16).map_err(|e| usage(format!("bad --base-seed {base_seed:?}: {e}")))?;
    let report = run_suite(ctx.workspace, &kinds, seeds, base).map_err(|e| match e {
        AttackError::WorkspaceNotReady(_) => usage(e.to_string()),
        AttackError::Io { .. } => internal(e.to_string()),
    })?;
    let path = ctx.workspace.join(ATTACK_REPORT);
    report.write(&path).map_err(|e| internal(e.to_string()))?;

    let mut text = String::new();
    for (kind, s) in &report.per_kind {
        let _ = writeln!(
            text,
            "{:<20} {:<22} {}/{}",
            kind.name(),
            format!("{:?}", kind.stride()),
            s.detected,
            s.run
        );
    }
    let _ = writeln!(
        text,
        "detected {}/{}  missed {}  false positives {}",
        report.detected,
        report.scenarios_run,
        report.missed.len(),
        report.false_positives
    );
    let clean = report.missed.is_empty() && report.false_positives == 0;
    let diagnostic = (!clean).then(|| {
        let mut lines: Vec<String> = report
            .missed
            .iter()
            .map(|m| format!("missed {} seed {:016x}: {}", m.kind, m.seed, m.detail))
            .collect();
        lines.extend(
            report
                .control
                .iter()
                .filter(|c| c.detected)
                .map(|c| format!("false positive {}: {}", c.kind, c.detail)),
        );
        lines.join("\n")
    });
    Ok(Outcome {
        code: if clean { ExitCode::Success } else { ExitCode::Integrity },
        text,
        json: to_value(&report),
        diagnostic,
    })
}

fn report(ctx: &Ctx<'_>, run_id: &str) -> Result<Outcome, Failure> {
    let run = load_run(ctx.workspace, run_id).map_err(|e| match e {
        RunError::UnknownRun(_) => usage(e.to_string()),
        _ => internal(e.to_string()),
    })?;
    let timing = emit_timing_report(&run);
    let mut text = render_run(&run);
    let _ = writeln!(
        text,
        "  serial sum {} us  dependency check {} us ({} ppm)",
        timing.serial_sum_us, timing.depcheck_us, timing.depcheck_share_ppm
    );
    Ok(Outcome::ok(
        text,
        json!({"run": to_value(&run), "timing": to_value(&timing)}),
    ))
}

fn dispatch(cli: Cli, env: &BTreeMap<String, String>) -> Result<Outcome, Failure> {
    let ctx = Ctx {
        workspace: &cli.workspace,
        env,
    };
    match cli.command {
        Command::Init {
            orgs,
            peers_per_org,
            seed,
            fixture,
        } => init(&ctx, orgs, peers_per_org, seed, fixture),
        Command::Run { pipeline, parallel } => run(&ctx, &pipeline, parallel),
        Command::Scan {
            manifest,
            feed,
            threshold,
            allowlist,
            mode,
        } => scan(&ctx, &manifest, &feed, threshold, allowlist, &mode),
        Command::LedgerVerify { channel } => ledger_verify(&ctx, channel.as_deref()),
        Command::LedgerQuery { channel, key, history } => ledger_query(&ctx, channel.as_deref(), &key, history),
        Command::ArtifactVerify { digest } => artifact_verify(&ctx, &digest),
        Command::Attack {
            kinds,
            seeds,
            base_seed,
        } => attack(&ctx, &kinds, seeds, &base_seed),
        Command::Report { run } => report(&ctx, &run),
    }
}

/// Parse `argv` (including the program name) and execute. `env` supplies
/// the pipeline variables.
pub fn run_cli<S: AsRef<str>>(argv: &[S], env: &BTreeMap<String, String>) -> CliOutput {
    let argv: Vec<String> = argv.iter().map(|a| a.as_ref().to_string()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                CliOutput {
                    code: ExitCode::Usage.code(),
                    stdout: String::new(),
                    stderr: rendered,
                }
            } else {
                // --help and --version
                CliOutput {
                    code: ExitCode::Success.code(),
                    stdout: rendered,
                    stderr: String::new(),
                }
            };
        }
    };
    let json_mode = cli.json;
    let result = catch_unwind(AssertUnwindSafe(|| dispatch(cli, env)))
        .unwrap_or_else(|_| Err(internal("internal error: command panicked")));
    match result {
        Ok(outcome) => {
            let stdout = if json_mode {
                let bytes = canonical_encode(&outcome.json).expect("CLI JSON holds no floats");
                format!("{}\n", String::from_utf8(bytes).expect("canonical JSON is UTF-8"))
            } else {
                outcome.text
            };
            CliOutput {
                code: outcome.code.code(),
                stdout,
                stderr: outcome.diagnostic.map(|d| format!("{d}\n")).unwrap_or_default(),
            }
        }
        Err(f) => CliOutput {
            code: f.code.code(),
            stdout: String::new(),
            stderr: format!("error: {}\n", f.message),
        },
    }
}
