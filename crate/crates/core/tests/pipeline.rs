use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ledgerci::canonical::Digest;
use ledgerci::fixtures::{write_fixture, Fixture, ALLOWLIST, FEED, MANIFEST, PIPELINE, PROJECT_DIR};
use ledgerci::ordering::NetworkConfig;
use ledgerci::pipeline::{
    default_pipeline, emit_timing_report, load_pipeline_def, load_run, run_dir, run_pipeline, stage_build,
    stage_deploy, stage_package, LedgerHome, Overall, PipelineConfig, PipelineDef, PipelineRun, StageDef, StageError,
    StageKind, StageStatus,
};
use ledgerci::vulnscan::{scan_manifest, SourceMode};
use proptest::prelude::*;

fn workspace(fixture: Fixture) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), fixture).unwrap();
    dir
}

fn home(ws: &Path) -> LedgerHome {
    LedgerHome::new(ws.join("fabric"))
}

fn deploy_keys(ws: &Path) -> Vec<String> {
    let chain = home(ws).load_chain().unwrap();
    chain.state().scan_prefix("deploy/").map(|(k, _)| k.clone()).collect()
}

fn statuses(run: &PipelineRun) -> BTreeMap<String, StageStatus> {
    run.stage_results.iter().map(|r| (r.name.clone(), r.status)).collect()
}

fn def(ws: &Path) -> PipelineDef {
    load_pipeline_def(&ws.join(PIPELINE), &BTreeMap::new()).unwrap()
}

#[test]
fn clean_fixture_deploys() {
    let ws = workspace(Fixture::Clean);
    home(ws.path()).ensure(&NetworkConfig::default()).unwrap();
    let before = home(ws.path()).load_chain().unwrap().blocks().len();
    let run = run_pipeline(&def(ws.path()), &PipelineConfig::default(), ws.path()).unwrap();
    assert_eq!(run.overall, Overall::Success, "{run:#?}");
    assert_eq!(run.ledger_txs.len(), 3);
    assert_eq!(deploy_keys(ws.path()), ["deploy/production/app-1"]);
    let chain = home(ws.path()).load_chain().unwrap();
    assert_eq!(chain.blocks().len(), before + 3);

    let digest = &run.result("package").unwrap().outputs["image_digest"];
    assert!(chain.state().get(&format!("artifact/{digest}")).is_some());
    assert_eq!(&run.result("deploy").unwrap().outputs["image_digest"], digest);
    let source = &run.result("build").unwrap().outputs["source_digest"];
    assert_eq!(&run.result("package").unwrap().outputs["source_digest"], source);

    let stored = load_run(ws.path(), &run.run_id).unwrap();
    assert_eq!(stored, run);
    let timing = emit_timing_report(&run);
    assert_eq!(timing.stages.len(), 5);
    assert!(timing.depcheck_us > 0);
    assert!(timing.total_wall_us >= timing.stages.iter().map(|s| s.duration_us).max().unwrap());
    for f in ["scan-report.json", "scan-report.txt"] {
        assert!(run_dir(ws.path(), &run.run_id)
            .join("stages/dependency-check")
            .join(f)
            .is_file());
    }
}

#[test]
fn vulnerable_fixture_halts_before_the_ledger() {
    let ws = workspace(Fixture::Vulnerable);
    home(ws.path()).ensure(&NetworkConfig::default()).unwrap();
    let run = run_pipeline(&def(ws.path()), &PipelineConfig::default(), ws.path()).unwrap();
    assert_eq!(run.overall, Overall::HaltedAtGate);
    let s = statuses(&run);
    assert_eq!(s["dependency-check"], StageStatus::Halted);
    assert_eq!(s["ledger-bootstrap"], StageStatus::Skipped);
    assert_eq!(s["deploy"], StageStatus::Skipped);
    assert!(run.ledger_txs.is_empty());
    assert!(deploy_keys(ws.path()).is_empty());
    let report = &run.result("dependency-check").unwrap().outputs["report_path"];
    assert!(ws.path().join(report).is_file());
}

#[test]
fn bootstrap_is_idempotent_and_validates_first() {
    let ws = workspace(Fixture::Clean);
    let d = def(ws.path());
    let first = run_pipeline(&d, &PipelineConfig::default(), ws.path()).unwrap();
    assert_eq!(first.overall, Overall::Success);
    assert_eq!(first.result("ledger-bootstrap").unwrap().outputs["created"], "true");
    let only_boot = PipelineDef::new(vec![StageDef::new("boot", StageKind::LedgerBootstrap, &[])]).unwrap();
    let height = home(ws.path()).load_chain().unwrap().blocks().len();
    for _ in 0..3 {
        let run = run_pipeline(&only_boot, &PipelineConfig::default(), ws.path()).unwrap();
        assert_eq!(run.overall, Overall::Success);
        assert!(run.ledger_txs.is_empty());
    }
    assert_eq!(home(ws.path()).load_chain().unwrap().blocks().len(), height);

    let block = home(ws.path()).store("cicd").block_path(2);
    let mut bytes = fs::read(&block).unwrap();
    bytes[40] ^= 0x01;
    fs::write(&block, bytes).unwrap();
    let run = run_pipeline(&only_boot, &PipelineConfig::default(), ws.path()).unwrap();
    assert_eq!(run.overall, Overall::Failed);
    let error = run.result("boot").unwrap().error.clone().unwrap();
    assert!(error.starts_with("corrupt workspace"), "{error}");
}

#[test]
fn tamper_between_package_and_deploy() {
    let ws = workspace(Fixture::Clean);
    let (mut net, _) = home(ws.path()).ensure(&NetworkConfig::default()).unwrap();
    let params = BTreeMap::from([("src".to_string(), PROJECT_DIR.to_string())]);
    let build = stage_build(&params, ws.path(), ws.path()).unwrap();
    let image = stage_package(&build, &PipelineConfig::default(), ws.path()).unwrap();
    let feed = ledgerci::vulnscan::load_feed(&ws.path().join(FEED)).unwrap();
    let deps = ledgerci::vulnscan::load_manifest(&ws.path().join(MANIFEST), "deps.json").unwrap();
    let allow = ledgerci::pipeline::read_allowlist(&ws.path().join(ALLOWLIST)).unwrap();
    let report = scan_manifest(&deps, &feed, 70, &allow, SourceMode::Strict).unwrap();

    let path = ws.path().join(&image.path);
    let mut bytes = fs::read(&path).unwrap();
    bytes[10] ^= 0x20;
    fs::write(&path, &bytes).unwrap();
    match stage_deploy(&mut net, &image, &report, "production", ws.path()) {
        Err(StageError::DigestMismatch { registered, on_disk }) => {
            assert_eq!(registered, image.digest);
            assert_eq!(on_disk, Digest::of(&bytes));
        }
        other => panic!("expected DigestMismatch, got {other:?}"),
    }
    drop(net);
    assert!(deploy_keys(ws.path()).is_empty());
}

#[test]
fn ungated_halt_is_refused_by_the_contract() {
    let ws = workspace(Fixture::Vulnerable);
    let mut stages = default_pipeline(PROJECT_DIR, MANIFEST, FEED, ALLOWLIST)
        .stages()
        .to_vec();
    stages[2].params.insert("gate".into(), "false".into());
    let d = PipelineDef::new(stages).unwrap();
    let run = run_pipeline(&d, &PipelineConfig::default(), ws.path()).unwrap();
    assert_eq!(run.result("dependency-check").unwrap().status, StageStatus::Success);
    assert_eq!(run.result("dependency-check").unwrap().outputs["verdict"], "Halt");
    let deploy = run.result("deploy").unwrap();
    assert_eq!(deploy.status, StageStatus::Failed);
    assert!(deploy.error.as_deref().unwrap().starts_with("no passing attestation"));
    assert_eq!(run.overall, Overall::Failed);
    assert!(deploy_keys(ws.path()).is_empty());
}

fn fan_out_def() -> PipelineDef {
    let mut stages = default_pipeline(PROJECT_DIR, MANIFEST, FEED, ALLOWLIST)
        .stages()
        .to_vec();
    stages.push(
        StageDef::new("lint", StageKind::Custom, &[])
            .param("sleep_ms", "60")
            .param("lint", "ok"),
    );
    stages.push(
        StageDef::new("docs", StageKind::Custom, &[])
            .param("sleep_ms", "60")
            .param("docs", "ok"),
    );
    stages.push(StageDef::new("publish", StageKind::Custom, &["lint", "docs", "deploy"]));
    PipelineDef::new(stages).unwrap()
}

#[test]
fn parallel_matches_serial() {
    let serial_ws = workspace(Fixture::Clean);
    let parallel_ws = workspace(Fixture::Clean);
    let d = fan_out_def();
    let serial = run_pipeline(&d, &PipelineConfig::default(), serial_ws.path()).unwrap();
    let config = PipelineConfig {
        parallel: true,
        ..PipelineConfig::default()
    };
    let parallel = run_pipeline(&d, &config, parallel_ws.path()).unwrap();
    assert_eq!(serial.overall, Overall::Success);
    assert_eq!(statuses(&serial), statuses(&parallel));
    let outputs = |r: &PipelineRun| -> BTreeMap<String, BTreeMap<String, String>> {
        r.stage_results
            .iter()
            .map(|s| (s.name.clone(), s.outputs.clone()))
            .collect()
    };
    assert_eq!(outputs(&serial), outputs(&parallel));
    let mut a = serial.ledger_txs.clone();
    let mut b = parallel.ledger_txs.clone();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    let digest = |ws: &Path| home(ws).load_chain().unwrap().state().digest();
    assert_eq!(digest(serial_ws.path()), digest(parallel_ws.path()));
    let image = "dist/app-latest.img";
    assert_eq!(
        fs::read(serial_ws.path().join(image)).unwrap(),
        fs::read(parallel_ws.path().join(image)).unwrap()
    );

    let t = emit_timing_report(&parallel);
    assert!(t.total_wall_us <= t.serial_sum_us, "{t:?}");
    let s = emit_timing_report(&serial);
    assert!(s.total_wall_us >= s.serial_sum_us);
}

#[test]
fn failure_skips_transitive_dependents_only() {
    let ws = tempfile::tempdir().unwrap();
    let d = PipelineDef::new(vec![
        StageDef::new("a", StageKind::Custom, &[]).param("fail", "boom"),
        StageDef::new("b", StageKind::Custom, &["a"]),
        StageDef::new("c", StageKind::Custom, &["b"]),
        StageDef::new("d", StageKind::Custom, &[]),
        StageDef::new("e", StageKind::Custom, &["d", "c"]),
    ])
    .unwrap();
    for parallel in [false, true] {
        let config = PipelineConfig {
            parallel,
            ..PipelineConfig::default()
        };
        let run = run_pipeline(&d, &config, ws.path()).unwrap();
        let s = statuses(&run);
        assert_eq!(s["a"], StageStatus::Failed);
        assert_eq!(s["d"], StageStatus::Success);
        for n in ["b", "c", "e"] {
            assert_eq!(s[n], StageStatus::Skipped, "{n}");
        }
        assert_eq!(run.overall, Overall::Failed);
        assert_eq!(run.result("a").unwrap().error.as_deref(), Some("boom"));
        assert_eq!(run.stage_results.len(), 5);
    }
}

#[test]
fn missing_image_name_fails_package() {
    let ws = workspace(Fixture::Clean);
    let config = PipelineConfig::resolve(
        &BTreeMap::from([("IMAGE_NAME".to_string(), String::new())]),
        &BTreeMap::new(),
    )
    .unwrap();
    let run = run_pipeline(&def(ws.path()), &config, ws.path()).unwrap();
    assert_eq!(run.result("package").unwrap().status, StageStatus::Failed);
    assert_eq!(
        run.result("package").unwrap().error.as_deref(),
        Some("IMAGE_NAME is empty")
    );
    assert_eq!(run.overall, Overall::Failed);
}

#[test]
fn packaging_reproduces_across_workspaces() {
    let a = workspace(Fixture::Clean);
    let b = workspace(Fixture::Clean);
    let pkg_only =
        PipelineDef::new(default_pipeline(PROJECT_DIR, MANIFEST, FEED, ALLOWLIST).stages()[..2].to_vec()).unwrap();
    let ra = run_pipeline(&pkg_only, &PipelineConfig::default(), a.path()).unwrap();
    let rb = run_pipeline(&pkg_only, &PipelineConfig::default(), b.path()).unwrap();
    assert_eq!(
        ra.result("package").unwrap().outputs["image_digest"],
        rb.result("package").unwrap().outputs["image_digest"]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // gate completeness: HaltedAtGate iff the scan halts, never a deploy key on halt
    #[test]
    fn gate_decides_deployment(minor in 0u32..20, patch in 0u32..3, threshold in prop::sample::select(vec![70u8, 100])) {
        let ws = workspace(Fixture::Clean);
        let manifest = ws.path().join(MANIFEST);
        let mut deps: serde_json::Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
        deps[0]["version"] = format!("2.{minor}.{patch}").into();
        fs::write(&manifest, serde_json::to_vec(&deps).unwrap()).unwrap();
        let config = PipelineConfig { threshold, ..PipelineConfig::default() };
        let run = run_pipeline(&def(ws.path()), &config, ws.path()).unwrap();
        let verdict = &run.result("dependency-check").unwrap().outputs["verdict"];
        prop_assert_eq!(run.overall == Overall::HaltedAtGate, verdict == "Halt");
        if verdict == "Halt" {
            prop_assert!(!home(ws.path()).is_initialized() || deploy_keys(ws.path()).is_empty());
        } else {
            prop_assert_eq!(run.overall, Overall::Success);
            prop_assert_eq!(deploy_keys(ws.path()).len(), 1);
        }
        let vulnerable = (minor, patch) < (15, 0) && (minor, patch) >= (0, 1);
        prop_assert_eq!(verdict == "Halt", vulnerable);
    }
}
