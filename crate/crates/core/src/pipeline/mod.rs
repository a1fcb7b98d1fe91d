//! Stage graph engine: build, package, dependency gate, ledger bootstrap
//! and deploy, serial or parallel, with per-stage timings.

mod config;
mod def;
mod engine;
mod home;
mod stages;

pub use config::{
    layered_vars, ConfigError, PipelineConfig, BUILD_NUMBER, CONTAINER_NAME, FABRIC_BIN, IMAGE_NAME, IMAGE_TAG,
    PIPELINE_VARS,
};
pub use def::{expand_vars, load_pipeline_def, DefError, PipelineDef, StageDef, StageKind};
pub use engine::{
    emit_timing_report, load_run, run_dir, run_pipeline, Overall, PipelineRun, RunError, StageResult, StageStatus,
    StageTiming, TimingReport, RUNS_DIR, RUN_REPORT, TIMING_REPORT,
};
pub use home::{HomeError, LedgerHome};
pub use stages::{
    hermetic_archive, image_file_name, package_archive, read_allowlist, read_source_tree, source_digest, stage_build,
    stage_depcheck, stage_deploy, stage_ledger_bootstrap, stage_package, write_scan_report, Bootstrapped, BuildOutput,
    DepCheckInput, Deployed, PackagedImage, StageError,
};

/// The five-stage chain: build, package, dependency gate, ledger
/// bootstrap, deploy. Each stage depends on the previous one, so a halted
/// gate skips everything that touches the ledger.
pub fn default_pipeline(src: &str, manifest: &str, feed: &str, allowlist: &str) -> PipelineDef {
    PipelineDef::new(vec![
        StageDef::new("build", StageKind::Build, &[]).param("src", src),
        StageDef::new("package", StageKind::Package, &["build"]),
        StageDef::new("dependency-check", StageKind::DepCheck, &["package"])
            .param("manifest", manifest)
            .param("feed", feed)
            .param("allowlist", allowlist),
        StageDef::new("ledger-bootstrap", StageKind::LedgerBootstrap, &["dependency-check"]),
        StageDef::new("deploy", StageKind::Deploy, &["ledger-bootstrap"]).param("environment", "production"),
    ])
    .expect("default graph is acyclic")
}
