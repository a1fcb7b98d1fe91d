use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::def::{expand_vars, DefError};
use crate::vulnscan::{SourceMode, DEFAULT_THRESHOLD};

pub const FABRIC_BIN: &str = "FABRIC_BIN";
pub const IMAGE_NAME: &str = "IMAGE_NAME";
pub const IMAGE_TAG: &str = "IMAGE_TAG";
pub const CONTAINER_NAME: &str = "CONTAINER_NAME";
pub const BUILD_NUMBER: &str = "BUILD_NUMBER";

/// The variables a pipeline reads, with their built-in defaults.
pub const PIPELINE_VARS: [(&str, &str); 5] = [
    (FABRIC_BIN, "fabric"),
    (IMAGE_NAME, "app"),
    (IMAGE_TAG, "latest"),
    (CONTAINER_NAME, "${IMAGE_NAME}-${BUILD_NUMBER}"),
    (BUILD_NUMBER, "1"),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{name} must be a non-negative integer, got {value:?}")]
    BadNumber { name: String, value: String },
    #[error(transparent)]
    Template(#[from] DefError),
}

/// Everything a run needs besides the definition. `fabric_bin` is the
/// ledger home, relative paths resolve against the workspace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub fabric_bin: String,
    pub image_name: String,
    pub image_tag: String,
    /// Unrendered; may reference `${BUILD_NUMBER}` and the other variables.
    pub container_name: String,
    pub build_number: u64,
    pub parallel: bool,
    pub threshold: u8,
    pub allowlist: Vec<String>,
    pub mode: SourceMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::resolve(&BTreeMap::new(), &BTreeMap::new()).expect("defaults are valid")
    }
}

/// Merge variable layers: `explicit` over `process` over built-in
/// defaults. Keys outside the pipeline set pass through from both layers.
pub fn layered_vars(
    explicit: &BTreeMap<String, String>,
    process: &BTreeMap<String, String>,
) -> BTreeMap<String, String> {
    let mut vars: BTreeMap<String, String> = PIPELINE_VARS
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    vars.extend(process.iter().map(|(k, v)| (k.clone(), v.clone())));
    vars.extend(explicit.iter().map(|(k, v)| (k.clone(), v.clone())));
    vars
}

impl PipelineConfig {
    pub fn resolve(
        explicit: &BTreeMap<String, String>,
        process: &BTreeMap<String, String>,
    ) -> Result<Self, ConfigError> {
        let vars = layered_vars(explicit, process);
        let number = &vars[BUILD_NUMBER];
        let build_number = number.parse().map_err(|_| ConfigError::BadNumber {
            name: BUILD_NUMBER.into(),
            value: number.clone(),
        })?;
        Ok(PipelineConfig {
            fabric_bin: vars[FABRIC_BIN].clone(),
            image_name: vars[IMAGE_NAME].clone(),
            image_tag: vars[IMAGE_TAG].clone(),
            container_name: vars[CONTAINER_NAME].clone(),
            build_number,
            parallel: false,
            threshold: DEFAULT_THRESHOLD,
            allowlist: Vec::new(),
            mode: SourceMode::Strict,
        })
    }

    /// The five pipeline variables as currently configured.
    pub fn vars(&self) -> BTreeMap<String, String> {
        [
            (FABRIC_BIN, self.fabric_bin.clone()),
            (IMAGE_NAME, self.image_name.clone()),
            (IMAGE_TAG, self.image_tag.clone()),
            (CONTAINER_NAME, self.container_name.clone()),
            (BUILD_NUMBER, self.build_number.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// `CONTAINER_NAME` with its variables filled in.
    pub fn render_container_name(&self) -> Result<String, DefError> {
        let mut vars = self.vars();
        vars.remove(CONTAINER_NAME);
        expand_vars(&self.container_name, &vars)
    }

    pub fn ledger_home(&self, workspace: &Path) -> PathBuf {
        workspace.join(&self.fabric_bin)
    }
}
