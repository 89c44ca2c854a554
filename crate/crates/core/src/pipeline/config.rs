use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fusion::FusionParams;
use crate::planner::PlannerParams;
use crate::registration::ClusterTolerance;
use crate::sim::{MappingParams, OdometryModel, SensorModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientMode {
    #[default]
    Mock,
    Replay,
    Live,
}

impl std::str::FromStr for ClientMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(ClientMode::Mock),
            "replay" => Ok(ClientMode::Replay),
            "live" => Ok(ClientMode::Live),
            _ => Err(format!("unknown client {s:?} (expected mock, replay or live)")),
        }
    }
}

/// Input overrides. Unset paths default to the previous stage's artifact in
/// the output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub world: Option<PathBuf>,
    /// Directory of per-robot map files.
    pub maps: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    /// Mission file with the instruction and expected per-robot goals.
    pub goals: Option<PathBuf>,
    pub trials: Option<PathBuf>,
    pub cassette: Option<PathBuf>,
    /// Instruction/response JSON lines for the mock client.
    pub replies: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_objects: usize,
    pub extent: [f64; 2],
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { n_objects: 150, extent: [120.0, 120.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundingConfig {
    pub capabilities: BTreeMap<String, String>,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self { capabilities: crate::grounding::default_capabilities() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelocalizationConfig {
    /// Length of the query re-traversal, meters.
    pub query_length: f64,
    /// Where along the first robot's route the query starts, meters.
    pub start_along: f64,
    /// Heading error of the query's own frame, degrees.
    pub heading_offset_deg: f64,
    pub tolerance: ClusterTolerance,
}

impl Default for RelocalizationConfig {
    fn default() -> Self {
        Self { query_length: 40.0, start_along: 4.0, heading_offset_deg: 8.0, tolerance: ClusterTolerance::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub client: ClientMode,
    pub paths: PathsConfig,
    pub world: WorldConfig,
    pub odometry: OdometryModel,
    pub sensor: SensorModel,
    pub mapping: MappingParams,
    pub fusion: FusionParams,
    pub relocalization: RelocalizationConfig,
    pub planner: PlannerParams,
    pub grounding: GroundingConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    Read { path: String, message: String },
    #[error("config file {path}: {message}")]
    Parse { path: String, message: String },
}

impl PipelineConfig {
    pub fn from_toml(text: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: name.clone(), message: e.to_string() })?;
        Self::from_toml(&text, &name)
    }
}
