//! Pipeline configuration, loaded from TOML or JSON and patched by flags.

use std::fs;
use std::path::{Path, PathBuf};

use gazesal_core::cgrpo::GrpoConfig;
use gazesal_core::clustering::ClusterPolicy;
use gazesal_core::data_model::Protocol;
use gazesal_core::rewards::RewardConfig;
use gazesal_core::saliency::KernelConfig;
use gazesal_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub gaze: PathBuf,
    pub profiles: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            gaze: "data/gaze.csv".into(),
            profiles: "data/profiles.csv".into(),
            manifest: "data/manifest.json".into(),
            out: "out".into(),
        }
    }
}

/// Which points serve as ground truth during `eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    Raw,
    Clustered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub protocols: Vec<Protocol>,
    /// `csv` or `jsonl`.
    pub gaze_format: String,
    pub ground_truth: GroundTruth,
    pub cluster: ClusterPolicy,
    pub kernel: KernelConfig,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            protocols: vec![Protocol::P1, Protocol::P2],
            gaze_format: "csv".into(),
            ground_truth: GroundTruth::Raw,
            cluster: ClusterPolicy::default(),
            kernel: KernelConfig::default(),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a config file; `.json` files are parsed as JSON, everything
    /// else as TOML.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::at(path, CoreError::io(path, e)))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.protocols.is_empty() {
            return Err(CliError::Config("no protocols selected".into()));
        }
        self.gaze_format
            .parse::<gazesal_core::data_model::GazeFormat>()
            .map_err(CliError::Config)?;
        self.reward.validate()?;
        self.grpo.validate()?;
        if !(self.cluster.base.eps > 0.0 && self.cluster.strict.eps > 0.0) {
            return Err(CliError::Config("DBSCAN eps must be positive".into()));
        }
        Ok(())
    }
}
