//! The JSON pipeline configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use mfd_core::dataset::DEFAULT_NOISE_SIGMA;
use mfd_core::deconv::DeconvConfig;
use mfd_core::flow::FlowDomain;
use mfd_core::net::{ArchSpec, TrainConfig};
use mfd_core::sim::SimConfig;
use mfd_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Classifier size: `full` is the complete architecture, `toy` halves the
/// channel widths for desk-scale runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchPreset {
    Full,
    Toy,
}

/// Optional default locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub corpus_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub dom: FlowDomain,
    pub sim: SimConfig,
    pub noise_sigma: f64,
    pub arch: ArchPreset,
    pub train: TrainConfig,
    pub deconv: DeconvConfig,
    /// Blurred variants generated per corpus image (a zero-flow record is
    /// always added on top).
    pub count_per_image: usize,
    /// Global seed; every stage derives its randomness from it unless
    /// --seed overrides.
    pub seed: u64,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let dom = FlowDomain::new(8, 8).expect("static domain");
        let sim = SimConfig::for_domain(&dom);
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            dom,
            sim,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            arch: ArchPreset::Toy,
            train: TrainConfig::default(),
            deconv: DeconvConfig::default(),
            count_per_image: 3,
            seed: 0,
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Param(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Param(format!(
                "config schema version {} unsupported, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if !self.noise_sigma.is_finite() || !(0.0..=1.0).contains(&self.noise_sigma) {
            return Err(Error::Param(format!(
                "noise_sigma must lie in [0,1], got {}",
                self.noise_sigma
            )));
        }
        self.sim.validate()?;
        self.train.validate()?;
        self.deconv.validate()?;
        Ok(())
    }

    /// The canonical serialized form; loading and re-serializing a config
    /// is idempotent on this representation.
    pub fn canonical(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(self).expect("config serialization is infallible");
        text.push('\n');
        text
    }

    pub fn arch_spec(&self) -> ArchSpec {
        match self.arch {
            ArchPreset::Full => ArchSpec::full(self.dom.clone()),
            ArchPreset::Toy => ArchSpec::toy(self.dom.clone()),
        }
    }
}
