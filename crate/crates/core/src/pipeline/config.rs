use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AssemblyConfig, PipelineError};
use crate::matching::MatchConfig;
use crate::retrieval::RetrievalConfig;
use crate::robust::RansacConfig;
use crate::sfm::SfmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodOneConfig {
    /// Approximate number of grid samples drawn from a dense warp.
    pub target_samples: usize,
    /// Samples below this certainty are dropped.
    pub certainty_floor: f64,
    /// Emit zero motion tagged `FAILED_ZERO` when estimation fails instead
    /// of aborting the run.
    pub identity_on_failure: bool,
}

impl Default for MethodOneConfig {
    fn default() -> Self {
        Self { target_samples: 5000, certainty_floor: 0.1, identity_on_failure: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodTwoConfig {
    /// Propose pairs from embeddings (off reproduces a purely sequential run).
    pub use_retrieval: bool,
    /// Pairs with fewer geometrically verified matches are not passed to
    /// reconstruction.
    pub min_verified_matches: usize,
}

impl Default for MethodTwoConfig {
    fn default() -> Self {
        Self { use_retrieval: true, min_verified_matches: 15 }
    }
}

/// Configuration of a full run, read from TOML. Every section and field is
/// optional.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub matching: MatchConfig,
    pub ransac: RansacConfig,
    pub retrieval: RetrievalConfig,
    pub sfm: SfmConfig,
    pub assembly: AssemblyConfig,
    pub method_one: MethodOneConfig,
    pub method_two: MethodTwoConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::io::IoError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Seeds used by the randomized stages.
    pub fn ransac(&self) -> RansacConfig {
        RansacConfig { seed: self.seed, ..self.ransac }
    }

    pub fn sfm(&self) -> SfmConfig {
        SfmConfig { pnp: crate::sfm::PnpConfig { seed: self.seed, ..self.sfm.pnp }, ..self.sfm }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.matching.validate()?;
        self.ransac.validate()?;
        self.retrieval.validate()?;
        self.sfm.validate()?;
        self.assembly.validate()?;
        if self.method_one.target_samples == 0 || !(0.0..=1.0).contains(&self.method_one.certainty_floor) {
            return Err(PipelineError::InvalidConfig("method_one needs target_samples > 0 and certainty_floor in [0, 1]".into()));
        }
        if self.method_two.min_verified_matches < 8 {
            return Err(PipelineError::InvalidConfig("method_two.min_verified_matches must be at least 8".into()));
        }
        Ok(())
    }
}
