//! Run configuration: one TOML document holding every sub-config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augmentation::StrategyName;
use crate::detector::ExemplarModel;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::post_learning::PostLearnConfig;
use crate::proposal::{AnchorConfig, ProposalConfig, RoiConfig, SamplingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub detect_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { detect_threshold: 0.9 }
    }
}

/// Optimizer settings of the original CNN training. Recorded for parity only;
/// the exemplar detector has no optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerProvenance {
    pub momentum: f64,
    pub learning_rate: f64,
    pub max_epochs: u32,
}

impl Default for OptimizerProvenance {
    fn default() -> Self {
        OptimizerProvenance {
            momentum: 0.9,
            learning_rate: 1e-3,
            max_epochs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rng_seed: u64,
    pub augmentation: StrategyName,
    pub anchor: AnchorConfig,
    pub sampling: SamplingConfig,
    pub proposal: ProposalConfig,
    pub roi: RoiConfig,
    pub detector: DetectorConfig,
    pub post_learn: PostLearnConfig,
    pub eval: EvalConfig,
    pub optimizer: OptimizerProvenance,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.anchor.validate()?;
        self.sampling().validate()?;
        self.proposal.validate()?;
        self.roi.validate()?;
        self.post_learn.validate()?;
        self.eval.validate()?;
        if !(0.0..=1.0).contains(&self.detector.detect_threshold) {
            return Err(Error::InvalidConfig(format!(
                "detect_threshold {} outside [0, 1]",
                self.detector.detect_threshold
            )));
        }
        Ok(())
    }

    /// Sampling settings seeded from the run seed.
    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            rng_seed: self.rng_seed,
            ..self.sampling.clone()
        }
    }

    /// An untrained reference detector with this run's settings.
    pub fn new_model(&self) -> ExemplarModel {
        ExemplarModel::new(
            self.detector.detect_threshold,
            self.roi,
            self.anchor.clone(),
            self.proposal.clone(),
        )
    }
}
