//! Single-document pipeline configuration: one JSON file with a section per
//! stage, every section optional and falling back to its defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::CurationSpec;
use crate::downstream::PredictorConfig;
use crate::error::{Error, Result};
use crate::fairness::FairnessObjective;
use crate::generator::GeneratorConfig;
use crate::harness::ExperimentConfig;
use crate::preprocess::PreprocessConfig;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct PipelineConfig {
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    /// Shape of the differentiable fairness term used during generator
    /// training; its kind is still selected by `generator.fairness_objective`.
    #[serde(default)]
    pub fairness: FairnessObjective,
    #[serde(default)]
    pub predictor: PredictorConfig,
    /// Standalone curation run settings; the experiment grid supplies its
    /// own cell sizes and ignores this section.
    #[serde(default)]
    pub curation: Option<CurationSpec>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl PipelineConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: PipelineConfig = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: {e}", path.display()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.generator.validate()?;
        self.predictor.validate()?;
        if let Some(curation) = &self.curation {
            curation.validate()?;
        }
        self.experiment.validate()?;
        if self.fairness.temperature <= 0.0 {
            return Err(Error::Config("fairness temperature must be positive".into()));
        }
        Ok(())
    }

    /// Content hash of the canonical serialized form, for report provenance.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}
