//! Pipeline run configuration: one JSON file with a section per command.

use crate::error::{Error, Result};
use crate::facegen::{CorpusConfig, Emotion, EmotionLabel};
use crate::losses::LossWeights;
use crate::masking::MaskStrategy;
use crate::model::ModelConfig;
use crate::scorers::ScorerConfig;
use crate::train::{Strategy, TrainConfig, VariantConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantSection {
    pub masking: MaskStrategy,
    pub strategy: Strategy,
    pub source: Emotion,
    pub destination: Emotion,
    /// Overrides the strategy's default weights.
    pub weights: Option<LossWeights>,
}

impl Default for VariantSection {
    fn default() -> Self {
        Self {
            masking: MaskStrategy::Half,
            strategy: Strategy::L1Emo,
            source: Emotion::Sad,
            destination: Emotion::Happy,
            weights: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// When set, overrides every per-section seed.
    pub seed: Option<u64>,
    /// Worker threads for parallel stages (0 = all cores).
    pub workers: usize,
    pub corpus_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub scorer: ScorerConfig,
    pub pretrain: TrainConfig,
    pub train: TrainConfig,
    pub variant: VariantSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            workers: 0,
            corpus_dir: PathBuf::from("corpus"),
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            scorer: ScorerConfig::default(),
            pretrain: TrainConfig {
                steps: 800,
                eval_interval: 0,
                ..TrainConfig::default()
            },
            train: TrainConfig::default(),
            variant: VariantSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Apply the global seed and derive model shapes from the corpus.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(s) = self.seed {
            self.corpus.seed = s;
            self.scorer.seed = s;
            self.pretrain.seed = s;
            self.train.seed = s;
        }
        let synth = &self.corpus.synth;
        self.model.height = synth.height;
        self.model.width = synth.width;
        self.model.steps_per_frame = synth.steps_per_frame;
        self.model.bands = synth.bands;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        self.variant()?.validate()?;
        Ok(self)
    }

    /// Variant with base-intensity labels taken from the corpus emotion list.
    pub fn variant(&self) -> Result<VariantConfig> {
        let label = |e: Emotion| -> Result<EmotionLabel> {
            self.corpus
                .emotions
                .iter()
                .copied()
                .find(|l| l.name == e)
                .ok_or_else(|| Error::Config(format!("corpus has no {} clips", e.name())))
        };
        let v = &self.variant;
        let mut out = VariantConfig::new(v.masking, v.strategy, label(v.source)?, label(v.destination)?);
        if let Some(w) = v.weights {
            out.weights = w;
        }
        Ok(out)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
