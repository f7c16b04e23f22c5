//! Variant-aware sample assembly, the generator/discriminator training loop,
//! synthetic pre-training, checkpoints and video-to-video inference.

mod checkpoint;
mod infer;
mod run;
mod step;

pub use checkpoint::{config_hash, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use infer::{evaluate_split, infer, score_translation, TranslatedVideo};
pub use run::{pretrain, train, validate, MetricPoint, PretrainReport, TrainConfig, TrainOutcome};
pub use step::{train_step, TrainState, GRAD_CLAMP};

use crate::error::{Error, Result};
use crate::facegen::{Corpus, Emotion, EmotionLabel, Split};
use crate::losses::LossWeights;
use crate::masking::{build_generator_input, MaskSpec, MaskStrategy};
use crate::media::{AudioFeatures, Frame};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// How emotion change is encouraged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Reconstruct destination-emotion targets.
    L1,
    /// Frozen emotion classifier only; targets come from the source emotion.
    Emo,
    /// Destination targets plus the emotion classifier.
    L1Emo,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::L1, Strategy::Emo, Strategy::L1Emo];

    pub fn name(self) -> &'static str {
        match self {
            Self::L1 => "l1",
            Self::Emo => "emo",
            Self::L1Emo => "l1_emo",
        }
    }

    /// Default loss weights for this strategy.
    pub fn weights(self) -> LossWeights {
        match self {
            Self::L1 => LossWeights {
                s_e: 0.0,
                ..LossWeights::default()
            },
            Self::Emo => LossWeights::emotion_only(),
            Self::L1Emo => LossWeights::default(),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['+', '-'], "_").as_str() {
            "l1" => Ok(Self::L1),
            "emo" => Ok(Self::Emo),
            "l1_emo" => Ok(Self::L1Emo),
            other => Err(Error::invalid(format!("unknown strategy {other:?} (expected l1, emo, l1_emo)"))),
        }
    }
}

/// Which side of an emotion pair a clip is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Destination,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingRule {
    pub reference: Role,
    pub pose_prior: Role,
    pub target: Role,
}

/// Where reference, pose prior and target frames come from.
pub fn pairing(masking: MaskStrategy, strategy: Strategy) -> PairingRule {
    PairingRule {
        reference: Role::Source,
        pose_prior: match masking {
            MaskStrategy::Full => Role::Destination,
            MaskStrategy::Half => Role::Source,
        },
        target: match strategy {
            Strategy::L1 | Strategy::L1Emo => Role::Destination,
            Strategy::Emo => Role::Source,
        },
    }
}

/// The pairing rules as a printable table.
pub fn pairing_table() -> String {
    let mut s = format!("{:<8} {:<8} {:<11} {:<11} {:<11}\n", "masking", "strategy", "reference", "pose prior", "target");
    for m in [MaskStrategy::Half, MaskStrategy::Full] {
        for st in Strategy::ALL {
            let r = pairing(m, st);
            let n = |r: Role| if r == Role::Source { "source" } else { "destination" };
            s += &format!("{:<8} {:<8} {:<11} {:<11} {:<11}\n", m, st, n(r.reference), n(r.pose_prior), n(r.target));
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub masking: MaskStrategy,
    pub strategy: Strategy,
    pub weights: LossWeights,
    pub source: EmotionLabel,
    pub destination: EmotionLabel,
}

impl VariantConfig {
    pub fn new(masking: MaskStrategy, strategy: Strategy, source: EmotionLabel, destination: EmotionLabel) -> Self {
        Self {
            masking,
            strategy,
            weights: strategy.weights(),
            source,
            destination,
        }
    }

    /// Parse `"half:l1_emo"`.
    pub fn parse_variant(s: &str) -> Result<(MaskStrategy, Strategy)> {
        let (m, st) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("variant {s:?} must look like masking:strategy")))?;
        Ok((m.parse()?, st.parse()?))
    }

    /// Parse `"sad:happy"` into base-intensity labels.
    pub fn parse_pair(s: &str) -> Result<(Emotion, Emotion)> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("pair {s:?} must look like source:destination")))?;
        Ok((a.parse()?, b.parse()?))
    }

    pub fn name(&self) -> String {
        format!("{}_{}_{}_to_{}", self.masking, self.strategy, self.source.name.name(), self.destination.name.name())
    }

    pub fn rule(&self) -> PairingRule {
        pairing(self.masking, self.strategy)
    }

    pub fn mask_spec(&self) -> MaskSpec {
        MaskSpec::new(self.masking)
    }

    pub fn label(&self, role: Role) -> EmotionLabel {
        match role {
            Role::Source => self.source,
            Role::Destination => self.destination,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.source.name == self.destination.name {
            return Err(Error::Config(format!(
                "source and destination emotion are both {}",
                self.source.name.name()
            )));
        }
        Ok(())
    }
}

/// One training window.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub actor: u32,
    pub utterance: u32,
    /// First frame of the target / pose window.
    pub start: usize,
    /// First frame of the reference window.
    pub reference_start: usize,
    pub reference: Vec<Frame>,
    pub pose_prior_source: Vec<Frame>,
    pub pose_landmarks: Vec<Vec<[f32; 2]>>,
    pub target: Vec<Frame>,
    pub audio: AudioFeatures,
    pub labels: (EmotionLabel, EmotionLabel),
    pub pose_label: EmotionLabel,
    pub target_label: EmotionLabel,
    /// Reference frames channel-concatenated with the masked pose prior.
    pub input: Vec<Frame>,
}

/// Draw `batch_size` windows from the actors of `split`.
///
/// Keys lacking either emotion are skipped with a warning.
pub fn assemble_batch(
    corpus: &Corpus,
    split: Split,
    variant: &VariantConfig,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainingSample>> {
    let (src, dst) = (variant.source.name, variant.destination.name);
    let mut keys = Vec::new();
    for &a in corpus.splits.actors(split) {
        for u in corpus.utterance_ids(a, src) {
            if corpus.get(a, dst, u).is_some() {
                keys.push((a, u));
            } else {
                log::warn!("actor {a} utterance {u}: no {} clip, skipped", dst.name());
            }
        }
    }
    if keys.is_empty() {
        return Err(Error::invalid(format!(
            "no paired {}/{} utterances in the {split:?} split",
            src.name(),
            dst.name()
        )));
    }
    let window = corpus.synth().window;
    let spec = variant.mask_spec();
    let rule = variant.rule();
    (0..batch_size)
        .map(|_| {
            let &(actor, utterance) = keys.choose(rng).expect("non-empty");
            let clip = |role: Role| {
                let e = variant.label(role).name;
                corpus.get(actor, e, utterance).expect("paired key")
            };
            let (reference_clip, pose_clip, target_clip) = (clip(rule.reference), clip(rule.pose_prior), clip(rule.target));
            let n = target_clip.num_frames().min(pose_clip.num_frames()).min(reference_clip.num_frames());
            if n < window {
                return Err(Error::invalid(format!("clip shorter than window {window}")));
            }
            let start = rng.gen_range(0..=n - window);
            let reference_start = rng.gen_range(0..=reference_clip.num_frames() - window);
            let take = |c: &crate::facegen::Utterance, s: usize| c.frames[s..s + window].to_vec();
            let reference = take(reference_clip, reference_start);
            let pose_prior_source = take(pose_clip, start);
            let pose_landmarks = pose_clip.landmarks[start..start + window].to_vec();
            let spf = target_clip.steps_per_frame();
            let audio = target_clip.audio.slice_clamped((start * spf) as isize, window * spf);
            let r: Vec<&Frame> = reference.iter().collect();
            let p: Vec<&Frame> = pose_prior_source.iter().collect();
            let input = build_generator_input(&r, &p, &spec, Some(&pose_landmarks))?;
            Ok(TrainingSample {
                actor,
                utterance,
                start,
                reference_start,
                reference,
                pose_prior_source,
                pose_landmarks,
                target: take(target_clip, start),
                audio,
                labels: (variant.source, variant.destination),
                pose_label: pose_clip.emotion,
                target_label: target_clip.emotion,
                input,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairing_table_rows() {
        use MaskStrategy::*;
        use Role::*;
        use Strategy::*;
        let expect = [
            (Half, L1, Source, Destination),
            (Half, Emo, Source, Source),
            (Half, L1Emo, Source, Destination),
            (Full, L1, Destination, Destination),
            (Full, Emo, Destination, Source),
            (Full, L1Emo, Destination, Destination),
        ];
        for (m, s, pose, target) in expect {
            let r = pairing(m, s);
            assert_eq!((r.reference, r.pose_prior, r.target), (Source, pose, target), "{m}:{s}");
        }
        assert_eq!(pairing_table().lines().count(), 7);
    }

    #[test]
    fn strategy_weights() {
        assert_eq!(Strategy::Emo.weights().s_r, 0.6);
        assert_eq!(Strategy::Emo.weights().s_e, 0.3);
        assert_eq!(Strategy::L1Emo.weights(), LossWeights::default());
        assert_eq!(Strategy::L1.weights().s_e, 0.0);
        assert_eq!("L1+EMO".parse::<Strategy>().unwrap(), Strategy::L1Emo);
        assert_eq!(VariantConfig::parse_variant("full:emo").unwrap(), (MaskStrategy::Full, Strategy::Emo));
        assert!(VariantConfig::parse_variant("full").is_err());
    }
}
