use super::{assemble_batch, evaluate_split, infer, train_step, Checkpoint, Strategy, TrainState, VariantConfig};
use crate::error::{Error, Result};
use crate::eval::sync_cosine;
use crate::facegen::{Corpus, Emotion, Split};
use crate::losses::{LossBreakdown, LossLog, LossWeights};
use crate::masking::MaskStrategy;
use crate::model::{init_params, ModelConfig};
use crate::nn::AdamConfig;
use crate::scorers::Scorer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Learning rate for the small-frame, short-budget runs.
pub const DESK_LR: f32 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    /// Windows per batch.
    pub batch_windows: usize,
    /// Validation every this many steps (0 disables).
    pub eval_interval: u64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch_windows: 2,
            eval_interval: 100,
            adam: AdamConfig {
                lr: DESK_LR,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_windows == 0 {
            return Err(Error::Config("batch_windows must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Validation summary at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub step: u64,
    pub d_valence: Option<f64>,
    pub d_arousal: Option<f64>,
    pub lse_d: f64,
}

impl MetricPoint {
    pub const HEADER: &'static str = "step,d_valence,d_arousal,lse_d";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.9e}"));
        format!("{},{},{},{:.9e}", self.step, f(self.d_valence), f(self.d_arousal), self.lse_d)
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Mean emotion-change ratios and sync distance over a split.
pub fn validate(corpus: &Corpus, split: Split, state: &TrainState, variant: &VariantConfig, scorer: &Scorer) -> Result<MetricPoint> {
    let recs = evaluate_split(corpus, split, &state.gen, variant, scorer)?;
    Ok(MetricPoint {
        step: state.step,
        d_valence: mean(recs.iter().filter_map(|(r, _)| r.delta.d_valence)),
        d_arousal: mean(recs.iter().filter_map(|(r, _)| r.delta.d_arousal)),
        lse_d: mean(recs.iter().map(|(r, _)| r.lse.lse_d)).unwrap_or(f64::NAN),
    })
}

fn fingerprints(scorer: &Scorer) -> BTreeMap<String, String> {
    BTreeMap::from([("scorer".to_string(), scorer.fingerprint())])
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: TrainState,
    /// Best validation Δ-valence and the state that reached it.
    pub best: Option<(MetricPoint, TrainState)>,
    pub initial: MetricPoint,
    /// One row per `eval_interval` steps.
    pub history: Vec<MetricPoint>,
    pub losses: Vec<LossBreakdown>,
}

/// Fine-tune one variant from `init`.
///
/// With `out_dir`, writes `loss.csv`, `metrics.csv`, `last.ckpt` and
/// `best.ckpt` (plus sidecars).
pub fn train(
    corpus: &Corpus,
    variant: &VariantConfig,
    scorer: &Scorer,
    init: TrainState,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    variant.validate()?;
    cfg.validate()?;
    let fp_before = scorer.fingerprint();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = init;
    state.opt_g.config = cfg.adam;
    state.opt_d.config = cfg.adam;
    let mut log = out_dir.map(|d| LossLog::create(&d.join("loss.csv"))).transpose()?;
    let mut metrics = match out_dir {
        Some(d) => {
            let mut f = std::fs::File::create(d.join("metrics.csv"))?;
            writeln!(f, "{}", MetricPoint::HEADER)?;
            Some(f)
        }
        None => None,
    };
    let initial = if cfg.eval_interval > 0 {
        validate(corpus, Split::Val, &state, variant, scorer)?
    } else {
        MetricPoint {
            step: state.step,
            d_valence: None,
            d_arousal: None,
            lse_d: f64::NAN,
        }
    };
    let mut history = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    let mut best: Option<(MetricPoint, TrainState)> = None;
    for i in 1..=cfg.steps {
        let batch = assemble_batch(corpus, Split::Train, variant, cfg.batch_windows, &mut rng)?;
        let b = train_step(&mut state, &batch, variant, scorer)?;
        if let Some(l) = log.as_mut() {
            l.append(state.step, &b)?;
        }
        losses.push(b);
        if cfg.eval_interval > 0 && i % cfg.eval_interval == 0 {
            let m = validate(corpus, Split::Val, &state, variant, scorer)?;
            log::info!("{} step {}: {m:?}", variant.name(), state.step);
            if let Some(f) = metrics.as_mut() {
                writeln!(f, "{}", m.csv_row())?;
            }
            let better = match (&best, m.d_valence) {
                (_, None) => false,
                (None, Some(_)) => true,
                (Some((bm, _)), Some(v)) => bm.d_valence.map_or(true, |bv| v > bv),
            };
            if better {
                best = Some((m, state.clone()));
            }
            history.push(m);
        }
    }
    if scorer.fingerprint() != fp_before {
        return Err(Error::Numerical("scorer parameters changed during training".into()));
    }
    if let Some(d) = out_dir {
        Checkpoint::new(state.clone(), Some(variant.clone()), fingerprints(scorer)).save(&d.join("last.ckpt"))?;
        let best_state = best.as_ref().map_or(&state, |(_, s)| s);
        Checkpoint::new(best_state.clone(), Some(variant.clone()), fingerprints(scorer)).save(&d.join("best.ckpt"))?;
    }
    Ok(TrainOutcome {
        last: state,
        best,
        initial,
        history,
        losses,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: u64,
    pub final_loss: LossBreakdown,
    /// Mean offset-0 sync cosine of generated validation clips.
    pub sync_cosine: f64,
    pub scorer_fingerprint: String,
}

/// Minimum validation sync cosine a pre-trained generator must reach.
pub const PRETRAIN_SYNC_TARGET: f64 = 0.9;

/// Self-reconstruction of neutral clips with half masking, sync, L1 and
/// adversarial objectives (no emotion objective).
///
/// Returns the state even when the sync target is missed; callers decide
/// whether that is fatal (see [`PretrainReport::check`]).
pub fn pretrain(
    corpus: &Corpus,
    model: &ModelConfig,
    scorer: &Scorer,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(TrainState, PretrainReport)> {
    cfg.validate()?;
    let neutral = corpus
        .label(Emotion::Neutral)
        .ok_or_else(|| Error::invalid("pre-training needs neutral clips"))?;
    let variant = VariantConfig {
        weights: LossWeights {
            s_e: 0.0,
            ..LossWeights::default()
        },
        ..VariantConfig::new(MaskStrategy::Half, Strategy::L1, neutral, neutral)
    };
    let (g, d) = init_params(model, cfg.seed)?;
    let mut state = TrainState::new(g, d, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37);
    let mut log = out_dir.map(|d| LossLog::create(&d.join("loss.csv"))).transpose()?;
    let fp = scorer.fingerprint();
    let mut last = LossBreakdown::default();
    for _ in 0..cfg.steps {
        let batch = assemble_batch(corpus, Split::Train, &variant, cfg.batch_windows, &mut rng)?;
        last = train_step(&mut state, &batch, &variant, scorer)?;
        if let Some(l) = log.as_mut() {
            l.append(state.step, &last)?;
        }
    }
    let mut cos = Vec::new();
    let mask = variant.mask_spec();
    for &a in &corpus.splits.val_actors {
        for u in corpus.utterance_ids(a, Emotion::Neutral) {
            let clip = corpus.get(a, Emotion::Neutral, u).expect("listed");
            let out = infer(&clip.frames, &clip.audio, Some(&clip.landmarks), &state.gen, &mask, corpus.synth().window)?;
            cos.push(sync_cosine(&out.frames, &out.audio, scorer)?);
        }
    }
    let report = PretrainReport {
        steps: cfg.steps,
        final_loss: last,
        sync_cosine: mean(cos.into_iter()).unwrap_or(f64::NAN),
        scorer_fingerprint: fp,
    };
    if scorer.fingerprint() != report.scorer_fingerprint {
        return Err(Error::Numerical("scorer parameters changed during pre-training".into()));
    }
    if let Some(d) = out_dir {
        Checkpoint::new(state.clone(), None, fingerprints(scorer)).save(&d.join("pretrain.ckpt"))?;
        std::fs::write(d.join("pretrain_report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok((state, report))
}

impl PretrainReport {
    /// Error unless the sync target was reached.
    pub fn check(&self, loss_curve: &Path) -> Result<()> {
        if self.sync_cosine >= PRETRAIN_SYNC_TARGET {
            Ok(())
        } else {
            Err(Error::Numerical(format!(
                "pre-training reached sync cosine {:.4} < {PRETRAIN_SYNC_TARGET} after {} steps; loss curve: {}",
                self.sync_cosine,
                self.steps,
                loss_curve.display()
            )))
        }
    }
}
