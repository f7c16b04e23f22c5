use super::VariantConfig;
use crate::error::{Error, Result};
use crate::eval::{delta_affect, lse_metrics, video_affect, VideoAffect, VideoRecord};
use crate::facegen::{Corpus, Emotion, Split, Utterance};
use crate::masking::{build_generator_input, MaskSpec};
use crate::media::{AudioFeatures, Frame};
use crate::model::Generator;

/// Output of [`infer`]: translated frames plus the untouched input audio.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslatedVideo {
    pub frames: Vec<Frame>,
    pub audio: AudioFeatures,
}

const INFER_CHUNK: usize = 32;

/// Translate a whole clip with sliding windows (stride 1) and keep each
/// window's centre frame.
///
/// Windows near the ends repeat the edge frame. The generator maps frames
/// independently, so a window's centre output depends only on the centre
/// frame's reference, pose prior and audio chunk; those are batched directly.
pub fn infer(
    frames: &[Frame],
    audio: &AudioFeatures,
    landmarks: Option<&[Vec<[f32; 2]>]>,
    gen: &Generator,
    mask: &MaskSpec,
    window: usize,
) -> Result<TranslatedVideo> {
    let n = frames.len();
    if n < window || window == 0 {
        return Err(Error::invalid(format!("video has {n} frames, window is {window}")));
    }
    let spf = gen.config.steps_per_frame;
    if audio.steps != n * spf {
        return Err(Error::shape(&[n * spf], &[audio.steps]));
    }
    if let Some(lm) = landmarks {
        if lm.len() != n {
            return Err(Error::invalid(format!("{} landmark lists for {n} frames", lm.len())));
        }
    }
    let mut out = Vec::with_capacity(n);
    for chunk_start in (0..n).step_by(INFER_CHUNK) {
        let idx: Vec<usize> = (chunk_start..(chunk_start + INFER_CHUNK).min(n)).collect();
        let refs: Vec<&Frame> = idx.iter().map(|&i| &frames[i]).collect();
        let lms: Option<Vec<Vec<[f32; 2]>>> = landmarks.map(|l| idx.iter().map(|&i| l[i].clone()).collect());
        let input = build_generator_input(&refs, &refs, mask, lms.as_deref())?;
        let chunks: Vec<AudioFeatures> = idx
            .iter()
            .map(|&i| audio.slice_clamped((i * spf) as isize, spf))
            .collect();
        let chunk_refs: Vec<&AudioFeatures> = chunks.iter().collect();
        out.extend(gen.generate(&input, &chunk_refs)?);
    }
    Ok(TranslatedVideo {
        frames: out,
        audio: audio.clone(),
    })
}

/// Score a translated clip against its source and destination ground truth.
pub fn score_translation(
    frames: &[Frame],
    audio: &AudioFeatures,
    src: &Utterance,
    dst: &Utterance,
    scorer: &crate::scorers::Scorer,
) -> Result<VideoRecord> {
    if src.actor_id != dst.actor_id || src.utterance_id != dst.utterance_id {
        return Err(Error::invalid("source and destination clips are not paired"));
    }
    let src_affect = video_affect(&src.frames, scorer)?;
    // an output with no detectable face is credited with no change
    let gen_affect = match video_affect(frames, scorer) {
        Err(Error::NoFace) => VideoAffect {
            frame_count: 0,
            skipped: frames.len(),
            ..src_affect
        },
        other => other?,
    };
    let dst_affect = video_affect(&dst.frames, scorer)?;
    let destination = dst.emotion.name;
    Ok(VideoRecord {
        source: src.emotion.name,
        destination,
        actor: src.actor_id,
        utterance: src.utterance_id,
        gen: gen_affect,
        src: src_affect,
        dst: dst_affect,
        delta: delta_affect(&gen_affect, &src_affect, &dst_affect, destination == Emotion::Neutral),
        lse: lse_metrics(frames, audio, scorer)?,
    })
}

/// Translate every paired source clip of `split` and score it against its
/// source and destination ground truth.
pub fn evaluate_split(
    corpus: &Corpus,
    split: Split,
    gen: &Generator,
    variant: &VariantConfig,
    scorer: &crate::scorers::Scorer,
) -> Result<Vec<(VideoRecord, TranslatedVideo)>> {
    let (src, dst) = (variant.source.name, variant.destination.name);
    let mask = variant.mask_spec();
    let mut out = Vec::new();
    for &actor in corpus.splits.actors(split) {
        for u in corpus.utterance_ids(actor, src) {
            let (Some(s), Some(d)) = (corpus.get(actor, src, u), corpus.get(actor, dst, u)) else {
                log::warn!("actor {actor} utterance {u}: missing {} clip", dst.name());
                continue;
            };
            let video = infer(&s.frames, &s.audio, Some(&s.landmarks), gen, &mask, corpus.synth().window)?;
            let record = score_translation(&video.frames, &video.audio, s, d, scorer)?;
            out.push((record, video));
        }
    }
    Ok(out)
}
