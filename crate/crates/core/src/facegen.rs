//! Procedural paired-emotion talking-face corpus.
//!
//! Faces are drawn analytically: an identity-coloured ellipse with eyes, two
//! tilted brows and a mouth whose curvature carries the expression and whose
//! opening follows the audio envelope. Every utterance exists in each emotion
//! with identical articulation, pose and audio.

use crate::container;
use crate::error::{Error, Result};
use crate::media::{grey, AudioFeatures, Frame, FPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Geometry shared by the renderer and the analytic scorers, in fractions of
/// the frame size.
pub mod layout {
    pub const FACE_CX: f32 = 0.5;
    pub const FACE_CY: f32 = 0.5;
    pub const FEATURE_DX: f32 = 0.17;
    pub const BROW_Y: f32 = 0.24;
    pub const BROW_HALF_W: f32 = 0.085;
    pub const BROW_HALF_T: f32 = 0.02;
    pub const BROW_TILT: f32 = 0.03;
    pub const EYE_Y: f32 = 0.45;
    pub const EYE_HALF_W: f32 = 0.065;
    pub const EYE_HALF_H_MIN: f32 = 0.012;
    pub const EYE_HALF_H_OPEN: f32 = 0.028;
    pub const MOUTH_Y: f32 = 0.72;
    pub const MOUTH_HALF_W: f32 = 0.17;
    pub const MOUTH_CURVE: f32 = 0.07;
    pub const LIP_HALF_T: f32 = 0.014;
    pub const MOUTH_OPEN: f32 = 0.06;
    /// Largest head translation as a fraction of the frame size.
    pub const POSE_MAX: f32 = 0.02;
    /// Luma of skin, dark features and background; identities vary only in
    /// chroma and face shape.
    pub const SKIN_LUMA: f32 = 0.65;
    pub const FEATURE_LUMA: f32 = 0.06;
    pub const BACKGROUND_LUMA: f32 = 0.9;
    pub const BOUNDARY_POINTS: usize = 16;
    pub const LANDMARK_COUNT: usize = 28;
}

/// Indices of the face-boundary ring inside a landmark list.
pub fn boundary_indices() -> Vec<usize> {
    (0..layout::BOUNDARY_POINTS).collect()
}

pub const MIN_FRAME_SIZE: usize = 32;
pub const EXPRESSION_CURVE: f32 = 0.6;
pub const EXPRESSION_BROW: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Happy,
    Neutral,
    Sad,
}

impl Emotion {
    /// Fixed class order used by emotion logits.
    pub const ALL: [Emotion; 3] = [Emotion::Happy, Emotion::Neutral, Emotion::Sad];

    pub fn class_index(self) -> usize {
        match self {
            Self::Happy => 0,
            Self::Neutral => 1,
            Self::Sad => 2,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Happy => "happy",
            Self::Neutral => "neutral",
            Self::Sad => "sad",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "happy" => Ok(Self::Happy),
            "neutral" => Ok(Self::Neutral),
            "sad" => Ok(Self::Sad),
            other => Err(Error::invalid(format!("unknown emotion label {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EmotionLabel {
    pub name: Emotion,
    pub intensity: u32,
}

impl EmotionLabel {
    pub fn new(name: Emotion, intensity: u32) -> Result<Self> {
        if intensity == 0 {
            return Err(Error::invalid("emotion intensity must be >= 1"));
        }
        if name == Emotion::Neutral && intensity != 1 {
            return Err(Error::invalid("neutral intensity is fixed at 1"));
        }
        Ok(Self { name, intensity })
    }

    pub fn base(name: Emotion) -> Self {
        Self { name, intensity: 1 }
    }

    /// Directory component, e.g. `happy_1`.
    pub fn dir_name(&self) -> String {
        format!("{}_{}", self.name, self.intensity)
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    /// `happy` or `happy:3`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, intensity) = match s.split_once(':') {
            Some((n, i)) => (
                n,
                i.parse::<u32>()
                    .map_err(|_| Error::invalid(format!("bad intensity in {s:?}")))?,
            ),
            None => (s, 1),
        };
        Self::new(name.parse()?, intensity)
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.intensity)
    }
}

/// Label presets: every emotion at intensity 1, or happy/sad at level 3 with
/// neutral at level 1.
pub fn intensity_preset(strong: bool) -> Vec<EmotionLabel> {
    let lvl = if strong { 3 } else { 1 };
    vec![
        EmotionLabel::base(Emotion::Happy).with_intensity(lvl),
        EmotionLabel::base(Emotion::Neutral),
        EmotionLabel::base(Emotion::Sad).with_intensity(lvl),
    ]
}

impl EmotionLabel {
    fn with_intensity(mut self, i: u32) -> Self {
        self.intensity = i;
        self
    }
}

/// Expression offset added to the neutral base face.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpressionDelta {
    pub mouth_curve: f32,
    pub brow_angle: f32,
}

fn intensity_gain(intensity: u32) -> f32 {
    // 1.0, 1.5, 1.67, ... saturating, monotone in intensity
    2.0 - 1.0 / intensity as f32
}

pub fn emotion_params(label: EmotionLabel) -> ExpressionDelta {
    let sign = match label.name {
        Emotion::Happy => 1.0,
        Emotion::Sad => -1.0,
        Emotion::Neutral => return ExpressionDelta::default(),
    };
    let g = intensity_gain(label.intensity);
    ExpressionDelta {
        mouth_curve: sign * (EXPRESSION_CURVE * g).min(1.0),
        brow_angle: sign * (EXPRESSION_BROW * g).min(1.0),
    }
}

/// String-label variant that rejects unknown names.
pub fn emotion_params_by_name(name: &str, intensity: u32) -> Result<ExpressionDelta> {
    Ok(emotion_params(EmotionLabel::new(name.parse()?, intensity)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub mouth_open: f32,
    pub mouth_curve: f32,
    pub brow_angle: f32,
    pub eye_open: f32,
    /// Head translation in pixels.
    pub pose_dx: f32,
    pub pose_dy: f32,
    pub identity_seed: u64,
}

impl FaceParams {
    pub fn neutral(identity_seed: u64) -> Self {
        Self {
            mouth_open: 0.0,
            mouth_curve: 0.0,
            brow_angle: 0.0,
            eye_open: 0.8,
            pose_dx: 0.0,
            pose_dy: 0.0,
            identity_seed,
        }
    }

    pub fn with_expression(mut self, d: ExpressionDelta) -> Self {
        self.mouth_curve = (self.mouth_curve + d.mouth_curve).clamp(-1.0, 1.0);
        self.brow_angle = (self.brow_angle + d.brow_angle).clamp(-1.0, 1.0);
        self
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let unit = |v: f32, lo: f32, name: &str| {
            if v.is_finite() && (lo..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name}={v} outside [{lo}, 1]")))
            }
        };
        unit(self.mouth_open, 0.0, "mouth_open")?;
        unit(self.mouth_curve, -1.0, "mouth_curve")?;
        unit(self.brow_angle, -1.0, "brow_angle")?;
        unit(self.eye_open, 0.0, "eye_open")?;
        let (mx, my) = (
            layout::POSE_MAX * width as f32 + 1e-4,
            layout::POSE_MAX * height as f32 + 1e-4,
        );
        if !(self.pose_dx.abs() <= mx && self.pose_dy.abs() <= my) {
            return Err(Error::invalid(format!(
                "pose ({}, {}) exceeds +-({mx}, {my}) px",
                self.pose_dx, self.pose_dy
            )));
        }
        Ok(())
    }
}

/// Per-actor appearance derived from `identity_seed`.
#[derive(Clone, Copy, Debug)]
pub struct Identity {
    pub skin: [f32; 3],
    pub background: [f32; 3],
    pub hair: [f32; 3],
    pub mouth: [f32; 3],
    pub face_rx: f32,
    pub face_ry: f32,
}

impl Identity {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d3f_a5e0_77c1_0b9d);
        // random chroma around a fixed luma; rejection keeps channels in range
        let mut colour = |luma: f32, amp: f32| loop {
            let d = [
                rng.gen_range(-amp..=amp),
                rng.gen_range(-amp..=amp),
                rng.gen_range(-amp..=amp),
            ];
            let shift = luma - grey(d[0], d[1], d[2]);
            let c = [d[0] + shift, d[1] + shift, d[2] + shift];
            if c.iter().all(|v| (0.0..=1.0).contains(v)) {
                return c;
            }
        };
        let skin = colour(layout::SKIN_LUMA, 0.2);
        let background = colour(layout::BACKGROUND_LUMA, 0.08);
        let hair = colour(layout::FEATURE_LUMA, 0.05);
        let mouth = colour(layout::FEATURE_LUMA, 0.05);
        Self {
            skin,
            background,
            hair,
            mouth,
            face_rx: rng.gen_range(0.38..0.42),
            face_ry: rng.gen_range(0.43..0.46),
        }
    }
}

/// Pixel-inclusive bounding box `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

pub struct RenderOutput {
    pub frame: Frame,
    pub landmarks: Vec<[f32; 2]>,
    /// Region that any change of `mouth_open` can touch.
    pub mouth_box: PixelBox,
}

/// Integral of the unit tent kernel: coverage of a half-plane whose edge is
/// `d` pixels away (positive = inside).
#[inline]
fn edge(d: f32) -> f32 {
    if d <= -1.0 {
        0.0
    } else if d <= 0.0 {
        0.5 * (d + 1.0) * (d + 1.0)
    } else if d < 1.0 {
        1.0 - 0.5 * (1.0 - d) * (1.0 - d)
    } else {
        1.0
    }
}

/// Tent-filtered coverage of the band `|x| <= half` (pixels). Sampled on the
/// pixel grid its mass is `2 * half` and its centroid is exact.
#[inline]
fn band(x: f32, half: f32) -> f32 {
    edge(x + half) - edge(x - half)
}

fn blend(px: &mut [f32; 3], c: [f32; 3], a: f32) {
    if a > 0.0 {
        for i in 0..3 {
            px[i] = px[i] * (1.0 - a) + c[i] * a;
        }
    }
}

struct Geometry {
    w: f32,
    h: f32,
    cx: f32,
    cy: f32,
}

impl Geometry {
    fn px(&self, fx: f32) -> f32 {
        (self.cx + fx) * self.w
    }

    fn py(&self, fy: f32) -> f32 {
        (self.cy + fy) * self.h
    }
}

fn brow_y(side: f32, u: f32, tilt: f32) -> f32 {
    // side = -1 for the left brow (inner end at u = +1), +1 for the right
    layout::BROW_Y - layout::FACE_CY - side * tilt * u
}

fn mouth_center_y(u: f32, curve: f32) -> f32 {
    layout::MOUTH_Y - layout::FACE_CY - layout::MOUTH_CURVE * curve * u * u
}

fn mouth_half_t(u: f32, open: f32) -> f32 {
    // the centre line and lip band extend past the corners without clamping so
    // every column centroid lies on the same quadratic
    layout::LIP_HALF_T + layout::MOUTH_OPEN * open * (1.0 - u * u).max(0.0)
}

pub fn render_frame(params: &FaceParams, size: (usize, usize)) -> Result<RenderOutput> {
    let (height, width) = size;
    if height < MIN_FRAME_SIZE || width < MIN_FRAME_SIZE {
        return Err(Error::invalid(format!(
            "frame size {height}x{width} below minimum {MIN_FRAME_SIZE}"
        )));
    }
    params.validate(height, width)?;
    let id = Identity::from_seed(params.identity_seed);
    let g = Geometry {
        w: width as f32,
        h: height as f32,
        cx: layout::FACE_CX + params.pose_dx / width as f32,
        cy: layout::FACE_CY + params.pose_dy / height as f32,
    };
    let tilt = layout::BROW_TILT * params.brow_angle;
    let eye_hh = layout::EYE_HALF_H_MIN + layout::EYE_HALF_H_OPEN * params.eye_open;
    let mut frame = Frame::new(height, width, 3);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = (x as f32 + 0.5, y as f32 + 0.5);
            let mut px = id.background;
            let (ex, ey) = ((sx - g.px(0.0)) / (id.face_rx * g.w), (sy - g.py(0.0)) / (id.face_ry * g.h));
            let r = (ex * ex + ey * ey).sqrt();
            blend(&mut px, id.skin, edge((1.0 - r) * id.face_rx.min(id.face_ry) * g.w.min(g.h)));
            for side in [-1.0f32, 1.0] {
                let fx = g.px(side * layout::FEATURE_DX);
                let (dx, dy) = (
                    (sx - fx) / (layout::EYE_HALF_W * g.w),
                    (sy - g.py(layout::EYE_Y - layout::FACE_CY)) / (eye_hh * g.h),
                );
                let er = (dx * dx + dy * dy).sqrt();
                blend(&mut px, id.hair, edge((1.0 - er) * eye_hh * g.h));
                let half_w = layout::BROW_HALF_W * g.w;
                let cx = band(sx - fx, half_w);
                if cx > 0.0 {
                    let line = g.py(brow_y(side, (sx - fx) / half_w, tilt));
                    blend(&mut px, id.hair, cx * band(sy - line, layout::BROW_HALF_T * g.h));
                }
            }
            let half_w = layout::MOUTH_HALF_W * g.w;
            let cx = band(sx - g.px(0.0), half_w);
            if cx > 0.0 {
                let u = (sx - g.px(0.0)) / half_w;
                let line = g.py(mouth_center_y(u, params.mouth_curve));
                let cy = band(sy - line, mouth_half_t(u, params.mouth_open) * g.h);
                blend(&mut px, id.mouth, cx * cy);
            }
            for (c, v) in px.iter().enumerate() {
                frame.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(RenderOutput {
        frame,
        landmarks: landmarks(&g, &id, params, tilt, eye_hh),
        mouth_box: mouth_box(&g, params.mouth_curve, width, height),
    })
}

fn landmarks(g: &Geometry, id: &Identity, p: &FaceParams, tilt: f32, eye_hh: f32) -> Vec<[f32; 2]> {
    let clamp = |x: f32, y: f32| [x.clamp(0.0, g.w - 1e-3), y.clamp(0.0, g.h - 1e-3)];
    let mut out = Vec::with_capacity(layout::LANDMARK_COUNT);
    for k in 0..layout::BOUNDARY_POINTS {
        let a = std::f32::consts::TAU * k as f32 / layout::BOUNDARY_POINTS as f32;
        out.push(clamp(
            g.px(id.face_rx * a.cos()),
            g.py(id.face_ry * a.sin()),
        ));
    }
    // brows: left outer, centre, inner; right inner, centre, outer
    for (side, us) in [(-1.0f32, [-1.0f32, 0.0, 1.0]), (1.0, [-1.0, 0.0, 1.0])] {
        for u in us {
            out.push(clamp(
                g.px(side * layout::FEATURE_DX + u * layout::BROW_HALF_W),
                g.py(brow_y(side, u, tilt)),
            ));
        }
    }
    for side in [-1.0f32, 1.0] {
        out.push(clamp(g.px(side * layout::FEATURE_DX), g.py(layout::EYE_Y - layout::FACE_CY)));
    }
    let _ = eye_hh;
    for u in [-1.0f32, 1.0] {
        out.push(clamp(
            g.px(u * layout::MOUTH_HALF_W),
            g.py(mouth_center_y(u, p.mouth_curve)),
        ));
    }
    let c = mouth_center_y(0.0, p.mouth_curve);
    let t = mouth_half_t(0.0, p.mouth_open);
    out.push(clamp(g.px(0.0), g.py(c - t)));
    out.push(clamp(g.px(0.0), g.py(c + t)));
    out
}

fn mouth_box(g: &Geometry, curve: f32, width: usize, height: usize) -> PixelBox {
    // mouth_open only changes the lip band for |u| < 1
    let mut ylo = f32::INFINITY;
    let mut yhi = f32::NEG_INFINITY;
    for i in 0..=64 {
        let u = -1.0 + 2.0 * i as f32 / 64.0;
        let c = mouth_center_y(u, curve);
        let t = mouth_half_t(u, 1.0);
        ylo = ylo.min(c - t);
        yhi = yhi.max(c + t);
    }
    let x0 = g.px(-layout::MOUTH_HALF_W) - 1.5;
    let x1 = g.px(layout::MOUTH_HALF_W) + 1.5;
    let (y0, y1) = (g.py(ylo) - 1.5, g.py(yhi) + 1.5);
    let clampx = |v: f32| (v.floor().max(0.0) as usize).min(width - 1);
    let clampy = |v: f32| (v.floor().max(0.0) as usize).min(height - 1);
    PixelBox {
        x0: clampx(x0),
        y0: clampy(y0),
        x1: clampx(x1),
        y1: clampy(y1),
    }
}

/// Shape constants of synthesized clips.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Frames per training / scoring window.
    pub window: usize,
    pub steps_per_frame: usize,
    pub bands: usize,
    /// Per-frame expression jitter amplitude.
    pub jitter: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            window: 5,
            steps_per_frame: 4,
            bands: 16,
            jitter: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub actor_id: u32,
    pub utterance_id: u32,
    pub emotion: EmotionLabel,
    pub seed: u64,
    pub frames: Vec<Frame>,
    pub audio: AudioFeatures,
    pub landmarks: Vec<Vec<[f32; 2]>>,
    /// Ground-truth render parameters per frame.
    pub params: Vec<FaceParams>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn steps_per_frame(&self) -> usize {
        self.audio.steps / self.frames.len()
    }
}

fn mix(parts: &[u64]) -> u64 {
    // splitmix64 fold
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

pub fn identity_seed(corpus_seed: u64, actor_id: u32) -> u64 {
    mix(&[corpus_seed, 0xface, actor_id as u64])
}

/// Audio envelope at feature-step resolution, in `[0.03, 0.97]`.
fn speech_envelope(rng: &mut ChaCha8Rng, steps: usize, steps_per_frame: usize) -> Vec<f32> {
    let f1 = rng.gen_range(2.0..3.5f32);
    let f2 = rng.gen_range(3.5..5.0f32);
    let (p1, p2) = (rng.gen_range(0.0..std::f32::consts::TAU), rng.gen_range(0.0..std::f32::consts::TAU));
    let rate = (FPS as usize * steps_per_frame) as f32;
    (0..steps)
        .map(|s| {
            let t = s as f32 / rate;
            let v = 0.5
                + 0.28 * (std::f32::consts::TAU * f1 * t + p1).sin()
                + 0.17 * (std::f32::consts::TAU * f2 * t + p2).sin();
            v.clamp(0.03, 0.97)
        })
        .collect()
}

pub fn synth_utterance(
    actor_id: u32,
    utterance_id: u32,
    emotion: EmotionLabel,
    num_frames: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Utterance> {
    if num_frames < cfg.window {
        return Err(Error::invalid(format!(
            "num_frames {num_frames} shorter than window {}",
            cfg.window
        )));
    }
    let spf = cfg.steps_per_frame;
    let steps = num_frames * spf;
    let mut art = ChaCha8Rng::seed_from_u64(mix(&[seed, actor_id as u64, utterance_id as u64]));
    let env = speech_envelope(&mut art, steps, spf);

    let profile: Vec<f32> = (0..cfg.bands).map(|_| art.gen_range(0.6..1.4f32)).collect();
    let pmean = profile.iter().sum::<f32>() / cfg.bands as f32;
    let (omega, phi) = (art.gen_range(5.0..9.0f32), art.gen_range(0.0..std::f32::consts::TAU));
    let mut audio = Vec::with_capacity(steps * cfg.bands);
    for (s, &e) in env.iter().enumerate() {
        let pert: Vec<f32> = (0..cfg.bands)
            .map(|m| {
                0.2 * (std::f32::consts::TAU * m as f32 / cfg.bands as f32 * 2.0
                    + omega * s as f32 / spf as f32
                    + phi)
                    .sin()
            })
            .collect();
        let pm = pert.iter().sum::<f32>() / cfg.bands as f32;
        audio.extend((0..cfg.bands).map(|m| e * (profile[m] / pmean + pert[m] - pm)));
    }
    let audio = AudioFeatures {
        steps,
        bands: cfg.bands,
        data: audio,
    };
    let mouth = audio.frame_envelope(spf);

    let max_dx = layout::POSE_MAX * cfg.width as f32;
    let max_dy = layout::POSE_MAX * cfg.height as f32;
    let (gx, gy) = (art.gen_range(0.2..0.5f32), art.gen_range(0.2..0.5f32));
    let (ax, ay) = (art.gen_range(0.3..1.0f32), art.gen_range(0.3..1.0f32));
    let (px, py, pe) = (
        art.gen_range(0.0..std::f32::consts::TAU),
        art.gen_range(0.0..std::f32::consts::TAU),
        art.gen_range(0.0..std::f32::consts::TAU),
    );

    let mut jit = ChaCha8Rng::seed_from_u64(mix(&[
        seed,
        actor_id as u64,
        utterance_id as u64,
        emotion.name.class_index() as u64 + 1,
        emotion.intensity as u64,
    ]));
    let id_seed = identity_seed(seed, actor_id);
    let delta = emotion_params(emotion);
    let size = (cfg.height, cfg.width);
    let mut frames = Vec::with_capacity(num_frames);
    let mut landmarks = Vec::with_capacity(num_frames);
    let mut params = Vec::with_capacity(num_frames);
    for (f, &open) in mouth.iter().enumerate() {
        let t = f as f32 / FPS as f32;
        let mut p = FaceParams {
            mouth_open: (open as f32).clamp(0.0, 1.0),
            eye_open: 0.75 + 0.2 * (std::f32::consts::TAU * 0.3 * t + pe).sin(),
            pose_dx: max_dx * ax * (std::f32::consts::TAU * gx * t + px).sin(),
            pose_dy: max_dy * ay * (std::f32::consts::TAU * gy * t + py).sin(),
            ..FaceParams::neutral(id_seed)
        }
        .with_expression(delta);
        if cfg.jitter > 0.0 {
            p.mouth_curve = (p.mouth_curve + jit.gen_range(-cfg.jitter..=cfg.jitter)).clamp(-1.0, 1.0);
            p.brow_angle = (p.brow_angle + jit.gen_range(-cfg.jitter..=cfg.jitter)).clamp(-1.0, 1.0);
        }
        let r = render_frame(&p, size)?;
        frames.push(r.frame);
        landmarks.push(r.landmarks);
        params.push(p);
    }
    Ok(Utterance {
        actor_id,
        utterance_id,
        emotion,
        seed,
        frames,
        audio,
        landmarks,
        params,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub actors: usize,
    /// Train / validation / test actor counts.
    pub splits: [usize; 3],
    pub utterances: usize,
    pub frames: usize,
    pub synth: SynthConfig,
    pub emotions: Vec<EmotionLabel>,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            actors: 12,
            splits: [8, 2, 2],
            utterances: 4,
            frames: 50,
            synth: SynthConfig::default(),
            emotions: intensity_preset(false),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_actors: Vec<u32>,
    pub val_actors: Vec<u32>,
    pub test_actors: Vec<u32>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl SplitSpec {
    pub fn actors(&self, split: Split) -> &[u32] {
        match split {
            Split::Train => &self.train_actors,
            Split::Val => &self.val_actors,
            Split::Test => &self.test_actors,
        }
    }
}

pub fn make_splits(actors: usize, counts: [usize; 3], seed: u64) -> Result<SplitSpec> {
    if actors < 3 {
        return Err(Error::invalid(format!("need at least 3 actors, got {actors}")));
    }
    if counts.iter().any(|&c| c == 0) || counts.iter().sum::<usize>() != actors {
        return Err(Error::invalid(format!(
            "split counts {counts:?} must be positive and sum to {actors}"
        )));
    }
    let mut ids: Vec<u32> = (0..actors as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0x5b117]));
    for i in (1..ids.len()).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let take = |n: usize, from: &mut Vec<u32>| {
        let mut v: Vec<u32> = from.drain(..n).collect();
        v.sort_unstable();
        v
    };
    Ok(SplitSpec {
        train_actors: take(counts[0], &mut ids),
        val_actors: take(counts[1], &mut ids),
        test_actors: take(counts[2], &mut ids),
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UtteranceKey {
    pub actor: u32,
    pub emotion: Emotion,
    pub utterance: u32,
}

/// In-memory corpus; see [`write_corpus`] / [`load_corpus`] for the on-disk form.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub splits: SplitSpec,
    pub utterances: BTreeMap<UtteranceKey, Utterance>,
}

impl Corpus {
    pub fn get(&self, actor: u32, emotion: Emotion, utterance: u32) -> Option<&Utterance> {
        self.utterances.get(&UtteranceKey {
            actor,
            emotion,
            utterance,
        })
    }

    pub fn utterance_ids(&self, actor: u32, emotion: Emotion) -> Vec<u32> {
        self.utterances
            .keys()
            .filter(|k| k.actor == actor && k.emotion == emotion)
            .map(|k| k.utterance)
            .collect()
    }

    pub fn synth(&self) -> &SynthConfig {
        &self.config.synth
    }

    pub fn label(&self, emotion: Emotion) -> Option<EmotionLabel> {
        self.config.emotions.iter().copied().find(|l| l.name == emotion)
    }
}

pub fn make_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    let splits = make_splits(cfg.actors, cfg.splits, cfg.seed)?;
    if cfg.emotions.is_empty() {
        return Err(Error::invalid("corpus needs at least one emotion"));
    }
    let mut jobs = Vec::new();
    for actor in 0..cfg.actors as u32 {
        for &label in &cfg.emotions {
            for utt in 0..cfg.utterances as u32 {
                jobs.push((actor, label, utt));
            }
        }
    }
    let built: Vec<Utterance> = jobs
        .par_iter()
        .map(|&(a, l, u)| synth_utterance(a, u, l, cfg.frames, cfg.seed, &cfg.synth))
        .collect::<Result<_>>()?;
    let utterances = built
        .into_iter()
        .map(|u| {
            (
                UtteranceKey {
                    actor: u.actor_id,
                    emotion: u.emotion.name,
                    utterance: u.utterance_id,
                },
                u,
            )
        })
        .collect();
    Ok(Corpus {
        config: cfg.clone(),
        splits,
        utterances,
    })
}

#[derive(Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub actor: u32,
    pub utterance: u32,
    pub emotion: EmotionLabel,
    pub fps: u32,
    pub seed: u64,
    pub steps_per_frame: usize,
    pub params: Vec<FaceParams>,
}

pub fn utterance_dir(root: &Path, actor: u32, emotion: EmotionLabel, utterance: u32) -> std::path::PathBuf {
    root.join(format!("{actor:03}"))
        .join(emotion.dir_name())
        .join(format!("{utterance:03}"))
}

pub fn write_utterance(dir: &Path, u: &Utterance) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let f0 = &u.frames[0];
    let mut data = Vec::with_capacity(u.frames.len() * f0.data.len());
    for f in &u.frames {
        data.extend_from_slice(&f.data);
    }
    container::write(
        &dir.join("frames.bin"),
        &[u.frames.len(), f0.height, f0.width, f0.channels],
        &data,
    )?;
    container::write(&dir.join("audio.bin"), &[u.audio.steps, u.audio.bands], &u.audio.data)?;
    std::fs::write(dir.join("landmarks.json"), serde_json::to_vec(&u.landmarks)?)?;
    let meta = UtteranceMeta {
        actor: u.actor_id,
        utterance: u.utterance_id,
        emotion: u.emotion,
        fps: FPS,
        seed: u.seed,
        steps_per_frame: u.steps_per_frame(),
        params: u.params.clone(),
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn read_utterance(dir: &Path) -> Result<Utterance> {
    let meta: UtteranceMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
    let frames_path = dir.join("frames.bin");
    let (dims, data) = container::read(&frames_path)?;
    if dims.len() != 4 {
        return Err(Error::Format {
            path: frames_path,
            reason: format!("expected [T, H, W, C], got {dims:?}"),
        });
    }
    let per = dims[1] * dims[2] * dims[3];
    let frames = data
        .chunks_exact(per)
        .map(|c| Frame::from_data(dims[1], dims[2], dims[3], c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let audio_path = dir.join("audio.bin");
    let (adims, adata) = container::read(&audio_path)?;
    if adims.len() != 2 {
        return Err(Error::Format {
            path: audio_path,
            reason: format!("expected [steps, bands], got {adims:?}"),
        });
    }
    let landmarks_path = dir.join("landmarks.json");
    let landmarks: Vec<Vec<[f32; 2]>> = if landmarks_path.exists() {
        serde_json::from_slice(&std::fs::read(landmarks_path)?)?
    } else {
        Vec::new()
    };
    Ok(Utterance {
        actor_id: meta.actor,
        utterance_id: meta.utterance,
        emotion: meta.emotion,
        seed: meta.seed,
        frames,
        audio: AudioFeatures {
            steps: adims[0],
            bands: adims[1],
            data: adata,
        },
        landmarks,
        params: meta.params,
    })
}

pub fn write_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root)?;
    for u in corpus.utterances.values() {
        write_utterance(&utterance_dir(root, u.actor_id, u.emotion, u.utterance_id), u)?;
    }
    std::fs::write(root.join("splits.json"), serde_json::to_vec_pretty(&corpus.splits)?)?;
    std::fs::write(root.join("corpus.json"), serde_json::to_vec_pretty(&corpus.config)?)?;
    Ok(())
}

pub fn load_corpus(root: &Path) -> Result<Corpus> {
    let config: CorpusConfig = serde_json::from_slice(&std::fs::read(root.join("corpus.json"))?)?;
    let splits: SplitSpec = serde_json::from_slice(&std::fs::read(root.join("splits.json"))?)?;
    let mut utterances = BTreeMap::new();
    for actor in 0..config.actors as u32 {
        for &label in &config.emotions {
            for utt in 0..config.utterances as u32 {
                let dir = utterance_dir(root, actor, label, utt);
                if !dir.exists() {
                    log::warn!("missing utterance {}", dir.display());
                    continue;
                }
                let u = read_utterance(&dir)?;
                utterances.insert(
                    UtteranceKey {
                        actor,
                        emotion: label.name,
                        utterance: utt,
                    },
                    u,
                );
            }
        }
    }
    Ok(Corpus {
        config,
        splits,
        utterances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            height: 32,
            width: 32,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn neutral_is_identity_and_happy_sad_mirror() {
        let n = emotion_params(EmotionLabel::base(Emotion::Neutral));
        assert_eq!(n, ExpressionDelta::default());
        let h = emotion_params(EmotionLabel::base(Emotion::Happy));
        let s = emotion_params(EmotionLabel::base(Emotion::Sad));
        assert_eq!(h.mouth_curve, -s.mouth_curve);
        assert_eq!(h.brow_angle, -s.brow_angle);
        assert!(h.mouth_curve > 0.0);
        let h2 = emotion_params(EmotionLabel::new(Emotion::Happy, 2).unwrap());
        assert!(h2.mouth_curve.abs() >= h.mouth_curve.abs());
        assert!(emotion_params_by_name("angry", 1).is_err());
        assert!(EmotionLabel::new(Emotion::Neutral, 3).is_err());
        assert!(EmotionLabel::new(Emotion::Happy, 0).is_err());
        assert_eq!("sad:3".parse::<EmotionLabel>().unwrap().intensity, 3);
    }

    #[test]
    fn render_is_deterministic_and_bounded() {
        let p = FaceParams {
            mouth_open: 0.4,
            pose_dx: 0.5,
            ..FaceParams::neutral(7)
        };
        let a = render_frame(&p, (32, 40)).unwrap();
        let b = render_frame(&p, (32, 40)).unwrap();
        assert_eq!(a.frame, b.frame);
        assert!(a.frame.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.landmarks.len() >= 16);
        assert_eq!(a.landmarks.len(), layout::LANDMARK_COUNT);
        for l in &a.landmarks {
            assert!(l[0] >= 0.0 && l[0] < 40.0 && l[1] >= 0.0 && l[1] < 32.0);
        }
        assert!(render_frame(&p, (16, 64)).is_err());
        let bad = FaceParams {
            mouth_open: 1.5,
            ..p
        };
        assert!(render_frame(&bad, (32, 32)).is_err());
    }

    #[test]
    fn mouth_open_only_changes_mouth_box() {
        for (size, curve, dx) in [((32, 32), 0.6, 0.5), ((64, 64), -0.6, -1.2), ((48, 40), 0.0, 0.0)] {
            let base = FaceParams {
                mouth_open: 0.1,
                mouth_curve: curve,
                pose_dx: dx,
                ..FaceParams::neutral(3)
            };
            let a = render_frame(&base, size).unwrap();
            let b = render_frame(&FaceParams { mouth_open: 0.9, ..base }, size).unwrap();
            let mut changed = 0;
            for y in 0..size.0 {
                for x in 0..size.1 {
                    for c in 0..3 {
                        if a.frame.get(y, x, c) != b.frame.get(y, x, c) {
                            changed += 1;
                            assert!(a.mouth_box.contains(x, y), "pixel ({x},{y}) outside {:?}", a.mouth_box);
                        }
                    }
                }
            }
            assert!(changed > 0);
        }
    }

    #[test]
    fn utterance_articulation_follows_audio() {
        let cfg = small_cfg();
        let u = synth_utterance(1, 2, EmotionLabel::base(Emotion::Happy), 30, 9, &cfg).unwrap();
        assert_eq!(u.frames.len(), u.landmarks.len());
        assert_eq!(u.audio.steps, 30 * cfg.steps_per_frame);
        let env = u.audio.frame_envelope(cfg.steps_per_frame);
        let open: Vec<f64> = u.params.iter().map(|p| p.mouth_open as f64).collect();
        let r = pearson(&env, &open);
        assert!((r - 1.0).abs() < 1e-9, "pearson {r}");

        let s = synth_utterance(1, 2, EmotionLabel::base(Emotion::Sad), 30, 9, &cfg).unwrap();
        assert_eq!(
            u.params.iter().map(|p| p.mouth_open).collect::<Vec<_>>(),
            s.params.iter().map(|p| p.mouth_open).collect::<Vec<_>>()
        );
        assert_eq!(u.audio, s.audio);
        assert!(u.params.iter().zip(&s.params).all(|(a, b)| a.pose_dx == b.pose_dx));

        let other = synth_utterance(2, 2, EmotionLabel::base(Emotion::Happy), 30, 9, &cfg).unwrap();
        assert!(u.frames[0].l1_distance(&other.frames[0]) > 0.0);
        assert!(synth_utterance(1, 2, EmotionLabel::base(Emotion::Happy), 3, 9, &cfg).is_err());
    }

    pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let s = make_splits(12, [8, 2, 2], 5).unwrap();
        assert_eq!((s.train_actors.len(), s.val_actors.len(), s.test_actors.len()), (8, 2, 2));
        let mut all: Vec<u32> = s
            .train_actors
            .iter()
            .chain(&s.val_actors)
            .chain(&s.test_actors)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        assert_eq!(s, make_splits(12, [8, 2, 2], 5).unwrap());
        assert!(make_splits(2, [1, 1, 0], 5).is_err());
        assert!(make_splits(5, [3, 1, 0], 5).is_err());
    }

    #[test]
    fn corpus_is_paired_and_roundtrips() {
        let cfg = CorpusConfig {
            actors: 3,
            splits: [1, 1, 1],
            utterances: 2,
            frames: 6,
            synth: small_cfg(),
            ..CorpusConfig::default()
        };
        let c = make_corpus(&cfg).unwrap();
        assert_eq!(c.utterances.len(), 3 * 2 * 3);
        for a in 0..3 {
            for u in 0..2 {
                for e in Emotion::ALL {
                    assert!(c.get(a, e, u).is_some());
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&c, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.splits, c.splits);
        assert_eq!(back.utterances, c.utterances);
        let again = make_corpus(&cfg).unwrap();
        assert_eq!(again.utterances, c.utterances);
    }
}
