//! Frozen scorer backends: lip-sync embeddings, emotion logits and
//! valence/arousal.
//!
//! Both backends reduce a frame to three expression estimates (mouth
//! curvature, brow angle, mouth opening). The analytic backend measures them
//! with darkness-weighted least-squares fits inside fixed facial windows; the
//! learned backend regresses them with a small frozen conv net. Everything
//! downstream (logits, affect, sync trajectories) is shared and runs on the
//! autodiff tape so the generator can be trained through it.

use crate::autodiff::{Array, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::facegen::{layout, render_frame, Corpus, FaceParams, SynthConfig};
use crate::media::{frames_to_nchw, grey, AudioFeatures, Frame};
use crate::nn::{self, Adam, AdamConfig, ParamSet};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const EMBED_DIM: usize = 32;
pub const ANALYTIC_FINGERPRINT: &str = "analytic-oracle";

/// Affect coefficients: valence = W1*curve + W2*brow,
/// arousal = A0 + A1*|curve| + A2*open.
pub const VALENCE_W: [f64; 2] = [0.8, 0.2];
pub const AROUSAL_A: [f64; 3] = [0.3, 0.4, 0.3];

/// Mouth and brow measurement windows `(x0, x1, y0, y1)` in frame fractions.
pub const MOUTH_WINDOW: (f32, f32, f32, f32) = (0.25, 0.75, 0.545, 0.9);
pub const BROW_WINDOW_Y: (f32, f32) = (0.125, 0.355);
pub const BROW_WINDOW_X: [(f32, f32); 2] = [(0.2, 0.46), (0.54, 0.8)];

/// Minimum share of skin-toned pixels in the mouth window for a face to count.
const MIN_SKIN_FRACTION: f32 = 0.5;
/// Luma band counted as skin by the face gate.
const SKIN_BAND: (f32, f32) = (0.55, 0.75);
/// Mouth-window pixels darker than this count as lip / mouth features.
const FEATURE_MAX_LUMA: f32 = 0.4;
const MIN_FEATURE_FRACTION: f32 = 0.02;
/// Uniform weight floor keeping the moment systems well posed.
const WEIGHT_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Analytic,
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub backend: BackendKind,
    /// Slope of the emotion logits in the valence-like expression score.
    pub logit_scale: f32,
    /// Grey level at which a pixel starts to count as a dark feature.
    pub dark_hi: f32,
    /// Grey level at which a pixel counts fully.
    pub dark_lo: f32,
    pub learned_steps: usize,
    pub learned_batch: usize,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Analytic,
            logit_scale: 8.0,
            dark_hi: layout::SKIN_LUMA,
            dark_lo: layout::FEATURE_LUMA,
            learned_steps: 400,
            learned_batch: 16,
            seed: 17,
        }
    }
}

/// Greyscale normalization statistics of the training corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f32,
    pub std: f32,
}

impl Default for NormStats {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl NormStats {
    pub fn from_frames<'a>(frames: impl IntoIterator<Item = &'a Frame>) -> Result<Self> {
        let (mut n, mut s, mut s2) = (0f64, 0f64, 0f64);
        for f in frames {
            for px in f.data.chunks_exact(f.channels) {
                let g = grey_px(px) as f64;
                n += 1.0;
                s += g;
                s2 += g * g;
            }
        }
        if n == 0.0 {
            return Err(Error::invalid("no frames for normalization statistics"));
        }
        let mean = s / n;
        let std = (s2 / n - mean * mean).max(0.0).sqrt();
        if std < 1e-6 {
            return Err(Error::invalid("constant frames cannot be normalized"));
        }
        Ok(Self {
            mean: mean as f32,
            std: std as f32,
        })
    }
}

fn grey_px(px: &[f32]) -> f32 {
    if px.len() >= 3 {
        grey(px[0], px[1], px[2])
    } else {
        px[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyncEmbeddingPair {
    pub v: Vec<f32>,
    pub s: Vec<f32>,
}

impl SyncEmbeddingPair {
    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn cosine(&self) -> f64 {
        cosine(&self.v, &self.s)
    }

    pub fn distance(&self) -> f64 {
        self.v
            .iter()
            .zip(&self.s)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-8)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffectScore {
    pub valence: f32,
    pub arousal: f32,
}

/// Per-frame expression estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expression {
    pub mouth_curve: f32,
    pub brow_angle: f32,
    pub mouth_open: f32,
}

struct EstimateVars<'t, T: Real> {
    curve: Var<'t, T>,
    brow: Var<'t, T>,
    open: Var<'t, T>,
}

/// Linear correction `gain * raw + offset` per estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub curve: [f64; 2],
    pub brow: [f64; 2],
    pub open: [f64; 2],
}

impl Calibration {
    const IDENTITY: Self = Self {
        curve: [1.0, 0.0],
        brow: [1.0, 0.0],
        open: [1.0, 0.0],
    };
}

#[derive(Clone, Debug)]
struct Analytic {
    /// Window-masked moment basis `[H*W, 18]`: mouth (8), left brow (5),
    /// right brow (5).
    basis: Array<f32>,
    /// Column sums of `basis`, scaled by the weight floor.
    floor: Array<f32>,
}

impl Analytic {
    fn new(h: usize, w: usize) -> Self {
        let mut basis = vec![0f32; h * w * 18];
        let inside = |v: f32, lo: f32, hi: f32| v >= lo && v <= hi;
        let (mx0, mx1, my0, my1) = MOUTH_WINDOW;
        for py in 0..h {
            for px in 0..w {
                let xf = (px as f32 + 0.5) / w as f32;
                let yf = (py as f32 + 0.5) / h as f32;
                let row = &mut basis[(py * w + px) * 18..(py * w + px + 1) * 18];
                if inside(xf, mx0, mx1) && inside(yf, my0, my1) {
                    let u = ((xf - layout::FACE_CX) / layout::MOUTH_HALF_W) as f64;
                    let y = (yf - layout::MOUTH_Y) as f64;
                    let m = [1.0, u, u * u, u.powi(3), u.powi(4), y, u * y, u * u * y];
                    for (k, v) in m.iter().enumerate() {
                        row[k] = *v as f32;
                    }
                }
                for (side, &(bx0, bx1)) in BROW_WINDOW_X.iter().enumerate() {
                    if inside(xf, bx0, bx1) && inside(yf, BROW_WINDOW_Y.0, BROW_WINDOW_Y.1) {
                        let cx = if side == 0 {
                            layout::FACE_CX - layout::FEATURE_DX
                        } else {
                            layout::FACE_CX + layout::FEATURE_DX
                        };
                        let u = ((xf - cx) / layout::BROW_HALF_W) as f64;
                        let y = (yf - layout::BROW_Y) as f64;
                        let b = [1.0, u, u * u, y, u * y];
                        for (k, v) in b.iter().enumerate() {
                            row[8 + side * 5 + k] = *v as f32;
                        }
                    }
                }
            }
        }
        let mut floor = vec![0f32; 18];
        for r in basis.chunks_exact(18) {
            for k in 0..18 {
                floor[k] += r[k];
            }
        }
        for v in &mut floor {
            *v *= WEIGHT_FLOOR as f32;
        }
        Self {
            basis: Array::from_vec(&[h * w, 18], basis),
            floor: Array::from_vec(&[18], floor),
        }
    }

    /// Raw (uncalibrated) estimates from darkness weights `[N, H*W]`.
    fn raw<'t, T: Real>(&self, weights: Var<'t, T>) -> EstimateVars<'t, T> {
        let tape = weights.tape();
        let m = weights
            .matmul(tape.constant(self.basis.cast()))
            .add_row(tape.constant(self.floor.cast()));
        let col = |k: usize| m.narrow(1, k, 1);
        let (s0, s1, s2, s3, s4) = (col(0), col(1), col(2), col(3), col(4));
        let (t0, t1, t2) = (col(5), col(6), col(7));
        let det3 = |a: [[Var<'t, T>; 3]; 3]| {
            let m0 = a[1][1].mul(a[2][2]).sub(a[1][2].mul(a[2][1]));
            let m1 = a[1][0].mul(a[2][2]).sub(a[1][2].mul(a[2][0]));
            let m2 = a[1][0].mul(a[2][1]).sub(a[1][1].mul(a[2][0]));
            a[0][0].mul(m0).sub(a[0][1].mul(m1)).add(a[0][2].mul(m2))
        };
        let det = det3([[s0, s1, s2], [s1, s2, s3], [s2, s3, s4]]);
        let det_c = det3([[s0, s1, t0], [s1, s2, t1], [s2, s3, t2]]);
        // y = a + b u + c u^2 with c = -K * curve
        let curve = det_c.div(det).scale(-1.0 / layout::MOUTH_CURVE as f64);
        let slope = |off: usize| {
            let (n, su, suu, sy, suy) = (col(off), col(off + 1), col(off + 2), col(off + 3), col(off + 4));
            n.mul(suy).sub(su.mul(sy)).div(n.mul(suu).sub(su.mul(su)))
        };
        // left brow: y = by + tilt*u, right brow: y = by - tilt*u
        let brow = slope(8)
            .sub(slope(13))
            .scale(0.5 / layout::BROW_TILT as f64);
        let open = s0.scale(1.0 / weights.shape()[1] as f64);
        EstimateVars { curve, brow, open }
    }
}

#[derive(Clone, Debug)]
struct Learned {
    params: ParamSet,
}

impl Learned {
    const WIDTHS: [usize; 3] = [8, 16, 32];

    fn init(seed: u64) -> Self {
        let mut rng = nn::rng(seed);
        let mut params = ParamSet::new();
        let mut cin = 1;
        for (i, &c) in Self::WIDTHS.iter().enumerate() {
            let (w, b) = nn::conv_init(c, cin, 3, &mut rng);
            params.push(format!("conv{i}.w"), w);
            params.push(format!("conv{i}.b"), b);
            cin = c;
        }
        let (w, b) = nn::linear_init(cin, 3, &mut rng);
        params.push("head.w", w);
        params.push("head.b", b);
        Self { params }
    }

    fn forward<'t, T: Real>(&self, norm_grey: Var<'t, T>, trainable: bool) -> (Var<'t, T>, nn::Bound<'t, T>) {
        let p = self.params.bind(norm_grey.tape(), trainable);
        let mut x = norm_grey;
        for i in 0..Self::WIDTHS.len() {
            x = x.conv2d(p.get(2 * i), Some(p.get(2 * i + 1)), 2, 1).leaky_relu(0.1);
        }
        let k = 2 * Self::WIDTHS.len();
        let out = x
            .global_avg_pool()
            .matmul(p.get(k))
            .add_row(p.get(k + 1));
        (out, p)
    }
}

#[derive(Clone, Debug)]
enum Backend {
    Analytic(Analytic),
    Learned(Learned),
}

/// A frozen scorer bound to one frame size and window length.
#[derive(Clone, Debug)]
pub struct Scorer {
    config: ScorerConfig,
    backend: Backend,
    norm: NormStats,
    calibration: Calibration,
    height: usize,
    width: usize,
    window: usize,
    steps_per_frame: usize,
    /// `[window, EMBED_DIM]` with orthonormal rows.
    projection: Array<f32>,
    mouth_pixels: Vec<usize>,
}

impl Scorer {
    /// Scorer normalized with the grey-level statistics of the training split.
    pub fn for_corpus(config: &ScorerConfig, corpus: &Corpus) -> Result<Self> {
        let frames = corpus
            .utterances
            .iter()
            .filter(|(k, _)| corpus.splits.train_actors.contains(&k.actor))
            .flat_map(|(_, u)| &u.frames);
        Self::new(config, corpus.synth(), NormStats::from_frames(frames)?)
    }

    /// Build a scorer; learned backends are trained here on random renders
    /// and frozen.
    pub fn new(config: &ScorerConfig, synth: &SynthConfig, norm: NormStats) -> Result<Self> {
        let (h, w) = (synth.height, synth.width);
        if norm.std <= 0.0 || !norm.std.is_finite() || !norm.mean.is_finite() {
            return Err(Error::Config(format!("bad normalization stats {norm:?}")));
        }
        if !(config.dark_lo < config.dark_hi) {
            return Err(Error::Config("dark_lo must be below dark_hi".into()));
        }
        let backend = match config.backend {
            BackendKind::Analytic => Backend::Analytic(Analytic::new(h, w)),
            BackendKind::Learned => Backend::Learned(Learned::init(config.seed)),
        };
        let (mx0, mx1, my0, my1) = MOUTH_WINDOW;
        let mouth_pixels = (0..h * w)
            .filter(|&i| {
                let xf = ((i % w) as f32 + 0.5) / w as f32;
                let yf = ((i / w) as f32 + 0.5) / h as f32;
                xf >= mx0 && xf <= mx1 && yf >= my0 && yf <= my1
            })
            .collect();
        let mut scorer = Self {
            config: config.clone(),
            backend,
            norm,
            calibration: Calibration::IDENTITY,
            height: h,
            width: w,
            window: synth.window,
            steps_per_frame: synth.steps_per_frame,
            projection: orthonormal_rows(synth.window, EMBED_DIM, 0x5e_c0de),
            mouth_pixels,
        };
        if config.backend == BackendKind::Learned {
            scorer.fit_learned()?;
        }
        scorer.calibrate()?;
        Ok(scorer)
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn kind(&self) -> BackendKind {
        self.config.backend
    }

    pub fn norm(&self) -> NormStats {
        self.norm
    }

    pub fn calibration(&self) -> Calibration {
        self.calibration
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn steps_per_frame(&self) -> usize {
        self.steps_per_frame
    }

    /// Learned-backend parameters (empty for the analytic backend).
    pub fn params(&self) -> Option<&ParamSet> {
        match &self.backend {
            Backend::Learned(l) => Some(&l.params),
            Backend::Analytic(_) => None,
        }
    }

    /// Stable hash of all trainable state; a constant sentinel for the
    /// analytic backend.
    pub fn fingerprint(&self) -> String {
        match &self.backend {
            Backend::Analytic(_) => ANALYTIC_FINGERPRINT.to_string(),
            Backend::Learned(l) => l.params.fingerprint(),
        }
    }

    /// Greyscale + corpus normalization, `[N, 3, H, W] -> [N, 1, H, W]`.
    fn normalized_grey<'t, T: Real>(&self, frames: Var<'t, T>) -> Var<'t, T> {
        let tape = frames.tape();
        let c = frames.shape()[1];
        let kernel = if c == 3 {
            vec![0.299, 0.587, 0.114]
        } else {
            vec![1.0 / c as f64; c]
        };
        let k = Array::from_vec(&[1, c, 1, 1], kernel.into_iter().map(T::of).collect());
        let (m, s) = (self.norm.mean as f64, self.norm.std as f64);
        frames.conv2d(tape.constant(k), None, 1, 0).affine(1.0 / s, -m / s)
    }

    fn raw_estimates<'t, T: Real>(&self, frames: Var<'t, T>) -> EstimateVars<'t, T> {
        let shape = frames.shape();
        if shape.len() != 4 || shape[2] != self.height || shape[3] != self.width {
            panic!(
                "scorer expects [N, C, {}, {}], got {shape:?}",
                self.height, self.width
            );
        }
        let g = self.normalized_grey(frames);
        match &self.backend {
            Backend::Analytic(a) => {
                // darkness ramp defined on raw grey, expressed in normalized units
                let (m, s) = (self.norm.mean as f64, self.norm.std as f64);
                let hi = (self.config.dark_hi as f64 - m) / s;
                let lo = (self.config.dark_lo as f64 - m) / s;
                let w = g
                    .reshape(&[shape[0], self.height * self.width])
                    .affine(-1.0 / (hi - lo), hi / (hi - lo))
                    .clamp(0.0, 1.0);
                a.raw(w)
            }
            Backend::Learned(l) => {
                let (out, _) = l.forward(g, false);
                EstimateVars {
                    curve: out.narrow(1, 0, 1),
                    brow: out.narrow(1, 1, 1),
                    open: out.narrow(1, 2, 1),
                }
            }
        }
    }

    fn estimates_var<'t, T: Real>(&self, frames: Var<'t, T>) -> EstimateVars<'t, T> {
        let r = self.raw_estimates(frames);
        let c = &self.calibration;
        EstimateVars {
            curve: r.curve.affine(c.curve[0], c.curve[1]),
            brow: r.brow.affine(c.brow[0], c.brow[1]),
            open: r.open.affine(c.open[0], c.open[1]),
        }
    }

    /// Expression estimates `[N, 3]` (curve, brow, open) on the tape.
    pub fn expression_var<'t, T: Real>(&self, frames: Var<'t, T>) -> Var<'t, T> {
        let e = self.estimates_var(frames);
        Var::concat(&[e.curve, e.brow, e.open], 1)
    }

    /// Emotion logits `[N, 3]` in class order happy, neutral, sad.
    pub fn logits_var<'t, T: Real>(&self, frames: Var<'t, T>) -> Var<'t, T> {
        let e = self.estimates_var(frames);
        let x = e
            .curve
            .scale(VALENCE_W[0])
            .add(e.brow.scale(VALENCE_W[1]));
        let g = self.config.logit_scale as f64;
        // class boundary halfway between neutral and base-intensity happy/sad
        let b = g * 0.29;
        let zero = x.scale(0.0);
        Var::concat(&[x.affine(g, -b), zero, x.affine(-g, -b)], 1)
    }

    /// Mouth-opening trajectory `[B, T]` of `B` windows folded into `[B*T, C, H, W]`.
    pub fn mouth_trajectory_var<'t, T: Real>(&self, frames: Var<'t, T>, windows: usize) -> Var<'t, T> {
        let e = self.estimates_var(frames);
        let n = e.open.shape()[0];
        e.open.reshape(&[windows, n / windows])
    }

    /// Centre and project trajectories `[B, T] -> [B, EMBED_DIM]` (unnormalized).
    pub fn project_var<'t, T: Real>(&self, traj: Var<'t, T>) -> Var<'t, T> {
        let centred = traj.sub_bcast(traj.mean_last());
        centred.matmul(traj.tape().constant(self.projection.cast()))
    }

    /// Per-frame audio envelope, `[B, T]`, for audio windows.
    pub fn audio_trajectory(&self, audio: &[&AudioFeatures]) -> Result<Array<f32>> {
        let mut data = Vec::new();
        for a in audio {
            if a.steps != self.window * self.steps_per_frame {
                return Err(Error::shape(&[self.window * self.steps_per_frame], &[a.steps]));
            }
            data.extend(a.frame_envelope(self.steps_per_frame).iter().map(|&v| v as f32));
        }
        Ok(Array::from_vec(&[audio.len(), self.window], data))
    }

    fn check_frame(&self, f: &Frame) -> Result<()> {
        if f.height != self.height || f.width != self.width {
            return Err(Error::shape(&[self.height, self.width], &[f.height, f.width]));
        }
        Ok(())
    }

    /// The "no face found" gate: constant frames, or a mouth window without
    /// enough skin or without dark lip features.
    pub fn detect_face(&self, f: &Frame) -> Result<()> {
        self.check_frame(f)?;
        let g: Vec<f32> = f.data.chunks_exact(f.channels).map(grey_px).collect();
        let n = g.len() as f64;
        let mean = g.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = g.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        if var.sqrt() < 1e-6 {
            return Err(Error::NoFace);
        }
        let skin = self.mouth_pixels.iter().filter(|&&i| g[i] > SKIN_BAND.0 && g[i] < SKIN_BAND.1).count();
        let dark = self.mouth_pixels.iter().filter(|&&i| g[i] < FEATURE_MAX_LUMA).count();
        let n = self.mouth_pixels.len() as f32;
        if (skin as f32) < MIN_SKIN_FRACTION * n || (dark as f32) < MIN_FEATURE_FRACTION * n {
            return Err(Error::NoFace);
        }
        Ok(())
    }

    fn eval_batch<R>(&self, frames: &[&Frame], f: impl for<'t> Fn(Var<'t, f32>) -> Var<'t, f32>, out: impl Fn(&[f32]) -> R) -> Vec<R> {
        let mut res = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(64) {
            let tape = Tape::<f32>::new();
            let x = tape.constant(frames_to_nchw(chunk));
            let y = f(x).value();
            let k = y.len() / chunk.len();
            res.extend(y.data().chunks_exact(k).map(&out));
        }
        res
    }

    /// Expression estimates without the face gate.
    pub fn expressions_ungated(&self, frames: &[&Frame]) -> Vec<Expression> {
        self.eval_batch(frames, |x| self.expression_var(x), |r| Expression {
            mouth_curve: r[0],
            brow_angle: r[1],
            mouth_open: r[2],
        })
    }

    pub fn expression(&self, frame: &Frame) -> Result<Expression> {
        self.detect_face(frame)?;
        Ok(self.expressions_ungated(&[frame])[0])
    }

    pub fn emotion_logits(&self, frame: &Frame) -> Result<[f32; 3]> {
        self.detect_face(frame)?;
        Ok(self.eval_batch(&[frame], |x| self.logits_var(x), |r| [r[0], r[1], r[2]])[0])
    }

    pub fn affect_score(&self, frame: &Frame) -> Result<AffectScore> {
        Ok(affect_from(&self.expression(frame)?))
    }

    /// Per-frame affect; frames failing the face gate yield `Err(NoFace)`.
    pub fn affect_batch(&self, frames: &[&Frame]) -> Vec<Result<AffectScore>> {
        let exprs = self.expressions_ungated(frames);
        frames
            .iter()
            .zip(exprs)
            .map(|(f, e)| self.detect_face(f).map(|_| affect_from(&e)))
            .collect()
    }

    /// Per-frame mouth-opening estimates (no face gate).
    pub fn mouth_open_track(&self, frames: &[&Frame]) -> Vec<f32> {
        self.expressions_ungated(frames).iter().map(|e| e.mouth_open).collect()
    }

    /// Sync embeddings for one window.
    pub fn sync_embed(&self, frames: &[&Frame], audio: &AudioFeatures) -> Result<SyncEmbeddingPair> {
        if frames.len() != self.window {
            return Err(Error::shape(&[self.window], &[frames.len()]));
        }
        for f in frames {
            self.check_frame(f)?;
        }
        let track = self.mouth_open_track(frames);
        let env = self.audio_trajectory(&[audio])?;
        Ok(self.embed_tracks(&track, env.data()))
    }

    /// Sync embeddings from precomputed per-frame trajectories of one window.
    pub fn embed_tracks(&self, video: &[f32], audio: &[f32]) -> SyncEmbeddingPair {
        let proj = |t: &[f32]| {
            let mean = t.iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64;
            let mut out = vec![0f64; EMBED_DIM];
            for (i, &v) in t.iter().enumerate() {
                for (k, o) in out.iter_mut().enumerate() {
                    *o += (v as f64 - mean) * self.projection.data()[i * EMBED_DIM + k] as f64;
                }
            }
            let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.iter().map(|v| (v / n.max(1e-8)) as f32).collect::<Vec<f32>>()
        };
        SyncEmbeddingPair {
            v: proj(video),
            s: proj(audio),
        }
    }

    fn calibrate(&mut self) -> Result<()> {
        let (h, w) = (self.height, self.width);
        let mut params = Vec::new();
        let mut i = 0u64;
        for id in [11u64, 23, 37] {
            for curve in [-1.0f32, -0.5, 0.0, 0.5, 1.0] {
                for brow in [-1.0f32, 0.0, 1.0] {
                    for open in [0.0f32, 0.5, 1.0] {
                        i += 1;
                        let pose = |k: u64| layout::POSE_MAX * 0.5 * [-1.0, 0.0, 1.0][(k % 3) as usize];
                        params.push(FaceParams {
                            mouth_open: open,
                            mouth_curve: curve,
                            brow_angle: brow,
                            eye_open: 0.8,
                            pose_dx: pose(i) * w as f32,
                            pose_dy: pose(i / 3) * h as f32,
                            identity_seed: id,
                        });
                    }
                }
            }
        }
        let frames = params
            .iter()
            .map(|p| render_frame(p, (h, w)).map(|r| r.frame))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Frame> = frames.iter().collect();
        let raw = self.eval_batch(&refs, |x| {
            let r = self.raw_estimates(x);
            Var::concat(&[r.curve, r.brow, r.open], 1)
        }, |r| [r[0] as f64, r[1] as f64, r[2] as f64]);
        let fit = |k: usize, truth: &dyn Fn(&FaceParams) -> f32| -> Result<[f64; 2]> {
            let xs: Vec<f64> = raw.iter().map(|r| r[k]).collect();
            let ys: Vec<f64> = params.iter().map(|p| truth(p) as f64).collect();
            linear_fit(&xs, &ys).ok_or_else(|| Error::Numerical("degenerate scorer calibration".into()))
        };
        self.calibration = Calibration {
            curve: fit(0, &|p| p.mouth_curve)?,
            brow: fit(1, &|p| p.brow_angle)?,
            open: fit(2, &|p| p.mouth_open)?,
        };
        Ok(())
    }

    fn fit_learned(&mut self) -> Result<()> {
        let (h, w) = (self.height, self.width);
        let cfg = self.config.clone();
        let Backend::Learned(mut net) = self.backend.clone() else {
            return Ok(());
        };
        let mut rng = nn::rng(cfg.seed ^ 0x1ea4);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 3e-3,
                beta1: 0.9,
                ..AdamConfig::default()
            },
            &net.params,
        );
        for _ in 0..cfg.learned_steps {
            let mut frames = Vec::with_capacity(cfg.learned_batch);
            let mut targets = Vec::with_capacity(cfg.learned_batch * 3);
            for _ in 0..cfg.learned_batch {
                let p = FaceParams {
                    mouth_open: rng.gen_range(0.0..=1.0),
                    mouth_curve: rng.gen_range(-1.0..=1.0),
                    brow_angle: rng.gen_range(-1.0..=1.0),
                    eye_open: rng.gen_range(0.5..=1.0),
                    pose_dx: rng.gen_range(-1.0..=1.0) * layout::POSE_MAX * w as f32,
                    pose_dy: rng.gen_range(-1.0..=1.0) * layout::POSE_MAX * h as f32,
                    identity_seed: rng.gen_range(0..1000),
                };
                frames.push(render_frame(&p, (h, w))?.frame);
                targets.extend([p.mouth_curve, p.brow_angle, p.mouth_open]);
            }
            let refs: Vec<&Frame> = frames.iter().collect();
            let tape = Tape::<f32>::new();
            let x = tape.constant(frames_to_nchw(&refs));
            let g = self.normalized_grey(x);
            let (out, bound) = net.forward(g, true);
            let t = tape.constant(Array::from_vec(&[refs.len(), 3], targets));
            let loss = out.sub(t).square().mean_all();
            let mut grads = tape.backward(loss);
            let gs = net.params.collect_grads(&bound, &mut grads);
            opt.update(&mut net.params, &gs);
        }
        if !net.params.is_finite() {
            return Err(Error::Numerical("learned scorer diverged".into()));
        }
        self.backend = Backend::Learned(net);
        Ok(())
    }
}

pub fn affect_from(e: &Expression) -> AffectScore {
    let v = VALENCE_W[0] * e.mouth_curve as f64 + VALENCE_W[1] * e.brow_angle as f64;
    let a = AROUSAL_A[0] + AROUSAL_A[1] * (e.mouth_curve as f64).abs() + AROUSAL_A[2] * e.mouth_open as f64;
    AffectScore {
        valence: v.clamp(-1.0, 1.0) as f32,
        arousal: a.clamp(0.0, 1.0) as f32,
    }
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<[f64; 2]> {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 1e-12) || !sxy.is_finite() {
        return None;
    }
    let gain = sxy / sxx;
    Some([gain, my - gain * mx])
}

/// `rows x cols` matrix with orthonormal rows (rows <= cols).
fn orthonormal_rows(rows: usize, cols: usize, seed: u64) -> Array<f32> {
    assert!(rows <= cols);
    let mut rng = nn::rng(seed);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while q.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u) {
                *a -= d * b;
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    Array::from_vec(&[rows, cols], q.into_iter().flatten().map(|v| v as f32).collect())
}
