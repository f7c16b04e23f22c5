//! Generator (identity encoder, speech encoder, face decoder) and the
//! full-frame visual-quality discriminator.
//!
//! Both networks run per frame; windows of `T` frames are folded into the
//! batch dimension.

use crate::autodiff::{Array, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::media::{audio_chunks, frames_to_nchw, nchw_to_frames, AudioFeatures, Frame};
use crate::nn::{self, Bound, ParamSet};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LEAK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub steps_per_frame: usize,
    pub bands: usize,
    /// Identity-encoder widths: full-resolution stem then four stride-2 stages.
    pub gen_widths: [usize; 5],
    pub audio_widths: [usize; 2],
    pub audio_dim: usize,
    pub disc_widths: [usize; 3],
    pub disc_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            channels: 3,
            steps_per_frame: 4,
            bands: 16,
            gen_widths: [8, 16, 32, 64, 64],
            audio_widths: [8, 16],
            audio_dim: 32,
            disc_widths: [8, 16, 32],
            disc_residual: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height % 16 != 0 || self.width % 16 != 0 || self.height < 32 || self.width < 32 {
            return Err(Error::Config(format!(
                "frame size {}x{} must be >= 32 and divisible by 16",
                self.height, self.width
            )));
        }
        if self.gen_widths.iter().chain(&self.audio_widths).chain(&self.disc_widths).any(|&w| w == 0)
            || self.audio_dim == 0
            || self.channels == 0
        {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Conv {
    w: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn add(ps: &mut ParamSet, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let (w, b) = nn::conv_init(cout, cin, k, rng);
        let wi = ps.push(format!("{name}.w"), w);
        ps.push(format!("{name}.b"), b);
        Self {
            w: wi,
            stride,
            pad: k / 2,
        }
    }

    fn apply<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.conv2d(p.get(self.w), Some(p.get(self.w + 1)), self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Linear {
    w: usize,
}

impl Linear {
    fn add(ps: &mut ParamSet, name: &str, fin: usize, fout: usize, rng: &mut ChaCha8Rng) -> Self {
        let (w, b) = nn::linear_init(fin, fout, rng);
        let wi = ps.push(format!("{name}.w"), w);
        ps.push(format!("{name}.b"), b);
        Self { w: wi }
    }

    fn apply<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.matmul(p.get(self.w)).add_row(p.get(self.w + 1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: ModelConfig,
    pub params: ParamSet,
    encoder: Vec<Conv>,
    audio: Vec<Conv>,
    audio_fc: Linear,
    decoder: Vec<Conv>,
    head: Conv,
}

impl Generator {
    fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut ps = ParamSet::new();
        let gw = config.gen_widths;
        let mut encoder = vec![Conv::add(&mut ps, "enc0", 2 * config.channels, gw[0], 3, 1, rng)];
        for i in 1..5 {
            encoder.push(Conv::add(&mut ps, &format!("enc{i}"), gw[i - 1], gw[i], 3, 2, rng));
        }
        let aw = config.audio_widths;
        let audio = vec![
            Conv::add(&mut ps, "aud0", 1, aw[0], 3, 1, rng),
            Conv::add(&mut ps, "aud1", aw[0], aw[1], 3, 2, rng),
        ];
        let audio_fc = Linear::add(&mut ps, "aud_fc", aw[1], config.audio_dim, rng);
        // bottleneck fuse, then one conv per upsampling stage over [up, skip]
        let mut decoder = vec![Conv::add(&mut ps, "dec4", gw[4] + config.audio_dim, gw[4], 3, 1, rng)];
        let mut cin = gw[4];
        for i in (0..4).rev() {
            decoder.push(Conv::add(&mut ps, &format!("dec{i}"), cin + gw[i], gw[i], 3, 1, rng));
            cin = gw[i];
        }
        let head = Conv::add(&mut ps, "head", gw[0], config.channels, 1, 1, rng);
        Self {
            config: config.clone(),
            params: ps,
            encoder,
            audio,
            audio_fc,
            decoder,
            head,
        }
    }

    /// `input [N, 2C, H, W]`, `audio [N, 1, steps_per_frame, bands]` -> `[N, C, H, W]` in `[0, 1]`.
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, input: Var<'t, T>, audio: Var<'t, T>) -> Result<Var<'t, T>> {
        let c = &self.config;
        let n = input.shape()[0];
        expect_shape(&input.shape(), &[n, 2 * c.channels, c.height, c.width])?;
        expect_shape(&audio.shape(), &[n, 1, c.steps_per_frame, c.bands])?;
        let mut skips = Vec::with_capacity(4);
        let mut x = input;
        for (i, conv) in self.encoder.iter().enumerate() {
            x = conv.apply(p, x).soft_leaky(LEAK);
            if i < 4 {
                skips.push(x);
            }
        }
        let mut a = audio;
        for conv in &self.audio {
            a = conv.apply(p, a).soft_leaky(LEAK);
        }
        let a = self.audio_fc.apply(p, a.global_avg_pool()).soft_leaky(LEAK);
        let (bh, bw) = (x.shape()[2], x.shape()[3]);
        x = Var::concat(&[x, a.broadcast_spatial(bh, bw)], 1);
        x = self.decoder[0].apply(p, x).soft_leaky(LEAK);
        for (conv, skip) in self.decoder[1..].iter().zip(skips.iter().rev()) {
            x = Var::concat(&[x.upsample2x(), *skip], 1);
            x = conv.apply(p, x).soft_leaky(LEAK);
        }
        Ok(self.head.apply(p, x).sigmoid())
    }

    /// Gradient-free convenience pass over `[H, W, 2C]` frames.
    pub fn generate(&self, input: &[Frame], audio: &[&AudioFeatures]) -> Result<Vec<Frame>> {
        if !self.params.is_finite() {
            return Err(Error::Numerical("generator parameters are not finite".into()));
        }
        let tape = Tape::<f32>::new();
        let p = self.params.bind(&tape, false);
        let refs: Vec<&Frame> = input.iter().collect();
        let x = tape.constant(frames_to_nchw(&refs));
        let a = tape.constant(audio_chunks(audio, self.config.steps_per_frame));
        let y = self.forward(&p, x, a)?;
        Ok(nchw_to_frames(&y.value()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// Per stage: stride-2 conv, then the two convs of the residual block.
    stages: Vec<[Conv; 3]>,
    fc: Linear,
}

impl Discriminator {
    fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut ps = ParamSet::new();
        let mut cin = config.channels;
        let mut stages = Vec::new();
        for (i, &w) in config.disc_widths.iter().enumerate() {
            let down = Conv::add(&mut ps, &format!("d{i}.down"), cin, w, 3, 2, rng);
            let r1 = Conv::add(&mut ps, &format!("d{i}.res1"), w, w, 3, 1, rng);
            let r2 = Conv::add(&mut ps, &format!("d{i}.res2"), w, w, 3, 1, rng);
            stages.push([down, r1, r2]);
            cin = w;
        }
        let fc = Linear::add(&mut ps, "fc", cin, 1, rng);
        Self {
            config: config.clone(),
            params: ps,
            stages,
            fc,
        }
    }

    /// Per-frame realism `[N, 1]` in `(0, 1)` for frames `[N, C, H, W]`.
    pub fn frame_scores<'t, T: Real>(&self, p: &Bound<'t, T>, frames: Var<'t, T>) -> Result<Var<'t, T>> {
        let c = &self.config;
        let n = frames.shape()[0];
        expect_shape(&frames.shape(), &[n, c.channels, c.height, c.width])?;
        let mut x = frames;
        for [down, r1, r2] in &self.stages {
            x = down.apply(p, x).soft_leaky(LEAK);
            let h = r2.apply(p, r1.apply(p, x).soft_leaky(LEAK));
            x = if c.disc_residual { x.add(h) } else { h }.soft_leaky(LEAK);
        }
        Ok(self.fc.apply(p, x.global_avg_pool()).sigmoid())
    }

    /// Window score `[B, 1]`: mean of per-frame scores over `T = N / B` frames.
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, frames: Var<'t, T>, windows: usize) -> Result<Var<'t, T>> {
        let n = frames.shape()[0];
        if windows == 0 || n % windows != 0 {
            return Err(Error::invalid(format!("{n} frames do not split into {windows} windows")));
        }
        Ok(self.frame_scores(p, frames)?.reshape(&[windows, n / windows]).mean_last())
    }

    pub fn score_window(&self, frames: &[&Frame]) -> Result<f32> {
        if !self.params.is_finite() {
            return Err(Error::Numerical("discriminator parameters are not finite".into()));
        }
        let tape = Tape::<f32>::new();
        let p = self.params.bind(&tape, false);
        let x = tape.constant(frames_to_nchw(frames));
        Ok(self.forward(&p, x, 1)?.item())
    }
}

fn expect_shape(got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::shape(want, got));
    }
    Ok(())
}

pub fn init_params(config: &ModelConfig, seed: u64) -> Result<(Generator, Discriminator)> {
    config.validate()?;
    let mut rng = nn::rng(seed);
    let g = Generator::init(config, &mut rng);
    let d = Discriminator::init(config, &mut rng);
    Ok((g, d))
}

/// Rebuild a model skeleton and load tensors by name.
pub fn with_params(config: &ModelConfig, gen: &ParamSet, disc: &ParamSet) -> Result<(Generator, Discriminator)> {
    let (mut g, mut d) = init_params(config, 0)?;
    load_into(&mut g.params, gen)?;
    load_into(&mut d.params, disc)?;
    Ok((g, d))
}

fn load_into(dst: &mut ParamSet, src: &ParamSet) -> Result<()> {
    if dst.names() != src.names() {
        return Err(Error::Compat("parameter names differ from the model layout".into()));
    }
    for i in 0..dst.len() {
        dst.set(i, src.get(i).clone())
            .map_err(|e| Error::Compat(format!("tensor {}: {e}", dst.names()[i])))?;
    }
    Ok(())
}

/// Flattened `[N, C, H, W]` array for a list of frames.
pub fn batch<T: Real>(frames: &[&Frame]) -> Array<T> {
    frames_to_nchw(frames)
}
