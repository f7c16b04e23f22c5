//! Frame, clip and audio-feature containers.

use crate::autodiff::{Array, Real};
use crate::error::{Error, Result};

pub const FPS: u32 = 25;

/// One image, `[H, W, C]` row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(&[height, width, channels], &[data.len()]));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.idx(y, x, c)]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.idx(y, x, c);
        self.data[i] = v;
    }

    pub fn l1_distance(&self, other: &Frame) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum()
    }
}

/// Audio features `[steps, bands]`, time-aligned to video at a fixed
/// number of steps per video frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioFeatures {
    pub steps: usize,
    pub bands: usize,
    pub data: Vec<f32>,
}

impl AudioFeatures {
    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.bands..(t + 1) * self.bands]
    }

    /// Steps `[start, start+len)`; out-of-range steps repeat the nearest edge.
    pub fn slice_clamped(&self, start: isize, len: usize) -> AudioFeatures {
        let mut data = Vec::with_capacity(len * self.bands);
        for i in 0..len as isize {
            let t = (start + i).clamp(0, self.steps as isize - 1) as usize;
            data.extend_from_slice(self.row(t));
        }
        AudioFeatures {
            steps: len,
            bands: self.bands,
            data,
        }
    }

    /// Mean band energy per step.
    pub fn envelope(&self) -> Vec<f64> {
        (0..self.steps)
            .map(|t| self.row(t).iter().map(|&v| v as f64).sum::<f64>() / self.bands as f64)
            .collect()
    }

    /// Envelope averaged over each video frame's steps.
    pub fn frame_envelope(&self, steps_per_frame: usize) -> Vec<f64> {
        self.envelope()
            .chunks(steps_per_frame)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Stack frames into an NCHW array.
pub fn frames_to_nchw<T: Real>(frames: &[&Frame]) -> Array<T> {
    let f0 = frames[0];
    let (h, w, c) = (f0.height, f0.width, f0.channels);
    let mut data = Vec::with_capacity(frames.len() * h * w * c);
    for f in frames {
        assert_eq!(f.dims(), f0.dims(), "frames in a batch must share dims");
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(T::of(f.get(y, x, ch) as f64));
                }
            }
        }
    }
    Array::from_vec(&[frames.len(), c, h, w], data)
}

/// Inverse of [`frames_to_nchw`].
pub fn nchw_to_frames<T: Real>(a: &Array<T>) -> Vec<Frame> {
    let s = a.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    (0..n)
        .map(|i| {
            let mut f = Frame::new(h, w, c);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        f.set(y, x, ch, a.data()[((i * c + ch) * h + y) * w + x].f64() as f32);
                    }
                }
            }
            f
        })
        .collect()
}

/// Per-frame audio chunks `[N, 1, steps_per_frame, bands]`.
pub fn audio_chunks<T: Real>(audio: &[&AudioFeatures], steps_per_frame: usize) -> Array<T> {
    let bands = audio[0].bands;
    let mut data = Vec::new();
    let mut n = 0;
    for a in audio {
        assert_eq!(a.steps % steps_per_frame, 0, "audio not frame aligned");
        data.extend(a.data.iter().map(|&v| T::of(v as f64)));
        n += a.steps / steps_per_frame;
    }
    Array::from_vec(&[n, 1, steps_per_frame, bands], data)
}

/// ITU-R 601 luma.
pub fn grey(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}
