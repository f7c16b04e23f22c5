//! Half-face and convex-hull face masking, and generator input assembly.
//!
//! Points are `[x, y]` in pixel units with pixel `(col, row)` centred at
//! `(col + 0.5, row + 0.5)`. Polygon orientation is counterclockwise in these
//! coordinates, i.e. positive shoelace area.

use crate::error::{Error, Result};
use crate::facegen::boundary_indices;
use crate::media::Frame;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    /// Zero rows `floor(H/2)..H`.
    Half,
    /// Zero the convex hull of the face-boundary landmarks.
    Full,
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Half => "half",
            Self::Full => "full",
        })
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "half" => Ok(Self::Half),
            "full" => Ok(Self::Full),
            other => Err(Error::invalid(format!("unknown masking {other:?}"))),
        }
    }
}

/// Masking strategy plus the landmark indices forming the face boundary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub strategy: MaskStrategy,
    pub boundary_indices: Vec<usize>,
}

impl MaskSpec {
    pub fn new(strategy: MaskStrategy) -> Self {
        Self {
            strategy,
            boundary_indices: boundary_indices(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

impl Polygon {
    /// Wrap vertices that are already convex and counterclockwise.
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::invalid("polygon needs at least 3 vertices"));
        }
        let p = Self { vertices };
        if p.signed_area() <= 0.0 {
            return Err(Error::invalid("polygon must be counterclockwise"));
        }
        Ok(p)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn signed_area(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        (0..n)
            .map(|i| {
                let (a, b) = (v[i], v[(i + 1) % n]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn perimeter(&self) -> f64 {
        let v = &self.vertices;
        (0..v.len())
            .map(|i| {
                let (a, b) = (v[i], v[(i + 1) % v.len()]);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .sum()
    }

    pub fn is_convex(&self) -> bool {
        let v = &self.vertices;
        let n = v.len();
        (0..n).all(|i| cross(v[i], v[(i + 1) % n], v[(i + 2) % n]) > 0.0)
    }

    /// Inside or on the boundary (convex polygons only).
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let v = &self.vertices;
        let n = v.len();
        (0..n).all(|i| cross(v[i], v[(i + 1) % n], p) >= -1e-9)
    }
}

/// Andrew's monotone chain; collinear boundary points are dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Result<Polygon> {
    if points.len() < 3 {
        return Err(Error::invalid(format!("convex hull needs >= 3 points, got {}", points.len())));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::invalid("non-finite hull point"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(pts.len() + 1);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return Err(Error::invalid("hull points are collinear"));
    }
    Polygon::new(hull)
}

/// Row-major `[H, W]` mask, true where the pixel centre lies inside or on `poly`.
pub fn rasterize_mask(poly: &Polygon, height: usize, width: usize) -> Vec<bool> {
    let mut out = vec![false; height * width];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = poly.contains([x as f64 + 0.5, y as f64 + 0.5]);
        }
    }
    out
}

/// Pixel mask a strategy zeroes for one frame.
pub fn mask_pixels(spec: &MaskSpec, height: usize, width: usize, landmarks: Option<&[[f32; 2]]>) -> Result<Vec<bool>> {
    match spec.strategy {
        MaskStrategy::Half => {
            let mut m = vec![false; height * width];
            m[(height / 2) * width..].iter_mut().for_each(|v| *v = true);
            Ok(m)
        }
        MaskStrategy::Full => {
            let lm = landmarks.ok_or_else(|| Error::invalid("full masking requires landmarks"))?;
            let pts = spec
                .boundary_indices
                .iter()
                .map(|&i| {
                    lm.get(i)
                        .map(|p| [p[0] as f64, p[1] as f64])
                        .ok_or_else(|| Error::invalid(format!("boundary index {i} out of range")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(rasterize_mask(&convex_hull(&pts)?, height, width))
        }
    }
}

pub fn apply_mask(frame: &Frame, spec: &MaskSpec, landmarks: Option<&[[f32; 2]]>) -> Result<Frame> {
    let mask = mask_pixels(spec, frame.height, frame.width, landmarks)?;
    let mut out = frame.clone();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            out.data[i * frame.channels..(i + 1) * frame.channels].fill(0.0);
        }
    }
    Ok(out)
}

/// Channel-concatenate reference frames with masked pose frames: `[H, W, 2C]`
/// per frame.
pub fn build_generator_input(
    reference: &[&Frame],
    pose_source: &[&Frame],
    spec: &MaskSpec,
    landmarks: Option<&[Vec<[f32; 2]>]>,
) -> Result<Vec<Frame>> {
    if reference.len() != pose_source.len() {
        return Err(Error::shape(&[reference.len()], &[pose_source.len()]));
    }
    if let Some(lm) = landmarks {
        if lm.len() != pose_source.len() {
            return Err(Error::invalid("one landmark list per pose frame required"));
        }
    }
    reference
        .iter()
        .zip(pose_source)
        .enumerate()
        .map(|(t, (r, p))| {
            if r.dims() != p.dims() {
                return Err(Error::shape(&r.dims(), &p.dims()));
            }
            let masked = apply_mask(p, spec, landmarks.map(|l| l[t].as_slice()))?;
            let c = r.channels;
            let mut data = Vec::with_capacity(r.data.len() * 2);
            for (a, b) in r.data.chunks_exact(c).zip(masked.data.chunks_exact(c)) {
                data.extend_from_slice(a);
                data.extend_from_slice(b);
            }
            Frame::from_data(r.height, r.width, 2 * c, data)
        })
        .collect()
}
