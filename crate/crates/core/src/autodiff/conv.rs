//! im2col / col2im convolution kernels (NCHW, square kernels).

use super::array::{Array, Real};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Self {
        assert_eq!(x.len(), 4, "conv2d input must be NCHW");
        assert_eq!(w.len(), 4, "conv2d kernel must be OCKK");
        assert_eq!(x[1], w[1], "conv2d channel mismatch: input {x:?}, kernel {w:?}");
        assert_eq!(w[2], w[3], "square kernels only");
        let k = w[2];
        assert!(x[2] + 2 * pad >= k && x[3] + 2 * pad >= k, "kernel larger than input");
        Self {
            n: x[0],
            c: x[1],
            h: x[2],
            w: x[3],
            o: w[0],
            k,
            stride,
            pad,
            ho: (x[2] + 2 * pad - k) / stride + 1,
            wo: (x[3] + 2 * pad - k) / stride + 1,
        }
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Real>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let hw = g.col_cols();
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &img[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let hw = g.col_cols();
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut img[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and the per-sample column buffers (reused by backward).
pub(crate) fn forward<T: Real>(
    g: &ConvGeom,
    x: &Array<T>,
    w: &Array<T>,
    b: Option<&Array<T>>,
) -> (Array<T>, Vec<T>) {
    let (rows, hw) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); g.n * rows * hw];
    let mut out = vec![T::zero(); g.n * g.o * hw];
    let img_len = g.c * g.h * g.w;
    for n in 0..g.n {
        let col = &mut cols[n * rows * hw..(n + 1) * rows * hw];
        im2col(g, &x.data()[n * img_len..(n + 1) * img_len], col);
        let dst = &mut out[n * g.o * hw..(n + 1) * g.o * hw];
        if let Some(b) = b {
            for (o, chunk) in dst.chunks_mut(hw).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b.data()[o]);
            }
        }
        T::gemm(g.o, rows, hw, w.data(), false, col, false, T::one(), dst);
    }
    (
        Array::from_vec(&[g.n, g.o, g.ho, g.wo], out),
        cols,
    )
}

pub(crate) struct ConvGrads<T> {
    pub x: Option<Array<T>>,
    pub w: Option<Array<T>>,
    pub b: Option<Array<T>>,
}

pub(crate) fn backward<T: Real>(
    g: &ConvGeom,
    cols: &[T],
    w: &Array<T>,
    grad: &Array<T>,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (rows, hw) = (g.col_rows(), g.col_cols());
    let mut gx = need.0.then(|| vec![T::zero(); g.n * g.c * g.h * g.w]);
    let mut gw = need.1.then(|| vec![T::zero(); g.o * rows]);
    let mut gb = need.2.then(|| vec![T::zero(); g.o]);
    let mut dcol = if need.0 { vec![T::zero(); rows * hw] } else { Vec::new() };
    let img_len = g.c * g.h * g.w;
    for n in 0..g.n {
        let gy = &grad.data()[n * g.o * hw..(n + 1) * g.o * hw];
        if let Some(gw) = gw.as_mut() {
            let col = &cols[n * rows * hw..(n + 1) * rows * hw];
            T::gemm(g.o, hw, rows, gy, false, col, true, T::one(), gw);
        }
        if let Some(gb) = gb.as_mut() {
            for (o, chunk) in gy.chunks(hw).enumerate() {
                gb[o] = gb[o] + chunk.iter().copied().sum();
            }
        }
        if let Some(gx) = gx.as_mut() {
            T::gemm(rows, g.o, hw, w.data(), true, gy, false, T::zero(), &mut dcol);
            col2im(g, &dcol, &mut gx[n * img_len..(n + 1) * img_len]);
        }
    }
    ConvGrads {
        x: gx.map(|d| Array::from_vec(&[g.n, g.c, g.h, g.w], d)),
        w: gw.map(|d| Array::from_vec(&[g.o, g.c, g.k, g.k], d)),
        b: gb.map(|d| Array::from_vec(&[g.o], d)),
    }
}
