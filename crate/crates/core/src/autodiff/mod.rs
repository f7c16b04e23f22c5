//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! Just enough operators for the generator, the quality discriminator, the
//! differentiable scorers and the training objectives. Convolutions go through
//! im2col + `matrixmultiply` GEMM; everything runs single-threaded and is
//! bitwise deterministic.

mod array;
mod conv;
mod tape;

pub use array::{Array, Real};
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_array(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
        let n = shape.iter().product();
        Array::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of d f / d input for a scalar-valued graph.
    fn check_grad(shape: &[usize], seed: u64, f: impl for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = rand_array(shape, &mut rng);
        let tape = Tape::new();
        let x = tape.input(x0.clone());
        let y = f(x);
        let grads = tape.backward(y);
        let analytic = grads.get(x).expect("input gradient").clone();
        let h = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[i] += delta;
                let t = Tape::new();
                f(t.constant(xp)).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(err < 1e-5, "element {i}: analytic {a} numeric {numeric}");
        }
    }

    #[test]
    fn elementwise_gradients() {
        check_grad(&[3, 4], 1, |x| x.sigmoid().mul(x).sum_all());
        check_grad(&[3, 4], 2, |x| x.square().affine(0.5, 2.0).ln().sum_all());
        check_grad(&[3, 4], 3, |x| x.exp().div(x.square().affine(1.0, 1.0)).mean_all());
        check_grad(&[5], 4, |x| x.affine(1.0, 3.0).sqrt().sum_all());
        check_grad(&[3, 4], 16, |x| x.scale(4.0).soft_leaky(0.2).square().sum_all());
    }

    #[test]
    fn broadcast_and_reduction_gradients() {
        check_grad(&[4, 3], 5, |x| {
            let m = x.mean_last();
            x.sub_bcast(m).square().sum_last().sqrt().sum_all()
        });
        check_grad(&[4, 3], 6, |x| {
            let n = x.square().sum_last().affine(1.0, 0.5);
            x.div_bcast(n).mul_bcast(x.narrow(1, 1, 1)).sum_all()
        });
        check_grad(&[2, 5], 7, |x| {
            x.softmax_last().narrow(1, 2, 1).affine(-1.0, 1.0).mean_all()
        });
    }

    #[test]
    fn matmul_concat_reshape_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = rand_array(&[3, 2], &mut rng);
        check_grad(&[4, 3], 9, move |x| {
            let t = x.tape();
            let c = Var::concat(&[x, x.scale(2.0)], 0);
            c.matmul(t.constant(w.clone())).square().reshape(&[16]).sum_all()
        });
        check_grad(&[3, 4], 10, |x| {
            let a = x.reshape(&[4, 3]);
            a.matmul(x).square().sum_all()
        });
    }

    #[test]
    fn conv_pool_upsample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = rand_array(&[3, 2, 3, 3], &mut rng);
        let b = rand_array(&[3], &mut rng);
        let (w1, b1) = (w.clone(), b.clone());
        check_grad(&[2, 2, 5, 6], 12, move |x| {
            let t = x.tape();
            x.conv2d(t.constant(w1.clone()), Some(t.constant(b1.clone())), 2, 1)
                .square()
                .sum_all()
        });
        let x0 = rand_array(&[2, 2, 5, 6], &mut rng);
        // kernel gradient
        check_grad(&[3, 2, 3, 3], 13, move |w| {
            let t = w.tape();
            t.constant(x0.clone()).conv2d(w, None, 1, 1).sigmoid().sum_all()
        });
        check_grad(&[2, 3, 2, 2], 14, |x| {
            x.upsample2x().square().global_avg_pool().broadcast_spatial(2, 3).sum_all()
        });
        check_grad(&[2, 3], 15, move |x| {
            let t = x.tape();
            x.add_row(t.input(Array::from_vec(&[3], vec![0.1, -0.2, 0.3])))
                .leaky_relu(0.2)
                .abs()
                .sum_all()
        });
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, c, h, w, o, k, s, p) = (2, 3, 7, 6, 4, 3, 2, 1);
        let x = rand_array(&[n, c, h, w], &mut rng);
        let kern = rand_array(&[o, c, k, k], &mut rng);
        let tape = Tape::new();
        let y = tape
            .constant(x.clone())
            .conv2d(tape.constant(kern.clone()), None, s, p)
            .value();
        let (ho, wo) = ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1);
        assert_eq!(y.shape(), &[n, o, ho, wo]);
        for b in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * c + ic) * h + iy as usize) * w + ix as usize]
                                        * kern.data()[((oc * c + ic) * k + ky) * k + kx];
                                }
                            }
                        }
                        let got = y.data()[((b * o + oc) * ho + oy) * wo + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::<f64>::new();
        let c = tape.constant(Array::from_vec(&[2], vec![1.0, 2.0]));
        let p = tape.input(Array::from_vec(&[2], vec![3.0, 4.0]));
        let y = c.mul(p).sum_all();
        let g = tape.backward(y);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn repeated_use_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.input(Array::scalar(3.0));
        let y = x.mul(x).add(x);
        let g = tape.backward(y);
        assert_eq!(g.get(x).unwrap().item(), 7.0);
    }
}
