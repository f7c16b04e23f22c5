//! Training objectives, gradient-norm clamping and the per-step loss log.
//!
//! Each objective is written once on the autodiff tape; the plain `f64`
//! functions are thin validated wrappers over the same graph code.

use crate::autodiff::{Array, Real, Tape, Var};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Floor applied to probabilities and discriminator scores before logs.
pub const P_FLOOR: f64 = 1e-7;
/// Guard in the cosine denominator.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub s_r: f64,
    pub s_w: f64,
    pub s_g: f64,
    pub s_e: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            s_r: 0.8,
            s_w: 0.03,
            s_g: 0.07,
            s_e: 0.1,
        }
    }
}

impl LossWeights {
    /// Weights for the emotion-objective-only strategy.
    pub fn emotion_only() -> Self {
        Self {
            s_r: 0.6,
            s_e: 0.3,
            ..Self::default()
        }
    }

    pub fn zero() -> Self {
        Self {
            s_r: 0.0,
            s_w: 0.0,
            s_g: 0.0,
            s_e: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("s_r", self.s_r), ("s_w", self.s_w), ("s_g", self.s_g), ("s_e", self.s_e)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {n}={v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub e_s: f64,
    pub l_g: f64,
    pub l_d: f64,
    pub l_e: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_r, self.e_s, self.l_g, self.l_d, self.l_e, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Sum of absolute differences per window, averaged over `windows`.
pub fn l1_var<'t, T: Real>(generated: Var<'t, T>, target: Var<'t, T>, windows: usize) -> Var<'t, T> {
    generated.sub(target).abs().sum_all().scale(1.0 / windows as f64)
}

/// Clamped cosine `[B, 1]` between rows of `v` and `s` (`[B, D]`).
pub fn sync_prob_var<'t, T: Real>(v: Var<'t, T>, s: Var<'t, T>, eps: f64) -> Var<'t, T> {
    let dot = v.mul(s).sum_last();
    // sqrt(max(|v|^2 |s|^2, eps^2)) == max(|v| |s|, eps), without an infinite slope at 0
    let den = v
        .square()
        .sum_last()
        .mul(s.square().sum_last())
        .clamp_min(eps * eps)
        .sqrt();
    dot.div(den).clamp(P_FLOOR, 1.0)
}

/// Mean negative log of (already floored) probabilities.
pub fn sync_loss_var<'t, T: Real>(p: Var<'t, T>) -> Var<'t, T> {
    p.ln().mean_all().neg()
}

fn clamp_score<'t, T: Real>(d: Var<'t, T>) -> Var<'t, T> {
    d.clamp(P_FLOOR, 1.0 - P_FLOOR)
}

/// `mean log(1 - D(fake))`.
pub fn gen_adv_var<'t, T: Real>(d_fake: Var<'t, T>) -> Var<'t, T> {
    clamp_score(d_fake).affine(-1.0, 1.0).ln().mean_all()
}

/// `mean log D(real) + mean log(1 - D(fake))`.
pub fn disc_objective_var<'t, T: Real>(d_real: Var<'t, T>, d_fake: Var<'t, T>) -> Var<'t, T> {
    clamp_score(d_real).ln().mean_all().add(gen_adv_var(d_fake))
}

pub fn emotion_softmax_var<'t, T: Real>(logits: Var<'t, T>) -> Var<'t, T> {
    logits.softmax_last()
}

/// `mean (1 - g_d)` over rows of class probabilities `[N, K]`.
pub fn emotion_loss_var<'t, T: Real>(probs: Var<'t, T>, class: usize) -> Var<'t, T> {
    probs.narrow(1, class, 1).mean_all().affine(-1.0, 1.0)
}

pub fn total_var<'t, T: Real>(
    l_r: Var<'t, T>,
    e_s: Var<'t, T>,
    l_g: Var<'t, T>,
    l_e: Var<'t, T>,
    w: &LossWeights,
) -> Var<'t, T> {
    l_r.scale(w.s_r)
        .add(e_s.scale(w.s_w))
        .add(l_g.scale(w.s_g))
        .add(l_e.scale(w.s_e))
}

fn eval1(shape: &[usize], data: &[f64], f: impl for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>) -> f64 {
    let tape = Tape::<f64>::new();
    f(tape.constant(Array::from_vec(shape, data.to_vec()))).item()
}

/// Windows are the leading axis of `shape`.
pub fn l1_reconstruction(shape: &[usize], generated: &[f64], target: &[f64]) -> Result<f64> {
    let n: usize = shape.iter().product();
    if shape.is_empty() || shape[0] == 0 {
        return Err(Error::invalid("need at least one window"));
    }
    if generated.len() != n || target.len() != n {
        return Err(Error::shape(&[n], &[generated.len().min(target.len())]));
    }
    let tape = Tape::<f64>::new();
    let g = tape.constant(Array::from_vec(shape, generated.to_vec()));
    let t = tape.constant(Array::from_vec(shape, target.to_vec()));
    Ok(l1_var(g, t, shape[0]).item())
}

pub fn sync_prob(v: &[f64], s: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be > 0, got {eps}")));
    }
    if v.len() != s.len() || v.is_empty() {
        return Err(Error::shape(&[v.len()], &[s.len()]));
    }
    let tape = Tape::<f64>::new();
    let d = v.len();
    let vv = tape.constant(Array::from_vec(&[1, d], v.to_vec()));
    let ss = tape.constant(Array::from_vec(&[1, d], s.to_vec()));
    Ok(sync_prob_var(vv, ss, eps).item())
}

/// Raw cosine `(v . s) / max(|v| |s|, eps)` before the probability floor.
pub fn guarded_cosine(v: &[f64], s: &[f64], eps: f64) -> f64 {
    let dot: f64 = v.iter().zip(s).map(|(a, b)| a * b).sum();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ns = s.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nv * ns).max(eps)
}

pub fn sync_loss(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::invalid("empty probability batch"));
    }
    if let Some(p) = probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::invalid(format!("sync probability {p} outside (0, 1]")));
    }
    Ok(eval1(&[probs.len(), 1], probs, sync_loss_var))
}

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::invalid(format!("empty {what} batch")));
    }
    if let Some(d) = scores.iter().find(|&&d| !(d > 0.0 && d < 1.0)) {
        return Err(Error::invalid(format!("{what} score {d} outside (0, 1)")));
    }
    Ok(())
}

/// `(L_g, L_d)`.
pub fn gan_losses(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, f64)> {
    check_scores(d_real, "real")?;
    check_scores(d_fake, "fake")?;
    let tape = Tape::<f64>::new();
    let r = tape.constant(Array::from_vec(&[d_real.len(), 1], d_real.to_vec()));
    let f = tape.constant(Array::from_vec(&[d_fake.len(), 1], d_fake.to_vec()));
    Ok((gen_adv_var(f).item(), disc_objective_var(r, f).item()))
}

/// Same as [`gan_losses`] but clamps instead of rejecting, for limit checks.
pub fn gan_losses_clamped(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    let tape = Tape::<f64>::new();
    let r = tape.constant(Array::from_vec(&[d_real.len(), 1], d_real.to_vec()));
    let f = tape.constant(Array::from_vec(&[d_fake.len(), 1], d_fake.to_vec()));
    (gen_adv_var(f).item(), disc_objective_var(r, f).item())
}

pub fn emotion_softmax(logits: &[f64]) -> Vec<f64> {
    let tape = Tape::<f64>::new();
    let z = tape.constant(Array::from_vec(&[1, logits.len()], logits.to_vec()));
    emotion_softmax_var(z).value().data().to_vec()
}

/// Rows of `probs` are probability vectors over `classes` classes.
pub fn emotion_loss(probs: &[f64], classes: usize, desired: usize) -> Result<f64> {
    if desired >= classes {
        return Err(Error::invalid(format!("class {desired} out of range 0..{classes}")));
    }
    if classes == 0 || probs.is_empty() || probs.len() % classes != 0 {
        return Err(Error::shape(&[classes], &[probs.len()]));
    }
    Ok(eval1(&[probs.len() / classes, classes], probs, |p| emotion_loss_var(p, desired)))
}

pub fn total_loss(b: &LossBreakdown, w: &LossWeights) -> f64 {
    w.s_r * b.l_r + w.s_w * b.e_s + w.s_g * b.l_g + w.s_e * b.l_e
}

/// Rescale so the global L2 norm lies in `[lo, hi]`; returns the norm before
/// rescaling. An all-zero gradient is returned unchanged.
pub fn clamp_grad_norm<T: Real>(grads: &mut [Array<T>], lo: f64, hi: f64) -> Result<f64> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::invalid(format!("need 0 < lo < hi, got lo={lo} hi={hi}")));
    }
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt();
    let scale = if norm == 0.0 || !norm.is_finite() {
        1.0
    } else if norm < lo {
        lo / norm
    } else if norm > hi {
        hi / norm
    } else {
        1.0
    };
    if scale != 1.0 {
        for g in grads.iter_mut() {
            g.scale_in_place(T::of(scale));
        }
    }
    Ok(norm)
}

/// Appends `step, L_r, E_s, L_g, L_d, L_e, L_total` rows.
pub struct LossLog {
    file: std::fs::File,
}

impl LossLog {
    pub const HEADER: &'static str = "step,L_r,E_s,L_g,L_d,L_e,L_total";

    pub fn create(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{}", Self::HEADER)?;
        Ok(Self { file })
    }

    pub fn append(&mut self, step: u64, b: &LossBreakdown) -> Result<()> {
        writeln!(self.file, "{}", Self::row(step, b))?;
        Ok(())
    }

    pub fn row(step: u64, b: &LossBreakdown) -> String {
        format!(
            "{step},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            b.l_r, b.e_s, b.l_g, b.l_d, b.l_e, b.l_total
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(l1_reconstruction(&[1, 1, 1, 1], &[0.25], &[0.75]).unwrap(), 0.5);
        assert_eq!(l1_reconstruction(&[2, 3], &[0.1; 6], &[0.1; 6]).unwrap(), 0.0);
        assert!(l1_reconstruction(&[2, 3], &[0.1; 6], &[0.1; 5]).is_err());

        assert!((sync_prob(&[0.6, 0.8], &[0.6, 0.8], COSINE_EPS).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sync_prob(&[1.0, 0.0], &[0.0, 1.0], COSINE_EPS).unwrap(), P_FLOOR);
        assert_eq!(guarded_cosine(&[1.0, 0.0], &[0.0, 1.0], COSINE_EPS), 0.0);
        let z = sync_prob(&[1.0, 0.0], &[0.0, 0.0], 1e-8).unwrap();
        assert!(z.is_finite());
        assert!(sync_prob(&[1.0], &[1.0], 0.0).is_err());

        assert_eq!(sync_loss(&[1.0, 1.0]).unwrap(), 0.0);
        assert!((sync_loss(&[(-1f64).exp()]).unwrap() - 1.0).abs() < 1e-12);
        assert!((sync_loss(&[1.0, (-2f64).exp()]).unwrap() - 1.0).abs() < 1e-12);
        assert!(sync_loss(&[0.0]).is_err());

        let (lg, ld) = gan_losses(&[0.5], &[0.5]).unwrap();
        assert!((lg - 0.5f64.ln()).abs() < 1e-12);
        assert!((ld - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!(gan_losses(&[1.0], &[0.5]).is_err());
        let (_, ld) = gan_losses_clamped(&[1.0], &[0.0]);
        assert!((ld - 2.0 * (1.0 - P_FLOOR).ln()).abs() < 1e-15);

        let g = emotion_softmax(&[0.0, 0.0, 0.0]);
        assert!(g.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        let g = emotion_softmax(&[1.0, 0.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((g[0] - e / (e + 2.0)).abs() < 1e-12);
        let shifted = emotion_softmax(&[101.0, 100.0, 100.0]);
        assert!(g.iter().zip(&shifted).all(|(a, b)| (a - b).abs() < 1e-9));

        assert_eq!(emotion_loss(&[0.0, 1.0, 0.0], 3, 1).unwrap(), 0.0);
        assert!((emotion_loss(&[1.0 / 3.0; 3], 3, 0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((emotion_loss(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 3, 0).unwrap() - 0.5).abs() < 1e-12);
        assert!(emotion_loss(&[1.0, 0.0, 0.0], 3, 3).is_err());

        let w = LossWeights::default();
        assert!((w.s_r + w.s_w + w.s_g + w.s_e - 1.0).abs() < 1e-12);
        assert_eq!(total_loss(&LossBreakdown::default(), &w), 0.0);
        let unit_r = LossBreakdown { l_r: 1.0, ..Default::default() };
        assert!((total_loss(&unit_r, &w) - 0.8).abs() < 1e-12);
        let unit_e = LossBreakdown { l_e: 1.0, ..Default::default() };
        assert!((total_loss(&unit_e, &LossWeights::emotion_only()) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn grad_norm_clamping() {
        let mut g = vec![Array::from_vec(&[2], vec![0.6f64, 0.8])];
        clamp_grad_norm(&mut g, 1e-2, 1e10).unwrap();
        assert_eq!(g[0].data(), &[0.6, 0.8]);
        let mut g = vec![Array::from_vec(&[2], vec![0.6e-4f64, 0.8e-4])];
        clamp_grad_norm(&mut g, 1e-2, 1e10).unwrap();
        assert!((g[0].sq_norm().sqrt() - 1e-2).abs() < 1e-9);
        let mut z = vec![Array::<f64>::zeros(&[3])];
        assert_eq!(clamp_grad_norm(&mut z, 1e-2, 1e10).unwrap(), 0.0);
        assert!(clamp_grad_norm(&mut z, 1.0, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn clamp_preserves_direction(v in proptest::collection::vec(-1e3f64..1e3, 2..20), lo in 1e-3f64..1.0) {
            let before = Array::from_vec(&[v.len()], v.clone());
            let mut g = vec![before.clone()];
            let n = clamp_grad_norm(&mut g, lo, lo * 10.0).unwrap();
            prop_assume!(n > 0.0);
            let dot: f64 = before.data().iter().zip(g[0].data()).map(|(a, b)| a * b).sum();
            let cos = dot / (before.sq_norm().sqrt() * g[0].sq_norm().sqrt());
            prop_assert!((cos - 1.0).abs() < 1e-9);
            let m = g[0].sq_norm().sqrt();
            prop_assert!(m >= lo * (1.0 - 1e-9) && m <= lo * 10.0 * (1.0 + 1e-9));
        }

        #[test]
        fn emotion_loss_in_unit_interval(z in proptest::collection::vec(-20f64..20.0, 3..30), d in 0usize..3) {
            let rows = z.len() / 3;
            prop_assume!(rows > 0);
            let probs: Vec<f64> = z[..rows * 3].chunks(3).flat_map(emotion_softmax).collect();
            let l = emotion_loss(&probs, 3, d).unwrap();
            prop_assert!((0.0..=1.0).contains(&l));
        }

        #[test]
        fn total_is_linear(a in -5f64..5.0, b in -5f64..5.0, t in -3f64..3.0) {
            let w = LossWeights::default();
            let mk = |r| LossBreakdown { l_r: r, e_s: 0.3, l_g: -0.2, l_e: 0.4, ..Default::default() };
            let lhs = total_loss(&mk(a + t * (b - a)), &w);
            let rhs = total_loss(&mk(a), &w) + t * (total_loss(&mk(b), &w) - total_loss(&mk(a), &w));
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    /// Central-difference check on a 20-element input.
    fn fd_check(f: impl for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>, x0: Vec<f64>, shape: &[usize]) {
        let tape = Tape::new();
        let x = tape.input(Array::from_vec(shape, x0.clone()));
        let g = tape.backward(f(x));
        let ana = g.get(x).unwrap().clone();
        for i in 0..x0.len() {
            let e = |d: f64| {
                let mut xp = x0.clone();
                xp[i] += d;
                eval1(shape, &xp, &f)
            };
            let h = 1e-6;
            let num = (e(h) - e(-h)) / (2.0 * h);
            let a = ana.data()[i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
            assert!(rel < 1e-3, "element {i}: analytic {a} numeric {num}");
        }
    }

    fn toy(seed: u64, lo: f64, hi: f64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..20).map(|_| r.gen_range(lo..hi)).collect()
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let target = Array::from_vec(&[2, 10], toy(1, 0.0, 1.0));
        let t2 = target.clone();
        fd_check(move |x| l1_var(x, x.tape().constant(t2.clone()), 2), toy(2, 0.0, 1.0), &[2, 10]);
        let s = Array::from_vec(&[2, 10], toy(3, -1.0, 1.0));
        // aligned pairs keep the cosine inside the unclamped range
        let s2 = s.clone();
        let v0: Vec<f64> = s.data().iter().zip(toy(4, -0.3, 0.3)).map(|(a, b)| a + b).collect();
        fd_check(move |x| sync_loss_var(sync_prob_var(x, x.tape().constant(s2.clone()), COSINE_EPS)), v0, &[2, 10]);
        fd_check(gen_adv_var, toy(5, 0.05, 0.95), &[20, 1]);
        let fake = Array::from_vec(&[20, 1], toy(6, 0.05, 0.95));
        fd_check(move |x| disc_objective_var(x, x.tape().constant(fake.clone())), toy(7, 0.05, 0.95), &[20, 1]);
        fd_check(|x| emotion_loss_var(emotion_softmax_var(x), 2), toy(8, -3.0, 3.0).into_iter().take(18).collect(), &[6, 3]);
        let w = LossWeights::default();
        fd_check(
            move |x| {
                let parts: Vec<_> = (0..4).map(|k| x.narrow(1, k, 1).square().sum_all()).collect();
                total_var(parts[0], parts[1], parts[2], parts[3], &w)
            },
            toy(9, -1.0, 1.0),
            &[5, 4],
        );
    }

    #[test]
    fn loss_log_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let mut log = LossLog::create(&p).unwrap();
        log.append(3, &LossBreakdown { l_r: 1.0, ..Default::default() }).unwrap();
        drop(log);
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], LossLog::HEADER);
        assert!(lines[1].starts_with("3,1.0"));
    }
}
