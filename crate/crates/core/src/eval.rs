//! Video-level affect, normalized emotion-change ratios, lip-sync error
//! metrics, Fréchet distance and report aggregation.

use crate::error::{Error, Result};
use crate::facegen::Emotion;
use crate::media::{AudioFeatures, Frame};
use crate::scorers::{AffectScore, Scorer};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Minimum `|dst - src|` for a ratio to be reported.
pub const DEGENERACY_THRESHOLD: f64 = 0.05;
/// Offset range (frames) scanned by the sync confidence.
pub const LSE_OFFSETS: usize = 7;
/// Ridge added to covariances when the matrix square root does not converge.
pub const FID_RIDGE: f64 = 1e-6;
/// Side of the pooled greyscale thumbnail used as the FID embedding.
pub const FID_THUMB: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoAffect {
    pub v_bar: f64,
    pub a_bar: f64,
    pub frame_count: usize,
    /// Frames rejected by the face gate.
    pub skipped: usize,
}

/// Mean of per-frame scores; failed frames are skipped and counted.
pub fn video_affect_from(scores: &[Result<AffectScore>]) -> Result<VideoAffect> {
    if scores.is_empty() {
        return Err(Error::invalid("video has no frames"));
    }
    let ok: Vec<&AffectScore> = scores.iter().filter_map(|s| s.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(Error::NoFace);
    }
    let n = ok.len() as f64;
    Ok(VideoAffect {
        v_bar: ok.iter().map(|s| s.valence as f64).sum::<f64>() / n,
        a_bar: ok.iter().map(|s| s.arousal as f64).sum::<f64>() / n,
        frame_count: ok.len(),
        skipped: scores.len() - ok.len(),
    })
}

pub fn video_affect(frames: &[Frame], scorer: &Scorer) -> Result<VideoAffect> {
    let refs: Vec<&Frame> = frames.iter().collect();
    video_affect_from(&scorer.affect_batch(&refs))
}

/// `1 - |1 - x|`: penalizes overshooting a neutral destination.
pub fn overshoot_normalize(x: f64) -> f64 {
    1.0 - (1.0 - x).abs()
}

/// `(g - s) / (d - s)`, or `None` when `|d - s| < DEGENERACY_THRESHOLD`.
pub fn delta_ratio(g: f64, s: f64, d: f64, dst_is_neutral: bool) -> Option<f64> {
    let den = d - s;
    if !(den.abs() >= DEGENERACY_THRESHOLD) {
        return None;
    }
    let r = (g - s) / den;
    Some(if dst_is_neutral { overshoot_normalize(r) } else { r })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaScores {
    /// `None` marks a degenerate denominator.
    pub d_valence: Option<f64>,
    pub d_arousal: Option<f64>,
    pub normalized_for_neutral: bool,
}

pub fn delta_affect(gen: &VideoAffect, src: &VideoAffect, dst: &VideoAffect, dst_is_neutral: bool) -> DeltaScores {
    DeltaScores {
        d_valence: delta_ratio(gen.v_bar, src.v_bar, dst.v_bar, dst_is_neutral),
        d_arousal: delta_ratio(gen.a_bar, src.a_bar, dst.a_bar, dst_is_neutral),
        normalized_for_neutral: dst_is_neutral,
    }
}

/// Normalized change for 1-5 emotion ratings.
pub fn user_study_delta(e_g: f64, e_s: f64, e_d: f64, dst_is_neutral: bool) -> Result<f64> {
    for v in [e_g, e_s, e_d] {
        if !(1.0..=5.0).contains(&v) {
            return Err(Error::invalid(format!("rating {v} outside [1, 5]")));
        }
    }
    if e_s == e_d {
        return Err(Error::invalid("source and destination ratings are equal"));
    }
    let r = (e_g - e_s) / (e_d - e_s);
    Ok(if dst_is_neutral { overshoot_normalize(r) } else { r })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LseScores {
    pub lse_d: f64,
    pub lse_c: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sliding-window sync distance and offset-scan confidence.
pub fn lse_metrics(frames: &[Frame], audio: &AudioFeatures, scorer: &Scorer) -> Result<LseScores> {
    let t = scorer.window();
    let spf = scorer.steps_per_frame();
    if frames.len() < t {
        return Err(Error::invalid(format!("video has {} frames, window is {t}", frames.len())));
    }
    if audio.steps != frames.len() * spf {
        return Err(Error::shape(&[frames.len() * spf], &[audio.steps]));
    }
    let refs: Vec<&Frame> = frames.iter().collect();
    let video = scorer.mouth_open_track(&refs);
    let env: Vec<f32> = audio.frame_envelope(spf).iter().map(|&v| v as f32).collect();
    let n = frames.len();
    let audio_window = |start: isize| -> Vec<f32> {
        (0..t as isize)
            .map(|i| env[(start + i).clamp(0, n as isize - 1) as usize])
            .collect()
    };
    let k = LSE_OFFSETS as isize;
    let (mut dist, mut conf) = (0.0, 0.0);
    let windows = n - t + 1;
    for w in 0..windows {
        let v = &video[w..w + t];
        let at = scorer.embed_tracks(v, &audio_window(w as isize));
        dist += at.distance();
        let mut sims: Vec<f64> = (-k..=k)
            .map(|o| scorer.embed_tracks(v, &audio_window(w as isize + o)).cosine())
            .collect();
        let s0 = sims[k as usize];
        conf += s0 - median(&mut sims);
    }
    Ok(LseScores {
        lse_d: dist / windows as f64,
        lse_c: conf / windows as f64,
    })
}

/// Mean offset-0 cosine between video and audio sync embeddings over
/// sliding windows.
pub fn sync_cosine(frames: &[Frame], audio: &AudioFeatures, scorer: &Scorer) -> Result<f64> {
    let t = scorer.window();
    let spf = scorer.steps_per_frame();
    if frames.len() < t {
        return Err(Error::invalid(format!("video has {} frames, window is {t}", frames.len())));
    }
    if audio.steps != frames.len() * spf {
        return Err(Error::shape(&[frames.len() * spf], &[audio.steps]));
    }
    let refs: Vec<&Frame> = frames.iter().collect();
    let video = scorer.mouth_open_track(&refs);
    let env: Vec<f32> = audio.frame_envelope(spf).iter().map(|&v| v as f32).collect();
    let windows = frames.len() - t + 1;
    let total: f64 = (0..windows)
        .map(|w| scorer.embed_tracks(&video[w..w + t], &env[w..w + t]).cosine())
        .sum();
    Ok(total / windows as f64)
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let dim = a.first().map(Vec::len).unwrap_or(0);
    if dim == 0 {
        return Err(Error::invalid("empty feature set"));
    }
    for set in [a, b] {
        if set.len() < dim + 1 {
            return Err(Error::invalid(format!("need at least {} samples, got {}", dim + 1, set.len())));
        }
        if set.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("feature vectors differ in length"));
        }
    }
    let (ma, ca) = gaussian_fit(a, dim);
    let (mb, cb) = gaussian_fit(b, dim);
    let cross = |ca: &DMatrix<f64>, cb: &DMatrix<f64>| -> Result<f64> {
        let ra = sqrtm_psd(ca)?;
        Ok(ca.trace() + cb.trace() - 2.0 * sqrtm_psd(&(&ra * cb * &ra))?.trace())
    };
    let spread = match cross(&ca, &cb) {
        Ok(v) => v,
        Err(Error::Numerical(_)) => {
            let ridge = DMatrix::identity(dim, dim) * FID_RIDGE;
            cross(&(&ca + &ridge), &(&cb + &ridge))?
        }
        Err(e) => return Err(e),
    };
    Ok(((&ma - &mb).norm_squared() + spread).max(0.0))
}

fn gaussian_fit(set: &[Vec<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len() as f64;
    let mut mean = DVector::zeros(dim);
    for v in set {
        mean += DVector::from_column_slice(v);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in set {
        let d = DVector::from_column_slice(v) - &mean;
        cov += &d * d.transpose();
    }
    cov /= n - 1.0;
    (mean, cov)
}

fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("matrix square root did not converge".into()))?;
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Greyscale thumbnail embedding (average-pooled to `FID_THUMB` squared).
pub fn frame_features(f: &Frame) -> Vec<f64> {
    let (bh, bw) = (f.height.div_ceil(FID_THUMB), f.width.div_ceil(FID_THUMB));
    let mut out = vec![0.0; FID_THUMB * FID_THUMB];
    let mut count = vec![0usize; FID_THUMB * FID_THUMB];
    for y in 0..f.height {
        for x in 0..f.width {
            let g = (0..f.channels).map(|c| f.get(y, x, c) as f64).sum::<f64>() / f.channels as f64;
            let i = (y / bh).min(FID_THUMB - 1) * FID_THUMB + (x / bw).min(FID_THUMB - 1);
            out[i] += g;
            count[i] += 1;
        }
    }
    out.iter().zip(count).map(|(s, c)| s / c.max(1) as f64).collect()
}

/// One evaluated video of an ordered emotion pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub source: Emotion,
    pub destination: Emotion,
    pub actor: u32,
    pub utterance: u32,
    pub gen: VideoAffect,
    pub src: VideoAffect,
    pub dst: VideoAffect,
    pub delta: DeltaScores,
    pub lse: LseScores,
}

/// Per-pair Fréchet distance between generated and destination frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub source: Emotion,
    pub destination: Emotion,
}

pub fn all_pairs() -> Vec<PairKey> {
    let mut out = Vec::new();
    for s in [Emotion::Sad, Emotion::Neutral, Emotion::Happy] {
        for d in [Emotion::Sad, Emotion::Neutral, Emotion::Happy] {
            if s != d {
                out.push(PairKey { source: s, destination: d });
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub videos: usize,
    pub d_valence: Option<f64>,
    pub d_arousal: Option<f64>,
    pub degenerate_valence: usize,
    pub degenerate_arousal: usize,
    pub lse_d: Option<f64>,
    pub lse_c: Option<f64>,
    pub fid: Option<f64>,
    /// Ground-truth change `v_d - v_s`.
    pub baseline_valence: Option<f64>,
    /// Ground-truth change `a_d - a_s`.
    pub baseline_arousal: Option<f64>,
    pub missing: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pairs: Vec<MetricRow>,
    /// Pooled over every video of every pair.
    pub micro: MetricRow,
    /// Unweighted mean of the per-pair means.
    pub pair_mean: MetricRow,
    /// Mean FID between ground-truth videos of different emotions.
    pub ground_truth_fid: Option<f64>,
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn row_from(label: String, videos: &[&VideoRecord], fid: Option<f64>) -> MetricRow {
    MetricRow {
        label,
        videos: videos.len(),
        d_valence: mean(videos.iter().filter_map(|r| r.delta.d_valence)),
        d_arousal: mean(videos.iter().filter_map(|r| r.delta.d_arousal)),
        degenerate_valence: videos.iter().filter(|r| r.delta.d_valence.is_none()).count(),
        degenerate_arousal: videos.iter().filter(|r| r.delta.d_arousal.is_none()).count(),
        lse_d: mean(videos.iter().map(|r| r.lse.lse_d)),
        lse_c: mean(videos.iter().map(|r| r.lse.lse_c)),
        fid,
        baseline_valence: mean(videos.iter().map(|r| r.dst.v_bar - r.src.v_bar)),
        baseline_arousal: mean(videos.iter().map(|r| r.dst.a_bar - r.src.a_bar)),
        missing: videos.is_empty(),
    }
}

/// Per-pair rows in fixed pair order plus pooled and pair-mean summaries.
pub fn aggregate_report(records: &[VideoRecord], fids: &BTreeMap<PairKey, f64>) -> MetricReport {
    let mut sorted: Vec<&VideoRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.source, r.destination, r.actor, r.utterance));
    let pairs: Vec<MetricRow> = all_pairs()
        .into_iter()
        .map(|k| {
            let vids: Vec<&VideoRecord> = sorted
                .iter()
                .copied()
                .filter(|r| r.source == k.source && r.destination == k.destination)
                .collect();
            row_from(format!("{}->{}", k.source.name(), k.destination.name()), &vids, fids.get(&k).copied())
        })
        .collect();
    let micro = row_from("micro".into(), &sorted, mean(fids.values().copied()));
    let present: Vec<&MetricRow> = pairs.iter().filter(|r| !r.missing).collect();
    let pm = |f: fn(&MetricRow) -> Option<f64>| mean(present.iter().filter_map(|r| f(r)));
    let pair_mean = MetricRow {
        label: "pair-mean".into(),
        videos: micro.videos,
        d_valence: pm(|r| r.d_valence),
        d_arousal: pm(|r| r.d_arousal),
        degenerate_valence: micro.degenerate_valence,
        degenerate_arousal: micro.degenerate_arousal,
        lse_d: pm(|r| r.lse_d),
        lse_c: pm(|r| r.lse_c),
        fid: pm(|r| r.fid),
        baseline_valence: pm(|r| r.baseline_valence),
        baseline_arousal: pm(|r| r.baseline_arousal),
        missing: present.is_empty(),
    };
    MetricReport {
        pairs,
        micro,
        pair_mean,
        ground_truth_fid: None,
    }
}

impl MetricReport {
    /// Aligned text table, one row per pair plus summaries.
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>10}",
            "pair", "videos", "LSE-D", "LSE-C", "FID", "dValence", "dArousal", "v_d-v_s", "a_d-a_s"
        );
        for r in self.pairs.iter().chain([&self.micro, &self.pair_mean]) {
            let _ = writeln!(
                s,
                "{:<16} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>10}",
                r.label,
                r.videos,
                f(r.lse_d),
                f(r.lse_c),
                f(r.fid),
                f(r.d_valence),
                f(r.d_arousal),
                f(r.baseline_valence),
                f(r.baseline_arousal)
            );
        }
        if let Some(g) = self.ground_truth_fid {
            let _ = writeln!(s, "ground-truth cross-emotion FID: {g:.4}");
        }
        s
    }
}
