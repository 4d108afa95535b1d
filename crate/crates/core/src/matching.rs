//! Brute-force Hamming matching, the normalized eight-point algorithm, and
//! seeded RANSAC over the Sampson distance. Hosts the consecutive-frame
//! match-count benchmark.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::ImageSequence;
use crate::features::{orb_detect_and_describe, Descriptor, Keypoint, OrbConfig};
use crate::imgproc::EnhancerConfig;
use crate::pipeline::{FrameSource, PipelineError};

pub const MIN_SAMPLE: usize = 8;
/// Inliers required beyond the minimal sample, which fits itself exactly.
pub const MIN_SUPPORT: usize = 8;
/// Below this median keypoint displacement the pair is treated as static.
pub const DEGENERATE_DISPARITY_PX: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("need at least {MIN_SAMPLE} matches, got {0}")]
    TooFewMatches(usize),
    #[error("no model gathered {MIN_SUPPORT} inliers beyond its sample (best: {0})")]
    NoConsensus(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub idx_a: usize,
    pub idx_b: usize,
    pub distance: u32,
}

#[inline]
pub fn hamming(a: &Descriptor, b: &Descriptor) -> u32 {
    a.hamming(b)
}

/// Nearest and second-nearest distances of `d` in `set`, with the index of
/// the nearest (lowest index on ties).
fn two_nearest(d: &Descriptor, set: &[Descriptor]) -> Option<(usize, u32, u32)> {
    let mut best = (usize::MAX, u32::MAX, u32::MAX);
    for (j, e) in set.iter().enumerate() {
        let dist = d.hamming(e);
        if dist < best.1 {
            best = (j, dist, best.1);
        } else if dist < best.2 {
            best.2 = dist;
        }
    }
    (best.0 != usize::MAX).then_some(best)
}

/// Lowe ratio test with a mutual nearest-neighbour check. A match survives if
/// `d1 < ratio * d2`; with a single candidate `d2` is taken as 257.
pub fn match_ratio(desc_a: &[Descriptor], desc_b: &[Descriptor], ratio: f64) -> Vec<Match> {
    if desc_a.is_empty() || desc_b.is_empty() {
        return Vec::new();
    }
    let forward: Vec<Option<(usize, u32, u32)>> =
        desc_a.par_iter().map(|d| two_nearest(d, desc_b)).collect();
    let backward: Vec<usize> = desc_b
        .par_iter()
        .map(|d| two_nearest(d, desc_a).map_or(usize::MAX, |n| n.0))
        .collect();
    forward
        .into_iter()
        .enumerate()
        .filter_map(|(i, n)| {
            let (j, d1, d2) = n?;
            let d2 = if d2 == u32::MAX { 257 } else { d2 };
            ((d1 as f64) < ratio * d2 as f64 && backward[j] == i).then_some(Match {
                idx_a: i,
                idx_b: j,
                distance: d1,
            })
        })
        .collect()
}

/// Similarity taking the points to centroid 0 and RMS distance √2.
fn hartley(pts: &[Vector2<f64>]) -> Result<Matrix3<f64>, MatchError> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let ms = pts.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n;
    if ms <= 0.0 {
        return Err(MatchError::DegenerateConfiguration("coincident points"));
    }
    // collinearity: the spread has no second direction
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let d = p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (hi, lo) = (tr / 2.0 + disc, tr / 2.0 - disc);
    if lo <= 1e-12 * hi {
        return Err(MatchError::DegenerateConfiguration("collinear points"));
    }
    let s = (2.0 / ms).sqrt();
    Ok(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

/// Normalized eight-point estimate of `F` with `x_bᵀ F x_a = 0`, rank 2,
/// unit Frobenius norm, and `F[2][2] >= 0` when it is not negligible.
pub fn eight_point(
    pts_a: &[Vector2<f64>],
    pts_b: &[Vector2<f64>],
) -> Result<Matrix3<f64>, MatchError> {
    if pts_a.len() != pts_b.len() {
        return Err(MatchError::LengthMismatch(pts_a.len(), pts_b.len()));
    }
    if pts_a.len() < MIN_SAMPLE {
        return Err(MatchError::TooFewMatches(pts_a.len()));
    }
    let ta = hartley(pts_a)?;
    let tb = hartley(pts_b)?;
    let rows = pts_a.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (pa, pb)) in pts_a.iter().zip(pts_b).enumerate() {
        let x = ta * Vector3::new(pa.x, pa.y, 1.0);
        let y = tb * Vector3::new(pb.x, pb.y, 1.0);
        let r = [
            y.x * x.x,
            y.x * x.y,
            y.x,
            y.y * x.x,
            y.y * x.y,
            y.y,
            x.x,
            x.y,
            1.0,
        ];
        for (k, v) in r.iter().enumerate() {
            a[(i, k)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    if s[order[1]] <= 1e-10 * s[order[8]] {
        return Err(MatchError::DegenerateConfiguration("rank-deficient design matrix"));
    }
    let f = v_t.row(order[0]);
    let fhat = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    let svd = fhat.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut sv = svd.singular_values;
    let imin = (0..3).min_by(|&i, &j| sv[i].total_cmp(&sv[j])).unwrap();
    sv[imin] = 0.0;
    let fhat = u * Matrix3::from_diagonal(&sv) * vt;
    Ok(canonical(&(tb.transpose() * fhat * ta)))
}

fn canonical(f: &Matrix3<f64>) -> Matrix3<f64> {
    let f = f / f.norm();
    let pivot = if f[(2, 2)].abs() > 1e-12 {
        f[(2, 2)]
    } else {
        f.iter().copied().fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m })
    };
    if pivot < 0.0 {
        -f
    } else {
        f
    }
}

/// First-order geometric distance of a correspondence to `F`, in pixels.
pub fn sampson_distance(f: &Matrix3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let x = Vector3::new(a.x, a.y, 1.0);
    let y = Vector3::new(b.x, b.y, 1.0);
    let fx = f * x;
    let fty = f.transpose() * y;
    let e = y.dot(&fx);
    let den = fx.x * fx.x + fx.y * fx.y + fty.x * fty.x + fty.y * fty.y;
    if den <= 0.0 {
        return if e == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (e * e / den).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold_px: 1.0,
            confidence: 0.99,
            max_iters: 2000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalResult {
    pub f: Matrix3<f64>,
    pub inlier_mask: Vec<bool>,
    pub n_inliers: usize,
}

/// Adaptive trial count for inlier ratio `w`, capped at `max_iters`.
pub fn ransac_trials(w: f64, confidence: f64, max_iters: usize) -> usize {
    let p = w.powi(MIN_SAMPLE as i32);
    if p >= 1.0 {
        return 1;
    }
    if p <= 0.0 {
        return max_iters;
    }
    let n = ((1.0 - confidence).ln() / (1.0 - p).ln()).ceil();
    if n.is_finite() && n >= 0.0 {
        (n as usize).clamp(1, max_iters)
    } else {
        max_iters
    }
}

fn inliers(f: &Matrix3<f64>, a: &[Vector2<f64>], b: &[Vector2<f64>], thr: f64) -> Vec<bool> {
    a.iter()
        .zip(b)
        .map(|(p, q)| sampson_distance(f, p, q) <= thr)
        .collect()
}

fn select(pts: &[Vector2<f64>], mask: &[bool]) -> Vec<Vector2<f64>> {
    pts.iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect()
}

/// RANSAC over point correspondences. The best sample model is re-fitted on
/// its inliers until the inlier count stops growing; the returned mask is
/// recomputed from the returned `F`.
pub fn ransac_fundamental_points(
    pts_a: &[Vector2<f64>],
    pts_b: &[Vector2<f64>],
    params: &RansacParams,
) -> Result<FundamentalResult, MatchError> {
    if pts_a.len() != pts_b.len() {
        return Err(MatchError::LengthMismatch(pts_a.len(), pts_b.len()));
    }
    let n = pts_a.len();
    if n < MIN_SAMPLE {
        return Err(MatchError::TooFewMatches(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Matrix3<f64>, Vec<bool>, usize)> = None;
    let mut trials = params.max_iters.max(1);
    let mut it = 0;
    let mut sa = Vec::with_capacity(MIN_SAMPLE);
    let mut sb = Vec::with_capacity(MIN_SAMPLE);
    while it < trials {
        it += 1;
        let idx = rand::seq::index::sample(&mut rng, n, MIN_SAMPLE);
        sa.clear();
        sb.clear();
        for i in idx.iter() {
            sa.push(pts_a[i]);
            sb.push(pts_b[i]);
        }
        let Ok(f) = eight_point(&sa, &sb) else {
            continue;
        };
        let mask = inliers(&f, pts_a, pts_b, params.threshold_px);
        let count = mask.iter().filter(|&&m| m).count();
        if best.as_ref().is_none_or(|b| count > b.2) {
            trials = trials.min(ransac_trials(
                count as f64 / n as f64,
                params.confidence,
                params.max_iters.max(1),
            ));
            best = Some((f, mask, count));
        }
    }
    let Some((mut f, mut mask, mut count)) = best else {
        return Err(MatchError::NoConsensus(0));
    };
    if count < MIN_SAMPLE + MIN_SUPPORT {
        return Err(MatchError::NoConsensus(count));
    }
    for _ in 0..5 {
        let Ok(refit) = eight_point(&select(pts_a, &mask), &select(pts_b, &mask)) else {
            break;
        };
        let m = inliers(&refit, pts_a, pts_b, params.threshold_px);
        let c = m.iter().filter(|&&v| v).count();
        if c < count {
            break;
        }
        let grew = c > count;
        (f, mask, count) = (refit, m, c);
        if !grew {
            break;
        }
    }
    Ok(FundamentalResult {
        f,
        inlier_mask: mask,
        n_inliers: count,
    })
}

/// RANSAC over keypoint matches, in level-0 pixel coordinates.
pub fn ransac_fundamental(
    matches: &[Match],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    params: &RansacParams,
) -> Result<FundamentalResult, MatchError> {
    let (a, b) = match_points(matches, kps_a, kps_b);
    ransac_fundamental_points(&a, &b, params)
}

pub fn match_points(
    matches: &[Match],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
    matches
        .iter()
        .map(|m| {
            let (p, q) = (&kps_a[m.idx_a], &kps_b[m.idx_b]);
            (
                Vector2::new(p.x as f64, p.y as f64),
                Vector2::new(q.x as f64, q.y as f64),
            )
        })
        .unzip()
}

pub fn median_disparity(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    let mut d: Vec<f64> = a.iter().zip(b).map(|(p, q)| (p - q).norm()).collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    if d.len() % 2 == 1 {
        d[m]
    } else {
        0.5 * (d[m - 1] + d[m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    pub ratio: f64,
    pub ransac: RansacParams,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            ratio: 0.8,
            ransac: RansacParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub frame_i: usize,
    pub frame_j: usize,
    pub n_matches: usize,
    pub n_inliers: usize,
    pub degenerate_motion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnhancerRun {
    pub label: String,
    pub pairs: Vec<PairRecord>,
    /// Set when the enhancer's pipeline failed; `pairs` is then empty.
    pub error: Option<String>,
}

impl EnhancerRun {
    pub fn mean_inliers(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.n_inliers as f64).sum::<f64>() / self.pairs.len() as f64
    }

    pub fn mean_matches(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.n_matches as f64).sum::<f64>() / self.pairs.len() as f64
    }
}

/// Matches one pair and counts RANSAC inliers; static pairs count their
/// ratio-test matches and are flagged.
pub fn bench_pair(
    a: &(Vec<Keypoint>, Vec<Descriptor>),
    b: &(Vec<Keypoint>, Vec<Descriptor>),
    params: &BenchParams,
) -> (usize, usize, bool) {
    let matches = match_ratio(&a.1, &b.1, params.ratio);
    let (pa, pb) = match_points(&matches, &a.0, &b.0);
    if !matches.is_empty() && median_disparity(&pa, &pb) < DEGENERATE_DISPARITY_PX {
        return (matches.len(), matches.len(), true);
    }
    let inl = ransac_fundamental_points(&pa, &pb, &params.ransac).map_or(0, |r| r.n_inliers);
    (matches.len(), inl, false)
}

fn bench_one(
    seq: &ImageSequence,
    enhancer: &EnhancerConfig,
    orb: &OrbConfig,
    params: &BenchParams,
) -> Result<Vec<PairRecord>, PipelineError> {
    let src = FrameSource::new(seq, enhancer)?;
    let feats: Vec<(Vec<Keypoint>, Vec<Descriptor>)> = (0..src.len())
        .into_par_iter()
        .map(|i| Ok(orb_detect_and_describe(&src.gray(i)?, orb)?))
        .collect::<Result<_, PipelineError>>()?;
    Ok((1..feats.len())
        .into_par_iter()
        .map(|j| {
            let (n_matches, n_inliers, degenerate_motion) =
                bench_pair(&feats[j - 1], &feats[j], params);
            PairRecord {
                frame_i: j - 1,
                frame_j: j,
                n_matches,
                n_inliers,
                degenerate_motion,
            }
        })
        .collect())
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("match bench needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
}

/// Runs every enhancer over consecutive frame pairs. A failing enhancer is
/// reported in its own entry and does not stop the others.
pub fn match_bench(
    seq: &ImageSequence,
    enhancers: &[EnhancerConfig],
    orb: &OrbConfig,
    params: &BenchParams,
) -> Result<Vec<EnhancerRun>, BenchError> {
    if seq.len() < 2 {
        return Err(BenchError::TooFewFrames(seq.len()));
    }
    Ok(enhancers
        .iter()
        .map(|e| {
            let label = e.label();
            match bench_one(seq, e, orb, params) {
                Ok(pairs) => EnhancerRun {
                    label,
                    pairs,
                    error: None,
                },
                Err(err) => {
                    log::warn!("enhancer {label} failed: {err}");
                    EnhancerRun {
                        label,
                        pairs: Vec::new(),
                        error: Some(err.to_string()),
                    }
                }
            }
        })
        .collect())
}

pub fn pairs_csv(runs: &[EnhancerRun]) -> String {
    let mut s = String::from("enhancer,frame_i,frame_j,n_matches,n_inliers,degenerate_motion\n");
    for r in runs {
        for p in &r.pairs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.label, p.frame_i, p.frame_j, p.n_matches, p.n_inliers, p.degenerate_motion
            );
        }
    }
    s
}

/// Table-shaped summary: one row per sequence, one column per enhancer,
/// cells are mean inlier counts rounded to integers. Failed runs print `NA`.
pub fn summary_csv(rows: &[(String, Vec<EnhancerRun>)]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    for (_, runs) in rows {
        for r in runs {
            if !labels.contains(&r.label.as_str()) {
                labels.push(&r.label);
            }
        }
    }
    let mut s = String::from("sequence");
    for l in &labels {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    for (name, runs) in rows {
        s.push_str(name);
        for l in &labels {
            match runs.iter().find(|r| r.label == *l) {
                Some(r) if r.error.is_none() => {
                    let _ = write!(s, ",{}", r.mean_inliers().round() as i64);
                }
                _ => s.push_str(",NA"),
            }
        }
        s.push('\n');
    }
    s
}
