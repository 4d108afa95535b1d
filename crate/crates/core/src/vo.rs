//! Monocular tracking state machine: two-view initialization, frame-to-map
//! pose tracking, keyframe insertion with triangulation, and a per-frame
//! status log.
//!
//! There is no relocalization. After `lost_patience` consecutive lost frames
//! the map is dropped and initialization starts over.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::{CameraIntrinsics, ImageSequence, Trajectory};
use crate::features::{orb_detect_and_describe, Descriptor, FeatureError, Keypoint, OrbConfig};
use crate::geometry::{
    decompose_essential, essential_from_fundamental, pnp, refine_pose, triangulate, Landmark,
    PoseSE3,
};
use crate::imgproc::EnhancerConfig;
use crate::matching::{
    match_ratio, median_disparity, ransac_fundamental, ransac_trials, Match, RansacParams,
};
use crate::pipeline::{FrameSource, PipelineError};
use crate::raster::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FrameStatus {
    NotInitialized,
    Initializing,
    Tracking,
    Lost,
}

impl FrameStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameStatus::NotInitialized => "NotInitialized",
            FrameStatus::Initializing => "Initializing",
            FrameStatus::Tracking => "Tracking",
            FrameStatus::Lost => "Lost",
        }
    }
}

impl fmt::Display for FrameStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FrameStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "NotInitialized" => FrameStatus::NotInitialized,
            "Initializing" => FrameStatus::Initializing,
            "Tracking" => FrameStatus::Tracking,
            "Lost" => FrameStatus::Lost,
            _ => return Err(format!("unknown status `{s}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoConfig {
    pub min_init_inliers: usize,
    pub min_track_inliers: usize,
    pub keyframe_inlier_ratio: f64,
    pub reproj_threshold_px: f64,
    #[serde(serialize_with = "as_label")]
    pub enhancer: EnhancerConfig,
    pub orb: OrbConfig,
    pub match_ratio: f64,
    pub ransac: RansacParams,
    pub min_parallax_deg: f64,
    /// Frames the initializer waits on one reference before replacing it.
    pub max_init_window: usize,
    pub lost_patience: usize,
    /// Landmarks unseen for this many tracked frames are dropped.
    pub cull_after: usize,
}

fn as_label<S: serde::Serializer>(e: &EnhancerConfig, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&e.to_string())
}

impl Default for VoConfig {
    fn default() -> Self {
        Self {
            min_init_inliers: 100,
            min_track_inliers: 15,
            keyframe_inlier_ratio: 0.5,
            reproj_threshold_px: 2.0,
            enhancer: EnhancerConfig::None,
            orb: OrbConfig::default(),
            match_ratio: 0.8,
            ransac: RansacParams::default(),
            min_parallax_deg: 1.0,
            max_init_window: 30,
            lost_patience: 20,
            cull_after: 50,
        }
    }
}

impl VoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_init_inliers < 8 {
            return Err("min_init_inliers must be >= 8".into());
        }
        let positive = [
            self.min_track_inliers as f64,
            self.keyframe_inlier_ratio,
            self.reproj_threshold_px,
            self.match_ratio,
            self.min_parallax_deg,
            self.max_init_window as f64,
            self.lost_patience as f64,
            self.cull_after as f64,
        ];
        if positive.iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err("thresholds must be positive".into());
        }
        self.orb.validate().map_err(|e| e.to_string())?;
        self.enhancer.validate().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameFeatures {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl FrameFeatures {
    pub fn extract(img: &GrayImage, orb: &OrbConfig) -> Result<Self, FeatureError> {
        let (keypoints, descriptors) = orb_detect_and_describe(img, orb)?;
        Ok(Self {
            keypoints,
            descriptors,
        })
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> Vector2<f64> {
        let k = &self.keypoints[i];
        Vector2::new(k.x as f64, k.y as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PendingReason {
    TooFewKeypoints,
    TooFewMatches,
    NoMotion,
    NoConsensus,
    CheiralityAmbiguous,
    LowParallax,
    TooFewLandmarks,
}

#[derive(Debug, Clone)]
pub struct Initialization {
    /// Pose of frame b with frame a at the origin, `‖t‖ = 1`.
    pub pose: PoseSE3,
    /// Triangulated points in frame a with the keypoint indices in a and b.
    pub points: Vec<(Vector3<f64>, usize, usize)>,
}

fn reproj_error(pose: &PoseSE3, x: &Vector3<f64>, px: &Vector2<f64>, k: &CameraIntrinsics) -> f64 {
    match k.project(&pose.transform(x)) {
        Some(p) => (p - px).norm(),
        None => f64::INFINITY,
    }
}

/// Angle at `x` between the rays to both camera centers.
fn parallax(x: &Vector3<f64>, ca: &Vector3<f64>, cb: &Vector3<f64>) -> f64 {
    let (ra, rb) = (ca - x, cb - x);
    ra.angle(&rb)
}

/// Rank of the parallax angle (largest first) that must reach `min_parallax_deg`.
const PARALLAX_RANK: usize = 50;

/// Two-view initialization from frame `a` to frame `b`.
pub fn try_initialize(
    a: &FrameFeatures,
    b: &FrameFeatures,
    k: &CameraIntrinsics,
    cfg: &VoConfig,
) -> Result<Initialization, PendingReason> {
    if a.len() < cfg.min_init_inliers || b.len() < cfg.min_init_inliers {
        return Err(PendingReason::TooFewKeypoints);
    }
    let matches = match_ratio(&a.descriptors, &b.descriptors, cfg.match_ratio);
    if matches.len() < cfg.min_init_inliers {
        return Err(PendingReason::TooFewMatches);
    }
    let pa: Vec<Vector2<f64>> = matches.iter().map(|m| a.pixel(m.idx_a)).collect();
    let pb: Vec<Vector2<f64>> = matches.iter().map(|m| b.pixel(m.idx_b)).collect();
    if median_disparity(&pa, &pb) < 1.0 {
        return Err(PendingReason::NoMotion);
    }
    let fit = ransac_fundamental(&matches, &a.keypoints, &b.keypoints, &cfg.ransac)
        .map_err(|_| PendingReason::NoConsensus)?;
    if fit.n_inliers < cfg.min_init_inliers {
        return Err(PendingReason::NoConsensus);
    }
    let inl: Vec<&Match> = matches
        .iter()
        .zip(&fit.inlier_mask)
        .filter(|(_, &m)| m)
        .map(|(m, _)| m)
        .collect();
    let na: Vec<Vector2<f64>> = inl.iter().map(|m| k.normalize(a.pixel(m.idx_a))).collect();
    let nb: Vec<Vector2<f64>> = inl.iter().map(|m| k.normalize(b.pixel(m.idx_b))).collect();
    let e = essential_from_fundamental(&fit.f, k, k);
    let pose = decompose_essential(&e, &na, &nb).map_err(|_| PendingReason::CheiralityAmbiguous)?;
    let origin = PoseSE3::identity();
    let (ca, cb) = (origin.center(), pose.center());
    let mut points = Vec::new();
    let mut angles = Vec::new();
    for (i, m) in inl.iter().enumerate() {
        let Ok(tri) = triangulate(&origin, &pose, &na[i], &nb[i]) else {
            continue;
        };
        let x = tri.point;
        if !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        let ok = reproj_error(&origin, &x, &a.pixel(m.idx_a), k) < cfg.reproj_threshold_px
            && reproj_error(&pose, &x, &b.pixel(m.idx_b), k) < cfg.reproj_threshold_px;
        if ok {
            angles.push(parallax(&x, &ca, &cb));
            points.push((x, m.idx_a, m.idx_b));
        }
    }
    if points.len() < cfg.min_init_inliers {
        return Err(PendingReason::TooFewLandmarks);
    }
    angles.sort_by(|a, b| b.total_cmp(a));
    if angles[PARALLAX_RANK.min(angles.len() - 1)] < cfg.min_parallax_deg.to_radians() {
        return Err(PendingReason::LowParallax);
    }
    Ok(Initialization { pose, points })
}

#[derive(Debug, Clone)]
pub struct MapPoint {
    pub landmark: Landmark,
    /// Descriptor of the first observation.
    pub descriptor: Descriptor,
    pub last_seen: usize,
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub frame_id: usize,
    pub pose: PoseSE3,
    pub features: FrameFeatures,
    /// Map point id per keypoint.
    pub point_of: Vec<Option<usize>>,
    pub n_tracked: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrackState {
    pub map: BTreeMap<usize, MapPoint>,
    pub keyframes: Vec<Keyframe>,
    next_point: usize,
    last: Option<(usize, PoseSE3)>,
    velocity: Option<PoseSE3>,
    reference: Option<(usize, FrameFeatures)>,
    lost_run: usize,
    tracked_frames: usize,
}

impl TrackState {
    pub fn is_initialized(&self) -> bool {
        !self.keyframes.is_empty()
    }

    pub fn last_pose(&self) -> Option<PoseSE3> {
        self.last.map(|l| l.1)
    }

    fn add_point(&mut self, position: Vector3<f64>, descriptor: Descriptor, obs: Vec<(usize, usize)>, seen: usize) -> usize {
        let id = self.next_point;
        self.next_point += 1;
        self.map.insert(
            id,
            MapPoint {
                landmark: Landmark {
                    position,
                    observations: obs,
                },
                descriptor,
                last_seen: seen,
            },
        );
        id
    }

    /// Seeds the map from a successful initialization between `a` and `b`.
    pub fn from_initialization(
        a: (usize, &FrameFeatures),
        b: (usize, &FrameFeatures),
        init: &Initialization,
    ) -> Self {
        let mut s = TrackState::default();
        let mut point_a = vec![None; a.1.len()];
        let mut point_b = vec![None; b.1.len()];
        for (x, ia, ib) in &init.points {
            let id = s.add_point(*x, a.1.descriptors[*ia], vec![(a.0, *ia), (b.0, *ib)], b.0);
            point_a[*ia] = Some(id);
            point_b[*ib] = Some(id);
        }
        let n = init.points.len();
        s.keyframes.push(Keyframe {
            frame_id: a.0,
            pose: PoseSE3::identity(),
            features: a.1.clone(),
            point_of: point_a,
            n_tracked: n,
        });
        s.keyframes.push(Keyframe {
            frame_id: b.0,
            pose: init.pose,
            features: b.1.clone(),
            point_of: point_b,
            n_tracked: n,
        });
        s.last = Some((b.0, init.pose));
        s.tracked_frames = 1;
        s
    }
}

/// Outcome of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameResult {
    pub status: FrameStatus,
    pub n_inliers: usize,
    pub pose: Option<PoseSE3>,
}

fn pose_from_matches(
    init: &PoseSE3,
    p3: &[Vector3<f64>],
    p2: &[Vector2<f64>],
    k: &CameraIntrinsics,
    gates: &[f64],
    min: usize,
) -> Option<(PoseSE3, Vec<bool>)> {
    let mut pose = *init;
    for &gate in gates {
        let mask: Vec<bool> = p3
            .iter()
            .zip(p2)
            .map(|(x, u)| reproj_error(&pose, x, u, k) < gate)
            .collect();
        let (s3, s2): (Vec<_>, Vec<_>) = p3
            .iter()
            .zip(p2)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((x, u), _)| (*x, *u))
            .unzip();
        if s3.len() < min.max(6) {
            return None;
        }
        pose = refine_pose(&pose, &s3, &s2, k, 20, 1e-10).ok()?.pose;
    }
    let last = *gates.last()?;
    let mask: Vec<bool> = p3
        .iter()
        .zip(p2)
        .map(|(x, u)| reproj_error(&pose, x, u, k) < last)
        .collect();
    (mask.iter().filter(|&&m| m).count() >= min).then_some((pose, mask))
}

fn pnp_ransac(
    p3: &[Vector3<f64>],
    p2: &[Vector2<f64>],
    k: &CameraIntrinsics,
    thr: f64,
    seed: u64,
) -> Option<PoseSE3> {
    const SAMPLE: usize = 6;
    const MAX_TRIALS: usize = 200;
    if p3.len() < SAMPLE {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(PoseSE3, usize)> = None;
    let mut trials = MAX_TRIALS;
    let mut it = 0;
    while it < trials {
        it += 1;
        let idx = rand::seq::index::sample(&mut rng, p3.len(), SAMPLE);
        let s3: Vec<_> = idx.iter().map(|i| p3[i]).collect();
        let s2: Vec<_> = idx.iter().map(|i| p2[i]).collect();
        let Ok(res) = pnp(&s3, &s2, k) else {
            continue;
        };
        let n = p3
            .iter()
            .zip(p2)
            .filter(|(x, u)| reproj_error(&res.pose, x, u, k) < thr)
            .count();
        if best.is_none_or(|b| n > b.1) {
            let w = n as f64 / p3.len() as f64;
            // same adaptive rule as the F estimator, with a 6-point sample
            trials = trials.min(ransac_trials(w.powf(6.0 / 8.0), 0.99, MAX_TRIALS));
            best = Some((res.pose, n));
        }
    }
    best.map(|b| b.0)
}

/// Search window around a landmark's predicted projection.
const GUIDED_RADIUS_PX: f64 = 15.0;
const MAX_GUIDED_DISTANCE: u32 = 100;
const GRID_CELL_PX: f64 = 16.0;

/// Matches each projected landmark to the best keypoint inside the search
/// window. The ratio test only compares candidates on the same octave. A
/// keypoint claimed by several landmarks keeps the closest descriptor.
fn guided_matches(
    visible: &[(usize, Vector2<f64>)],
    map: &BTreeMap<usize, MapPoint>,
    f: &FrameFeatures,
    k: &CameraIntrinsics,
    ratio: f64,
) -> Vec<(usize, usize)> {
    let cols = (k.width as f64 / GRID_CELL_PX).ceil() as usize + 1;
    let rows = (k.height as f64 / GRID_CELL_PX).ceil() as usize + 1;
    let cell = |v: f64, n: usize| ((v / GRID_CELL_PX).floor().max(0.0) as usize).min(n - 1);
    let mut grid = vec![Vec::new(); cols * rows];
    for i in 0..f.len() {
        let p = f.pixel(i);
        grid[cell(p.y, rows) * cols + cell(p.x, cols)].push(i);
    }
    let mut claimed: Vec<Option<(u32, usize)>> = vec![None; f.len()];
    for (vi, (id, uv)) in visible.iter().enumerate() {
        let d = map[id].descriptor;
        let mut cands: Vec<(u32, usize)> = Vec::new();
        for gy in cell(uv.y - GUIDED_RADIUS_PX, rows)..=cell(uv.y + GUIDED_RADIUS_PX, rows) {
            for gx in cell(uv.x - GUIDED_RADIUS_PX, cols)..=cell(uv.x + GUIDED_RADIUS_PX, cols) {
                for &i in &grid[gy * cols + gx] {
                    if (f.pixel(i) - uv).norm() <= GUIDED_RADIUS_PX {
                        cands.push((d.hamming(&f.descriptors[i]), i));
                    }
                }
            }
        }
        let Some(&(b, i)) = cands.iter().min() else { continue };
        let octave = f.keypoints[i].octave;
        let second = cands
            .iter()
            .filter(|&&(_, j)| j != i && f.keypoints[j].octave == octave)
            .map(|c| c.0)
            .min()
            .unwrap_or(u32::MAX);
        if b > MAX_GUIDED_DISTANCE || (second != u32::MAX && b as f64 >= ratio * second as f64) {
            continue;
        }
        if claimed[i].is_none_or(|(c, _)| b < c) {
            claimed[i] = Some((b, vi));
        }
    }
    claimed
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|(_, vi)| (visible[vi].0, i)))
        .collect()
}

fn pair_points(
    map: &BTreeMap<usize, MapPoint>,
    pairs: &[(usize, usize)],
    f: &FrameFeatures,
) -> (Vec<Vector3<f64>>, Vec<Vector2<f64>>) {
    pairs
        .iter()
        .map(|&(id, kp)| (map[&id].landmark.position, f.pixel(kp)))
        .unzip()
}

fn solve_pairs(
    map: &BTreeMap<usize, MapPoint>,
    pairs: &[(usize, usize)],
    f: &FrameFeatures,
    k: &CameraIntrinsics,
    init: &PoseSE3,
    gates: &[f64],
    min: usize,
) -> Option<(PoseSE3, Vec<bool>)> {
    let (p3, p2) = pair_points(map, pairs, f);
    pose_from_matches(init, &p3, &p2, k, gates, min)
}

/// Per-frame driver owning the tracker state.
pub struct Tracker {
    pub state: TrackState,
    pub cfg: VoConfig,
    pub k: CameraIntrinsics,
}

impl Tracker {
    pub fn new(k: CameraIntrinsics, cfg: VoConfig) -> Self {
        Self {
            state: TrackState::default(),
            cfg,
            k,
        }
    }

    pub fn process(&mut self, frame_id: usize, f: &FrameFeatures) -> FrameResult {
        if self.state.is_initialized() {
            let r = self.track_frame(frame_id, f);
            if r.status == FrameStatus::Lost && self.state.lost_run >= self.cfg.lost_patience {
                log::info!("frame {frame_id}: lost for {} frames, resetting", self.state.lost_run);
                self.state = TrackState::default();
            }
            return r;
        }
        self.initialize(frame_id, f)
    }

    fn initialize(&mut self, frame_id: usize, f: &FrameFeatures) -> FrameResult {
        let pending = |status| FrameResult {
            status,
            n_inliers: 0,
            pose: None,
        };
        let Some((ref_id, reference)) = self.state.reference.take() else {
            if f.len() >= self.cfg.min_init_inliers {
                self.state.reference = Some((frame_id, f.clone()));
                return pending(FrameStatus::Initializing);
            }
            return pending(FrameStatus::NotInitialized);
        };
        match try_initialize(&reference, f, &self.k, &self.cfg) {
            Ok(init) => {
                log::info!(
                    "initialized between frames {ref_id} and {frame_id} with {} points",
                    init.points.len()
                );
                let n = init.points.len();
                self.state = TrackState::from_initialization((ref_id, &reference), (frame_id, f), &init);
                FrameResult {
                    status: FrameStatus::Tracking,
                    n_inliers: n,
                    pose: Some(init.pose),
                }
            }
            Err(reason) => {
                let stale = frame_id - ref_id >= self.cfg.max_init_window;
                let replace = stale
                    || matches!(
                        reason,
                        PendingReason::TooFewKeypoints | PendingReason::TooFewMatches
                    );
                if replace {
                    if f.len() >= self.cfg.min_init_inliers {
                        self.state.reference = Some((frame_id, f.clone()));
                        return pending(FrameStatus::Initializing);
                    }
                    return pending(FrameStatus::NotInitialized);
                }
                self.state.reference = Some((ref_id, reference));
                pending(FrameStatus::Initializing)
            }
        }
    }

    /// Tracks an initialized state into frame `frame_id`.
    pub fn track_frame(&mut self, frame_id: usize, f: &FrameFeatures) -> FrameResult {
        let cfg = &self.cfg;
        let k = &self.k;
        let lost = FrameResult {
            status: FrameStatus::Lost,
            n_inliers: 0,
            pose: None,
        };
        let Some((last_id, last_pose)) = self.state.last else {
            return lost;
        };
        let predicted = match self.state.velocity {
            Some(v) if last_id + 1 == frame_id => v.compose(&last_pose),
            _ => last_pose,
        };
        let visible: Vec<(usize, Vector2<f64>)> = self
            .state
            .map
            .iter()
            .filter_map(|(&id, p)| Some((id, k.project(&predicted.transform(&p.landmark.position))?)))
            .collect();
        let thr = cfg.reproj_threshold_px;
        let map = &self.state.map;
        let min = cfg.min_track_inliers;
        let guided = guided_matches(&visible, map, f, k, cfg.match_ratio);
        let solved = solve_pairs(map, &guided, f, k, &predicted, &[GUIDED_RADIUS_PX, 3.0 * thr, thr], min)
            .map(|r| (guided.clone(), r))
            .or_else(|| {
                let descs: Vec<Descriptor> = visible.iter().map(|(id, _)| map[id].descriptor).collect();
                let pairs: Vec<(usize, usize)> = match_ratio(&descs, &f.descriptors, cfg.match_ratio)
                    .iter()
                    .map(|m| (visible[m.idx_a].0, m.idx_b))
                    .collect();
                let direct = solve_pairs(map, &pairs, f, k, &predicted, &[8.0 * thr, 3.0 * thr, thr], min)
                    .or_else(|| {
                        let (p3, p2) = pair_points(map, &pairs, f);
                        let seed = cfg.ransac.seed ^ (frame_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                        let guess = pnp_ransac(&p3, &p2, k, thr, seed)?;
                        solve_pairs(map, &pairs, f, k, &guess, &[3.0 * thr, thr], min)
                    })?;
                Some((pairs, direct))
            });
        let Some((matches, (pose, mask))) = solved else {
            self.state.lost_run += 1;
            self.state.velocity = None;
            return lost;
        };
        let n_inliers = mask.iter().filter(|&&m| m).count();
        self.state.lost_run = 0;
        self.state.velocity = (last_id + 1 == frame_id).then(|| pose.compose(&last_pose.inverse()));
        self.state.last = Some((frame_id, pose));
        self.state.tracked_frames += 1;
        let mut point_of = vec![None; f.len()];
        for (&(id, kp), _) in matches.iter().zip(&mask).filter(|(_, &ok)| ok) {
            point_of[kp] = Some(id);
            let p = self.state.map.get_mut(&id).expect("visible point exists");
            p.last_seen = frame_id;
            p.landmark.observations.push((frame_id, kp));
        }
        let kf_tracked = self.state.keyframes.last().map_or(0, |k| k.n_tracked);
        if (n_inliers as f64) < cfg.keyframe_inlier_ratio * kf_tracked as f64 {
            self.insert_keyframe(frame_id, pose, f, point_of, n_inliers);
        }
        self.cull(frame_id);
        FrameResult {
            status: FrameStatus::Tracking,
            n_inliers,
            pose: Some(pose),
        }
    }

    fn insert_keyframe(
        &mut self,
        frame_id: usize,
        pose: PoseSE3,
        f: &FrameFeatures,
        mut point_of: Vec<Option<usize>>,
        n_inliers: usize,
    ) {
        let k = self.k.clone();
        let thr = self.cfg.reproj_threshold_px;
        let min_parallax = self.cfg.min_parallax_deg.to_radians();
        let prev = self.state.keyframes.last().expect("initialized").clone();
        let free_a: Vec<usize> = (0..prev.features.len())
            .filter(|&i| prev.point_of[i].is_none())
            .collect();
        let free_b: Vec<usize> = (0..f.len()).filter(|&i| point_of[i].is_none()).collect();
        let da: Vec<Descriptor> = free_a.iter().map(|&i| prev.features.descriptors[i]).collect();
        let db: Vec<Descriptor> = free_b.iter().map(|&i| f.descriptors[i]).collect();
        let (ca, cb) = (prev.pose.center(), pose.center());
        let mut added = 0;
        for m in match_ratio(&da, &db, self.cfg.match_ratio) {
            let (ia, ib) = (free_a[m.idx_a], free_b[m.idx_b]);
            let (ua, ub) = (prev.features.pixel(ia), f.pixel(ib));
            let Ok(tri) = triangulate(&prev.pose, &pose, &k.normalize(ua), &k.normalize(ub)) else {
                continue;
            };
            let x = tri.point;
            if !x.iter().all(|v| v.is_finite())
                || reproj_error(&prev.pose, &x, &ua, &k) >= thr
                || reproj_error(&pose, &x, &ub, &k) >= thr
                || parallax(&x, &ca, &cb) < min_parallax
            {
                continue;
            }
            let id = self.state.add_point(
                x,
                prev.features.descriptors[ia],
                vec![(prev.frame_id, ia), (frame_id, ib)],
                frame_id,
            );
            point_of[ib] = Some(id);
            added += 1;
        }
        log::debug!("keyframe at frame {frame_id}: {n_inliers} tracked, {added} new points");
        self.state.keyframes.push(Keyframe {
            frame_id,
            pose,
            features: f.clone(),
            point_of,
            n_tracked: n_inliers + added,
        });
    }

    fn cull(&mut self, frame_id: usize) {
        let limit = self.cfg.cull_after;
        let before = self.state.map.len();
        self.state
            .map
            .retain(|_, p| frame_id.saturating_sub(p.last_seen) <= limit);
        if self.state.map.len() != before {
            let map = &self.state.map;
            for kf in &mut self.state.keyframes {
                for slot in &mut kf.point_of {
                    if slot.is_some_and(|id| !map.contains_key(&id)) {
                        *slot = None;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub timestamp: f64,
    pub status: FrameStatus,
    pub n_inliers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoOutput {
    pub trajectory: Trajectory,
    pub records: Vec<FrameRecord>,
    /// Timestamp of the first Tracking frame.
    pub init_time: Option<f64>,
}

impl VoOutput {
    pub fn tracking_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let n = self
            .records
            .iter()
            .filter(|r| r.status == FrameStatus::Tracking)
            .count();
        n as f64 / self.records.len() as f64
    }

    pub fn status_csv(&self) -> String {
        status_csv(&self.records)
    }
}

pub fn status_csv(records: &[FrameRecord]) -> String {
    let mut s = String::from("frame,timestamp,status,n_inliers\n");
    for r in records {
        s.push_str(&format!("{},{},{},{}\n", r.frame, r.timestamp, r.status, r.n_inliers));
    }
    s
}

pub fn parse_status_csv(text: &str) -> Result<Vec<FrameRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.starts_with("frame") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(format!("line {}: expected 4 fields", i + 1));
        }
        let bad = |what: &str| format!("line {}: bad {what}", i + 1);
        out.push(FrameRecord {
            frame: f[0].parse().map_err(|_| bad("frame"))?,
            timestamp: f[1].parse().map_err(|_| bad("timestamp"))?,
            status: f[2].parse().map_err(|_| bad("status"))?,
            n_inliers: f[3].parse().map_err(|_| bad("n_inliers"))?,
        });
    }
    Ok(out)
}

const BATCH: usize = 16;

/// Runs the tracker over a whole sequence. Feature extraction is batched
/// and parallel; state transitions are sequential.
pub fn run_vo(seq: &ImageSequence, cfg: &VoConfig) -> Result<VoOutput, PipelineError> {
    let src = FrameSource::new(seq, &cfg.enhancer)?;
    let mut tracker = Tracker::new(seq.intrinsics.clone(), cfg.clone());
    let mut out = VoOutput {
        trajectory: Trajectory::default(),
        records: Vec::with_capacity(seq.len()),
        init_time: None,
    };
    let mut start = 0;
    while start < seq.len() {
        let end = (start + BATCH).min(seq.len());
        let feats: Vec<FrameFeatures> = (start..end)
            .into_par_iter()
            .map(|i| Ok(FrameFeatures::extract(&src.gray(i)?, &cfg.orb)?))
            .collect::<Result<_, PipelineError>>()?;
        for (i, f) in (start..end).zip(&feats) {
            let t = seq.frames[i].timestamp;
            let r = tracker.process(i, f);
            if let Some(pose) = r.pose {
                out.trajectory.push(t, pose);
                out.init_time.get_or_insert(t);
            }
            out.records.push(FrameRecord {
                frame: i,
                timestamp: t,
                status: r.status,
                n_inliers: r.n_inliers,
            });
        }
        start = end;
    }
    Ok(out)
}
