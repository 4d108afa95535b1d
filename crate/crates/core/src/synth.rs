//! Ray-cast renderer for a textured room and an orbiting camera, used as a
//! sequence with exactly known geometry.
//!
//! Every length in the scene is multiplied by `scale`. With a power-of-two
//! scale all floating-point steps scale exactly, so rendered images do not
//! change.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::dataio::{
    frame_seed, save_trajectory, synth_darken, write_sequence_header, CameraIntrinsics, DarkLevel,
    DataError, Trajectory, TrajectorySample,
};
use crate::geometry::PoseSE3;
use crate::raster::{ColorImage, GrayImage};

pub const FRAME_INTERVAL: f64 = 0.05;
pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    cell: f64,
    id: u64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    room: Aabb,
    boxes: Vec<Aabb>,
    /// Gray levels span `[lo, hi]`.
    pub tone: (u8, u8),
}

fn aabb(c: [f64; 3], h: [f64; 3], cell: f64, id: u64, s: f64) -> Aabb {
    let c = Vector3::from(c) * s;
    let h = Vector3::from(h) * s;
    Aabb {
        lo: c - h,
        hi: c + h,
        cell: cell * s,
        id,
    }
}

/// A 6 × 4 × 8 m room with three boxes between the walls and the camera.
pub fn room_scene(scale: f64) -> Scene {
    Scene {
        room: aabb([0.0, 0.0, 3.0], [3.0, 2.0, 4.0], 0.25, 1, scale),
        boxes: vec![
            aabb([-0.9, 0.6, 3.0], [0.4, 0.6, 0.4], 0.08, 2, scale),
            aabb([1.0, -0.3, 4.0], [0.5, 0.5, 0.5], 0.1, 3, scale),
            aabb([0.2, 1.1, 2.2], [0.3, 0.3, 0.3], 0.06, 4, scale),
        ],
        tone: (20, 140),
    }
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480)
}

fn mix(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Running-bond bricks of random gray.
fn brick(face: u64, u: f64, v: f64, cell: f64, tone: (u8, u8)) -> f64 {
    let row = (v / cell).floor() as i64;
    let shift = if row & 1 == 1 { 0.5 * cell } else { 0.0 };
    let col = ((u + shift) / (cell * 1.6)).floor() as i64;
    let h = mix(face ^ mix(row as u64 ^ mix(col as u64)));
    let span = tone.1 as u64 - tone.0 as u64 + 1;
    (tone.0 as u64 + h % span) as f64
}

/// Entry/exit distances of a ray through a box.
fn slab(o: &Vector3<f64>, d: &Vector3<f64>, b: &Aabb) -> Option<(f64, f64, usize, usize)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut a0, mut a1) = (0, 0);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < b.lo[a] || o[a] > b.hi[a] {
                return None;
            }
            continue;
        }
        let (mut n, mut f) = ((b.lo[a] - o[a]) / d[a], (b.hi[a] - o[a]) / d[a]);
        if n > f {
            std::mem::swap(&mut n, &mut f);
        }
        if n > t0 {
            t0 = n;
            a0 = a;
        }
        if f < t1 {
            t1 = f;
            a1 = a;
        }
    }
    (t0 <= t1).then_some((t0, t1, a0, a1))
}

impl Scene {
    fn shade(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
        let mut best: Option<(f64, usize, &Aabb, bool)> = None;
        for b in &self.boxes {
            if let Some((t0, _, a0, _)) = slab(o, d, b) {
                if t0 > 0.0 && best.is_none_or(|(t, ..)| t0 < t) {
                    best = Some((t0, a0, b, d[a0] > 0.0));
                }
            }
        }
        if best.is_none() {
            if let Some((_, t1, _, a1)) = slab(o, d, &self.room) {
                best = Some((t1, a1, &self.room, d[a1] > 0.0));
            }
        }
        let Some((t, axis, b, positive)) = best else {
            return 0.0;
        };
        let p = o + d * t;
        let (u, v) = match axis {
            0 => (p.z, p.y),
            1 => (p.x, p.z),
            _ => (p.x, p.y),
        };
        let face = b.id * 8 + axis as u64 * 2 + positive as u64;
        brick(face, u, v, b.cell, self.tone)
    }

    /// Renders one view with 2×2 supersampling.
    pub fn render(&self, pose: &PoseSE3, k: &CameraIntrinsics) -> GrayImage {
        let (w, h) = (k.width, k.height);
        let r_t = pose.rotation().transpose();
        let o = pose.center();
        let rows: Vec<Vec<u8>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| {
                        let mut acc = 0.0;
                        for (sx, sy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                            let n = Vector3::new(
                                (x as f64 + sx - k.cx) / k.fx,
                                (y as f64 + sy - k.cy) / k.fy,
                                1.0,
                            );
                            acc += self.shade(&o, &(r_t * n));
                        }
                        (acc / 4.0).round() as u8
                    })
                    .collect()
            })
            .collect();
        GrayImage::from_vec(w, h, rows.concat()).expect("sized")
    }

    /// First surface point seen along the pixel ray, if any.
    pub fn surface_point(&self, pose: &PoseSE3, k: &CameraIntrinsics, px: Vector2<f64>) -> Option<Vector3<f64>> {
        let n = k.normalize(px);
        let d = pose.rotation().transpose() * Vector3::new(n.x, n.y, 1.0);
        let o = pose.center();
        let mut t_best = f64::INFINITY;
        for b in &self.boxes {
            if let Some((t0, ..)) = slab(&o, &d, b) {
                if t0 > 0.0 {
                    t_best = t_best.min(t0);
                }
            }
        }
        if !t_best.is_finite() {
            t_best = slab(&o, &d, &self.room)?.1;
        }
        Some(o + d * t_best)
    }
}

/// Camera on an ellipse around the origin, looking at a point 3 m ahead;
/// one revolution over `n` frames.
pub fn orbit_poses(n: usize, scale: f64) -> Vec<PoseSE3> {
    (0..n)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / n.max(1) as f64;
            let eye = Vector3::new(0.5 * phi.cos(), 0.2 * phi.sin(), 0.15 * phi.sin()) * scale;
            let target = Vector3::new(0.0, 0.0, 3.0) * scale;
            PoseSE3::look_at(eye, target, Vector3::y())
        })
        .collect()
}

pub fn orbit_trajectory(n: usize, scale: f64) -> Trajectory {
    Trajectory {
        samples: orbit_poses(n, scale)
            .into_iter()
            .enumerate()
            .map(|(i, pose)| TrajectorySample {
                timestamp: i as f64 * FRAME_INTERVAL,
                pose,
            })
            .collect(),
    }
}

/// Renders the orbit into the standard sequence layout plus a ground-truth
/// trajectory. `dark` darkens each frame with a per-frame seed.
pub fn write_orbit_sequence(
    root: &Path,
    n: usize,
    scale: f64,
    dark: Option<(DarkLevel, u64)>,
) -> Result<(), DataError> {
    let scene = room_scene(scale);
    let k = default_intrinsics();
    let traj = orbit_trajectory(n, scale);
    let frames: Vec<(f64, String)> = traj
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.timestamp, format!("{i:06}.png")))
        .collect();
    let mut meta = BTreeMap::new();
    meta.insert(
        "luminosity".to_string(),
        dark.map_or("bright", |(l, _)| l.label()).to_string(),
    );
    let images = write_sequence_header(root, &frames, &k, &meta)?;
    for (i, s) in traj.samples.iter().enumerate() {
        let img = render_frame(&scene, &s.pose, &k, i, dark);
        img.save(&images.join(&frames[i].1))?;
    }
    save_trajectory(&traj, &root.join(GROUNDTRUTH_FILE))
}

pub fn render_frame(
    scene: &Scene,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    index: usize,
    dark: Option<(DarkLevel, u64)>,
) -> ColorImage {
    let img = scene.render(pose, k).into_color();
    match dark {
        Some((level, seed)) => synth_darken(&img, level, frame_seed(seed, index)),
        None => img,
    }
}
