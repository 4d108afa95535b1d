//! ORB: scale pyramid, FAST-9 corners, intensity-centroid orientation and
//! steered BRIEF descriptors.

mod pattern;

use std::f32::consts::TAU;
use std::fmt::Write as _;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::GrayImage;
use pattern::BRIEF_PAIRS;

/// Radius of the orientation patch (31×31 disc).
pub const PATCH_RADIUS: i32 = 15;
/// Keypoints closer than this to a level border are discarded; a rotated
/// BRIEF test reaches at most 13·√2 pixels out.
pub const EDGE: i32 = 19;
pub const MIN_LEVEL_SIZE: u32 = 32;
const ANGLE_BINS: usize = 30;
const BLUR_RADIUS: i32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("pyramid level {level} would be {width}x{height}, below {MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}")]
    ImageTooSmall { level: usize, width: u32, height: u32 },
    #[error("invalid ORB configuration: {0}")]
    InvalidConfig(String),
    #[error("orientation moments vanish")]
    ZeroMoment,
    #[error("orientation patch leaves the image")]
    PatchOutOfBounds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Level-0 pixel coordinates.
    pub x: f32,
    pub y: f32,
    pub octave: usize,
    pub response: f32,
    /// Radians in `[0, 2π)`.
    pub angle: f32,
}

/// 256-bit binary descriptor; bit `i` is `bits[i / 64] >> (i % 64)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Descriptor {
    pub bits: [u64; 4],
}

impl Descriptor {
    #[inline]
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        (self.bits[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn flip(&mut self, i: usize) {
        self.bits[i / 64] ^= 1 << (i % 64);
    }

    /// 64 hex digits, byte 0 (bits 0..8) first.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for j in 0..32 {
            let byte = (self.bits[j / 8] >> (8 * (j % 8))) & 0xff;
            let _ = write!(s, "{byte:02x}");
        }
        s
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 || !s.is_ascii() {
            return None;
        }
        let mut bits = [0u64; 4];
        for j in 0..32 {
            let byte = u64::from_str_radix(&s[2 * j..2 * j + 2], 16).ok()?;
            bits[j / 8] |= byte << (8 * (j % 8));
        }
        Some(Self { bits })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbConfig {
    pub n_features: usize,
    pub n_levels: usize,
    pub scale_factor: f64,
    pub fast_threshold: u8,
    /// Grid cells per level, columns × rows.
    pub grid: (u32, u32),
}

impl Default for OrbConfig {
    fn default() -> Self {
        Self {
            n_features: 1000,
            n_levels: 8,
            scale_factor: 1.2,
            fast_threshold: 20,
            grid: (8, 6),
        }
    }
}

impl OrbConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        if !(self.scale_factor > 1.0 && self.scale_factor.is_finite()) {
            return bad("scale_factor must be > 1");
        }
        if self.n_levels == 0 {
            return bad("n_levels must be >= 1");
        }
        if self.fast_threshold == 0 || self.fast_threshold == 255 {
            return bad("fast_threshold must be in [1, 254]");
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return bad("grid must have at least one cell");
        }
        Ok(())
    }

    /// Target keypoint count per level, geometric in `1 / scale_factor`.
    pub fn features_per_level(&self) -> Vec<usize> {
        let f = 1.0 / self.scale_factor;
        let l = self.n_levels as i32;
        let first = self.n_features as f64 * (1.0 - f) / (1.0 - f.powi(l));
        let mut out = Vec::with_capacity(self.n_levels);
        let mut used = 0usize;
        for k in 0..l - 1 {
            let n = ((first * f.powi(k)).round() as usize).min(self.n_features - used);
            used += n;
            out.push(n);
        }
        out.push(self.n_features - used);
        out
    }
}

/// One pyramid level with the level-to-level-0 coordinate ratios.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub image: GrayImage,
    pub scale_x: f64,
    pub scale_y: f64,
}

impl PyramidLevel {
    #[inline]
    pub fn to_level0(&self, x: f64, y: f64) -> (f64, f64) {
        ((x + 0.5) * self.scale_x - 0.5, (y + 0.5) * self.scale_y - 0.5)
    }
}

pub fn level_size(width: u32, height: u32, scale_factor: f64, k: usize) -> (u32, u32) {
    let s = scale_factor.powi(k as i32);
    // the epsilon keeps exact quotients like 480 / 1.2 from flooring to 399
    let f = |d: u32| (d as f64 / s + 1e-9).floor() as u32;
    (f(width), f(height))
}

/// Level `k` is an area-averaged resampling of the input to
/// `floor(dim / scale_factor^k)`.
pub fn build_pyramid(
    img: &GrayImage,
    n_levels: usize,
    scale_factor: f64,
) -> Result<Vec<GrayImage>, FeatureError> {
    Ok(build_levels(img, n_levels, scale_factor)?
        .into_iter()
        .map(|l| l.image)
        .collect())
}

fn build_levels(
    img: &GrayImage,
    n_levels: usize,
    scale_factor: f64,
) -> Result<Vec<PyramidLevel>, FeatureError> {
    let (w0, h0) = (img.width(), img.height());
    for k in 0..n_levels {
        let (w, h) = level_size(w0, h0, scale_factor, k);
        if w < MIN_LEVEL_SIZE || h < MIN_LEVEL_SIZE {
            return Err(FeatureError::ImageTooSmall {
                level: k,
                width: w,
                height: h,
            });
        }
    }
    Ok((0..n_levels)
        .into_par_iter()
        .map(|k| {
            let (w, h) = level_size(w0, h0, scale_factor, k);
            let image = if k == 0 {
                img.clone()
            } else {
                resize_area(img, w, h)
            };
            PyramidLevel {
                image,
                scale_x: w0 as f64 / w as f64,
                scale_y: h0 as f64 / h as f64,
            }
        })
        .collect())
}

/// Per output index, the overlapped source indices and their weights.
fn area_weights(src: u32, dst: u32) -> Vec<Vec<(usize, f32)>> {
    let r = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let a = i as f64 * r;
            let b = ((i + 1) as f64 * r).min(src as f64);
            let mut taps = Vec::new();
            let mut j = a.floor() as u32;
            while (j as f64) < b && j < src {
                let lo = a.max(j as f64);
                let hi = b.min(j as f64 + 1.0);
                if hi > lo {
                    taps.push((j as usize, ((hi - lo) / r) as f32));
                }
                j += 1;
            }
            taps
        })
        .collect()
}

pub fn resize_area(img: &GrayImage, width: u32, height: u32) -> GrayImage {
    let (sw, sh) = (img.width() as usize, img.height() as usize);
    let wx = area_weights(img.width(), width);
    let wy = area_weights(img.height(), height);
    let src = img.data();
    let mut tmp = vec![0f32; width as usize * sh];
    for y in 0..sh {
        let row = &src[y * sw..(y + 1) * sw];
        for (x, taps) in wx.iter().enumerate() {
            tmp[y * width as usize + x] = taps.iter().map(|&(i, w)| row[i] as f32 * w).sum();
        }
    }
    let mut out = Vec::with_capacity(width as usize * height as usize);
    for taps in &wy {
        for x in 0..width as usize {
            let v: f32 = taps
                .iter()
                .map(|&(j, w)| tmp[j * width as usize + x] * w)
                .sum();
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::from_vec(width, height, out).expect("sizes agree")
}

const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Segment-test score of one pixel: the sum of `|p - c|` over its
/// contiguous arc of at least 9 brighter or darker circle pixels, or 0.
fn fast_score(img: &GrayImage, x: i32, y: i32, t: i32) -> u32 {
    let c = img.at(x, y) as i32;
    let p = |i: usize| img.at(x + CIRCLE[i].0, y + CIRCLE[i].1) as i32;
    // a 9-arc covers at least 2 of the 4 compass points, adjacent ones
    let compass = [p(0), p(4), p(8), p(12)];
    let bright = compass.iter().filter(|&&v| v > c + t).count();
    let dark = compass.iter().filter(|&&v| v < c - t).count();
    if bright < 2 && dark < 2 {
        return 0;
    }
    let mut ring = [0i32; 16];
    for (i, r) in ring.iter_mut().enumerate() {
        *r = p(i) - c;
    }
    arc_score(&ring, |d| d > t).max(arc_score(&ring, |d| d < -t))
}

fn arc_score(ring: &[i32; 16], pass: impl Fn(i32) -> bool) -> u32 {
    if ring.iter().all(|&d| pass(d)) {
        return ring.iter().map(|d| d.unsigned_abs()).sum();
    }
    // start scanning right after a failing pixel so runs never wrap
    let start = (0..16).find(|&i| !pass(ring[i])).unwrap();
    let (mut len, mut sum) = (0u32, 0u32);
    let mut best = 0u32;
    for k in 1..=16 {
        let d = ring[(start + k) % 16];
        if pass(d) {
            len += 1;
            sum += d.unsigned_abs();
        } else {
            if len >= 9 {
                best = best.max(sum);
            }
            len = 0;
            sum = 0;
        }
    }
    best
}

fn score_map(img: &GrayImage, threshold: u8) -> Vec<u32> {
    let (w, h) = (img.width() as i32, img.height() as i32);
    let mut scores = vec![0u32; (w * h).max(0) as usize];
    let t = threshold as i32;
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            scores[(y * w + x) as usize] = fast_score(img, x, y, t);
        }
    }
    scores
}

/// Corners surviving non-strict 3×3 non-maximum suppression whose distance
/// to every border is at least `margin`.
fn suppress(scores: &[u32], w: i32, h: i32, margin: i32) -> Vec<(i32, i32, u32)> {
    let mut out = Vec::new();
    let m = margin.max(3);
    for y in m..h - m {
        for x in m..w - m {
            let s = scores[(y * w + x) as usize];
            if s == 0 {
                continue;
            }
            let is_max = (-1..=1).all(|dy| {
                (-1..=1).all(|dx| scores[((y + dy) * w + x + dx) as usize] <= s)
            });
            if is_max {
                out.push((x, y, s));
            }
        }
    }
    out
}

/// FAST-9 corners in raster order, octave 0, angle 0.
pub fn detect_fast(img: &GrayImage, threshold: u8) -> Vec<Keypoint> {
    let (w, h) = (img.width() as i32, img.height() as i32);
    if w < 7 || h < 7 {
        return Vec::new();
    }
    let scores = score_map(img, threshold.max(1));
    suppress(&scores, w, h, 3)
        .into_iter()
        .map(|(x, y, s)| Keypoint {
            x: x as f32,
            y: y as f32,
            octave: 0,
            response: s as f32,
            angle: 0.0,
        })
        .collect()
}

fn disc_extent() -> &'static [i32; (2 * PATCH_RADIUS + 1) as usize] {
    static UMAX: OnceLock<[i32; (2 * PATCH_RADIUS + 1) as usize]> = OnceLock::new();
    UMAX.get_or_init(|| {
        let mut u = [0i32; (2 * PATCH_RADIUS + 1) as usize];
        for dy in -PATCH_RADIUS..=PATCH_RADIUS {
            let mut dx = 0;
            while (dx + 1) * (dx + 1) + dy * dy <= PATCH_RADIUS * PATCH_RADIUS {
                dx += 1;
            }
            u[(dy + PATCH_RADIUS) as usize] = dx;
        }
        u
    })
}

/// Intensity-centroid orientation `atan2(m01, m10)` over the radius-15 disc
/// around the keypoint, whose coordinates are taken in `img`'s own frame.
pub fn orient(img: &GrayImage, kp: &Keypoint) -> Result<f32, FeatureError> {
    let (cx, cy) = (kp.x.round() as i32, kp.y.round() as i32);
    let r = PATCH_RADIUS;
    if cx < r || cy < r || cx + r >= img.width() as i32 || cy + r >= img.height() as i32 {
        return Err(FeatureError::PatchOutOfBounds);
    }
    orient_at(img, cx, cy)
}

fn orient_at(img: &GrayImage, cx: i32, cy: i32) -> Result<f32, FeatureError> {
    let umax = disc_extent();
    let (mut m10, mut m01) = (0i64, 0i64);
    for dy in -PATCH_RADIUS..=PATCH_RADIUS {
        let u = umax[(dy + PATCH_RADIUS) as usize];
        for dx in -u..=u {
            let v = img.at(cx + dx, cy + dy) as i64;
            m10 += dx as i64 * v;
            m01 += dy as i64 * v;
        }
    }
    if m10 == 0 && m01 == 0 {
        return Err(FeatureError::ZeroMoment);
    }
    let a = (m01 as f64).atan2(m10 as f64) as f32;
    Ok(if a < 0.0 { (a + TAU).min(TAU.next_down()) } else { a })
}

fn steered_patterns() -> &'static Vec<[[i8; 4]; 256]> {
    static TABLE: OnceLock<Vec<[[i8; 4]; 256]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..ANGLE_BINS)
            .map(|b| {
                let th = b as f64 * std::f64::consts::TAU / ANGLE_BINS as f64;
                let (s, c) = th.sin_cos();
                let rot = |x: i8, y: i8| {
                    let (x, y) = (x as f64, y as f64);
                    ((x * c - y * s).round() as i8, (x * s + y * c).round() as i8)
                };
                let mut out = [[0i8; 4]; 256];
                for (o, p) in out.iter_mut().zip(BRIEF_PAIRS.iter()) {
                    let (x1, y1) = rot(p[0], p[1]);
                    let (x2, y2) = rot(p[2], p[3]);
                    *o = [x1, y1, x2, y2];
                }
                out
            })
            .collect()
    })
}

fn angle_bin(angle: f32) -> usize {
    let step = std::f64::consts::TAU / ANGLE_BINS as f64;
    ((angle as f64 / step).round() as usize) % ANGLE_BINS
}

/// 7×7 box blur with replicated borders.
pub fn box_blur(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width() as i32, img.height() as i32);
    let r = BLUR_RADIUS;
    let src = img.data();
    let clampx = |x: i32| x.clamp(0, w - 1) as usize;
    let clampy = |y: i32| y.clamp(0, h - 1) as usize;
    let mut rows = vec![0u32; src.len()];
    for y in 0..h as usize {
        let row = &src[y * w as usize..(y + 1) * w as usize];
        let mut acc: u32 = (-r..=r).map(|d| row[clampx(d)] as u32).sum();
        for x in 0..w {
            rows[y * w as usize + x as usize] = acc;
            acc += row[clampx(x + r + 1)] as u32;
            acc -= row[clampx(x - r)] as u32;
        }
    }
    let n = ((2 * r + 1) * (2 * r + 1)) as u32;
    let mut out = vec![0u8; src.len()];
    for x in 0..w as usize {
        let col = |y: i32| rows[clampy(y) * w as usize + x];
        let mut acc: u32 = (-r..=r).map(col).sum();
        for y in 0..h {
            out[y as usize * w as usize + x] = ((acc + n / 2) / n) as u8;
            acc += col(y + r + 1);
            acc -= col(y - r);
        }
    }
    GrayImage::from_vec(img.width(), img.height(), out).expect("same size")
}

fn describe_at(blurred: &GrayImage, cx: i32, cy: i32, angle: f32) -> Descriptor {
    let pattern = &steered_patterns()[angle_bin(angle)];
    let mut d = Descriptor::default();
    for (i, p) in pattern.iter().enumerate() {
        let a = blurred.at(cx + p[0] as i32, cy + p[1] as i32);
        let b = blurred.at(cx + p[2] as i32, cy + p[3] as i32);
        if a < b {
            d.bits[i / 64] |= 1 << (i % 64);
        }
    }
    d
}

/// Keeps at most `n` corners spread over a `cols × rows` grid: the smallest
/// uniform per-cell cap that reaches `n` is used, and the last round of the
/// cap is filled best-response-first.
fn distribute(
    corners: Vec<(i32, i32, u32)>,
    n: usize,
    grid: (u32, u32),
    w: i32,
    h: i32,
) -> Vec<(i32, i32, u32)> {
    if corners.len() <= n {
        return corners;
    }
    let (cols, rows) = (grid.0 as i64, grid.1 as i64);
    let span_x = (w - 2 * EDGE).max(1) as i64;
    let span_y = (h - 2 * EDGE).max(1) as i64;
    let mut cells: Vec<Vec<(i32, i32, u32)>> = vec![Vec::new(); (cols * rows) as usize];
    for c in corners {
        let cx = (((c.0 - EDGE) as i64 * cols) / span_x).clamp(0, cols - 1);
        let cy = (((c.1 - EDGE) as i64 * rows) / span_y).clamp(0, rows - 1);
        cells[(cy * cols + cx) as usize].push(c);
    }
    for cell in &mut cells {
        cell.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    }
    let taken = |cap: usize| cells.iter().map(|c| c.len().min(cap)).sum::<usize>();
    let mut cap = 1;
    while taken(cap) < n {
        cap += 1;
    }
    let mut out: Vec<_> = cells
        .iter()
        .flat_map(|c| c.iter().take(cap - 1).copied())
        .collect();
    let mut last: Vec<_> = cells.iter().filter_map(|c| c.get(cap - 1).copied()).collect();
    last.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let room = n - out.len();
    out.extend(last.into_iter().take(room));
    out
}

/// Detects up to `cfg.n_features` keypoints over the pyramid and computes
/// one descriptor each. Output is ordered by octave, then response
/// descending, then x, then y.
pub fn orb_detect_and_describe(
    img: &GrayImage,
    cfg: &OrbConfig,
) -> Result<(Vec<Keypoint>, Vec<Descriptor>), FeatureError> {
    cfg.validate()?;
    let levels = build_levels(img, cfg.n_levels, cfg.scale_factor)?;
    let quotas = cfg.features_per_level();
    let per_level: Vec<Vec<(Keypoint, Descriptor)>> = levels
        .par_iter()
        .enumerate()
        .map(|(octave, level)| detect_level(level, octave, quotas[octave], cfg))
        .collect();
    let (kps, descs) = per_level.into_iter().flatten().unzip();
    Ok((kps, descs))
}

fn detect_level(
    level: &PyramidLevel,
    octave: usize,
    quota: usize,
    cfg: &OrbConfig,
) -> Vec<(Keypoint, Descriptor)> {
    let img = &level.image;
    let (w, h) = (img.width() as i32, img.height() as i32);
    if quota == 0 || w <= 2 * EDGE || h <= 2 * EDGE {
        return Vec::new();
    }
    let scores = score_map(img, cfg.fast_threshold);
    let corners = distribute(suppress(&scores, w, h, EDGE), quota, cfg.grid, w, h);
    let blurred = box_blur(img);
    let mut out: Vec<(Keypoint, Descriptor)> = corners
        .into_iter()
        .map(|(x, y, s)| {
            let angle = orient_at(img, x, y).unwrap_or(0.0);
            let (x0, y0) = level.to_level0(x as f64, y as f64);
            let kp = Keypoint {
                x: x0 as f32,
                y: y0 as f32,
                octave,
                response: s as f32,
                angle,
            };
            (kp, describe_at(&blurred, x, y, angle))
        })
        .collect();
    out.sort_by(|a, b| {
        b.0.response
            .total_cmp(&a.0.response)
            .then(a.0.x.total_cmp(&b.0.x))
            .then(a.0.y.total_cmp(&b.0.y))
    });
    out
}

/// One line per keypoint: `x y octave angle response hex`.
pub fn dump_features(kps: &[Keypoint], descs: &[Descriptor]) -> String {
    let mut s = String::new();
    for (k, d) in kps.iter().zip(descs) {
        let _ = writeln!(
            s,
            "{:.3} {:.3} {} {:.6} {} {}",
            k.x,
            k.y,
            k.octave,
            k.angle,
            k.response,
            d.to_hex()
        );
    }
    s
}
