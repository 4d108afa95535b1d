//! Sequence and trajectory ingestion, timestamp association, and synthetic
//! low-light degradation.
//!
//! On-disk layout of a sequence directory:
//!
//! ```text
//! seq/
//!   images/000000.png ...
//!   times.txt          # "<t> <filename>" per line
//!   intrinsics.yaml    # flat "key: value" (fx, fy, cx, cy, width, height, k1..k3, p1, p2)
//!   meta.txt           # optional flat "key: value" tags, e.g. "luminosity: dark"
//! ```
//!
//! Trajectories use the TUM convention `t tx ty tz qx qy qz qw`, where the
//! translation is the camera center and the quaternion the camera-to-world
//! orientation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::PoseSE3;
use crate::raster::{ColorImage, RasterError};

pub const TIMES_FILE: &str = "times.txt";
pub const INTRINSICS_FILE: &str = "intrinsics.yaml";
pub const META_FILE: &str = "meta.txt";
pub const IMAGES_DIR: &str = "images";

/// Accepted deviation of a file quaternion from unit norm before renormalization.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("timestamps not strictly increasing at line {line}: {prev} then {next}")]
    NonMonotonicTimestamps { line: usize, prev: f64, next: f64 },
    #[error("frame {path} is {got:?}, expected {expected:?}")]
    MixedResolutions {
        path: PathBuf,
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Pinhole camera with optional plumb-bob distortion `[k1, k2, p1, p2, k3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub dist: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            dist: Vec::new(),
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return bad("principal point outside the image");
        }
        if self.dist.len() > 5 {
            return bad("at most 5 distortion coefficients");
        }
        Ok(())
    }

    pub fn matrix(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    fn coeff(&self, i: usize) -> f64 {
        self.dist.get(i).copied().unwrap_or(0.0)
    }

    fn has_distortion(&self) -> bool {
        self.dist.iter().any(|&c| c != 0.0)
    }

    fn distort(&self, p: Vector2<f64>) -> Vector2<f64> {
        let (k1, k2, p1, p2, k3) = (
            self.coeff(0),
            self.coeff(1),
            self.coeff(2),
            self.coeff(3),
            self.coeff(4),
        );
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        Vector2::new(
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    /// Pixel to undistorted normalized image coordinates.
    pub fn normalize(&self, px: Vector2<f64>) -> Vector2<f64> {
        let d = Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy);
        if !self.has_distortion() {
            return d;
        }
        // fixed-point inversion of the distortion model
        let mut u = d;
        for _ in 0..20 {
            let err = self.distort(u) - d;
            u -= err;
            if err.norm() < 1e-14 {
                break;
            }
        }
        u
    }

    /// Normalized coordinates to ideal (undistorted) pixels.
    #[inline]
    pub fn to_pixel(&self, n: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * n.x + self.cx, self.fy * n.y + self.cy)
    }

    /// Removes lens distortion from a measured pixel.
    pub fn undistort_pixel(&self, px: Vector2<f64>) -> Vector2<f64> {
        if !self.has_distortion() {
            return px;
        }
        self.to_pixel(self.normalize(px))
    }

    /// Projects a camera-frame point to ideal pixels; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        (p.z > 0.0).then(|| Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Parses the flat `key: value` intrinsics format.
    pub fn parse(text: &str, file: &str) -> Result<Self, DataError> {
        let kv = parse_flat(text, file)?;
        let get = |k: &str| -> Result<f64, DataError> {
            let (line, v) = kv.get(k).ok_or_else(|| DataError::Parse {
                file: file.to_string(),
                line: 0,
                msg: format!("missing key `{k}`"),
            })?;
            v.parse::<f64>().map_err(|_| DataError::Parse {
                file: file.to_string(),
                line: *line,
                msg: format!("`{k}` is not a number: {v}"),
            })
        };
        let mut dist = Vec::new();
        if let Some((line, v)) = kv.get("dist") {
            for tok in v
                .trim_matches(|c| c == '[' || c == ']')
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
            {
                dist.push(tok.parse::<f64>().map_err(|_| DataError::Parse {
                    file: file.to_string(),
                    line: *line,
                    msg: format!("bad distortion coefficient `{tok}`"),
                })?);
            }
        } else {
            for (i, k) in ["k1", "k2", "p1", "p2", "k3"].iter().enumerate() {
                if kv.contains_key(*k) {
                    dist.resize(i + 1, 0.0);
                    dist[i] = get(k)?;
                }
            }
        }
        let k = Self {
            fx: get("fx")?,
            fy: get("fy")?,
            cx: get("cx")?,
            cy: get("cy")?,
            dist,
            width: get("width")? as u32,
            height: get("height")? as u32,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => DataError::MissingFile(path.to_path_buf()),
            _ => DataError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_flat_string(&self) -> String {
        let mut s = format!(
            "fx: {}\nfy: {}\ncx: {}\ncy: {}\nwidth: {}\nheight: {}\n",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height
        );
        if !self.dist.is_empty() {
            let d: Vec<String> = self.dist.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "dist: [{}]", d.join(", "));
        }
        s
    }
}

/// `key: value` lines, `#` comments. Values keep their line number.
pub fn parse_flat(text: &str, file: &str) -> Result<BTreeMap<String, (usize, String)>, DataError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once(':').ok_or_else(|| DataError::Parse {
            file: file.to_string(),
            line: i + 1,
            msg: format!("expected `key: value`, got `{line}`"),
        })?;
        out.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub path: PathBuf,
}

/// Ordered, timestamped frames sharing one resolution.
#[derive(Debug, Clone)]
pub struct ImageSequence {
    pub frames: Vec<Frame>,
    pub intrinsics: CameraIntrinsics,
    pub meta: BTreeMap<String, String>,
    width: u32,
    height: u32,
}

impl ImageSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Shared frame resolution; `(0, 0)` for an empty sequence.
    pub fn resolution(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn load_frame(&self, i: usize) -> Result<ColorImage, DataError> {
        let img = ColorImage::open(&self.frames[i].path)?;
        if img.dimensions() != (self.width, self.height) {
            return Err(DataError::MixedResolutions {
                path: self.frames[i].path.clone(),
                expected: (self.width, self.height),
                got: img.dimensions(),
            });
        }
        Ok(img)
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    /// Luminosity label from `meta.txt`, when present.
    pub fn luminosity(&self) -> Option<&str> {
        self.meta.get("luminosity").map(String::as_str)
    }
}

/// Parses a `<timestamp> <filename>` listing.
pub fn parse_times(text: &str, file: &str) -> Result<Vec<(f64, String)>, DataError> {
    let mut out: Vec<(f64, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(t), Some(name), None) = (it.next(), it.next(), it.next()) else {
            return Err(DataError::Parse {
                file: file.to_string(),
                line: i + 1,
                msg: "expected `<timestamp> <filename>`".into(),
            });
        };
        let t: f64 = t.parse().map_err(|_| DataError::Parse {
            file: file.to_string(),
            line: i + 1,
            msg: format!("bad timestamp `{t}`"),
        })?;
        if let Some(&(prev, _)) = out.last() {
            if t <= prev {
                return Err(DataError::NonMonotonicTimestamps {
                    line: i + 1,
                    prev,
                    next: t,
                });
            }
        }
        out.push((t, name.to_string()));
    }
    Ok(out)
}

/// Loads a sequence whose image files live in `dir` and are listed in `timestamps_file`.
pub fn load_sequence(
    dir: &Path,
    timestamps_file: &Path,
    intrinsics: CameraIntrinsics,
) -> Result<ImageSequence, DataError> {
    intrinsics.validate()?;
    if !timestamps_file.is_file() {
        return Err(DataError::MissingFile(timestamps_file.to_path_buf()));
    }
    let text = fs::read_to_string(timestamps_file).map_err(io_err(timestamps_file))?;
    let entries = parse_times(&text, &timestamps_file.display().to_string())?;
    let mut frames = Vec::with_capacity(entries.len());
    let mut res: Option<(u32, u32)> = None;
    for (timestamp, name) in entries {
        let path = dir.join(&name);
        if !path.is_file() {
            return Err(DataError::MissingFile(path));
        }
        let dims = ColorImage::probe(&path)?;
        match res {
            None => res = Some(dims),
            Some(expected) if expected != dims => {
                return Err(DataError::MixedResolutions {
                    path,
                    expected,
                    got: dims,
                })
            }
            _ => {}
        }
        frames.push(Frame { timestamp, path });
    }
    let (width, height) = res.unwrap_or((0, 0));
    Ok(ImageSequence {
        frames,
        intrinsics,
        meta: BTreeMap::new(),
        width,
        height,
    })
}

/// Opens the standard directory layout (`images/`, `times.txt`, `intrinsics.yaml`, `meta.txt`).
pub fn open_sequence_dir(root: &Path) -> Result<ImageSequence, DataError> {
    let intrinsics = CameraIntrinsics::load(&root.join(INTRINSICS_FILE))?;
    let mut seq = load_sequence(&root.join(IMAGES_DIR), &root.join(TIMES_FILE), intrinsics)?;
    let meta_path = root.join(META_FILE);
    if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        seq.meta = parse_flat(&text, &meta_path.display().to_string())?
            .into_iter()
            .map(|(k, (_, v))| (k, v))
            .collect();
    }
    Ok(seq)
}

/// Writes the directory layout for `frames` (images are written by the caller
/// into `root/images`). Returns the images directory.
pub fn write_sequence_header(
    root: &Path,
    frames: &[(f64, String)],
    intrinsics: &CameraIntrinsics,
    meta: &BTreeMap<String, String>,
) -> Result<PathBuf, DataError> {
    let images = root.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    let mut times = String::new();
    for (t, name) in frames {
        let _ = writeln!(times, "{t} {name}");
    }
    let p = root.join(TIMES_FILE);
    fs::write(&p, times).map_err(io_err(&p))?;
    let p = root.join(INTRINSICS_FILE);
    fs::write(&p, intrinsics.to_flat_string()).map_err(io_err(&p))?;
    if !meta.is_empty() {
        let mut s = String::new();
        for (k, v) in meta {
            let _ = writeln!(s, "{k}: {v}");
        }
        let p = root.join(META_FILE);
        fs::write(&p, s).map_err(io_err(&p))?;
    }
    Ok(images)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub timestamp: f64,
    pub pose: PoseSE3,
}

/// Timestamped world-to-camera poses, strictly increasing in time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<TrajectorySample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, timestamp: f64, pose: PoseSE3) {
        debug_assert!(self.samples.last().is_none_or(|s| s.timestamp < timestamp));
        self.samples.push(TrajectorySample { timestamp, pose });
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.timestamp).collect()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }

    /// Parses TUM text. Quaternions off unit norm by more than
    /// [`QUATERNION_NORM_TOLERANCE`] are rejected, smaller deviations are renormalized.
    pub fn parse_tum(text: &str, file: &str) -> Result<Self, DataError> {
        let perr = |line: usize, msg: String| DataError::Parse {
            file: file.to_string(),
            line,
            msg,
        };
        let mut traj = Trajectory::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| perr(i + 1, format!("bad number: {e}")))?;
            if vals.len() != 8 {
                return Err(perr(i + 1, format!("expected 8 fields, got {}", vals.len())));
            }
            let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
            let norm = q.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
                return Err(perr(i + 1, format!("quaternion norm {norm} is not unit")));
            }
            let t = vals[0];
            if let Some(prev) = traj.samples.last() {
                if t <= prev.timestamp {
                    return Err(DataError::NonMonotonicTimestamps {
                        line: i + 1,
                        prev: prev.timestamp,
                        next: t,
                    });
                }
            }
            let pose = PoseSE3::from_center(
                UnitQuaternion::from_quaternion(q),
                Vector3::new(vals[1], vals[2], vals[3]),
            );
            traj.samples.push(TrajectorySample { timestamp: t, pose });
        }
        Ok(traj)
    }

    pub fn to_tum_string(&self) -> String {
        let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for smp in &self.samples {
            let c = smp.pose.center();
            let q = smp.pose.orientation();
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {}",
                smp.timestamp, c.x, c.y, c.z, q.i, q.j, q.k, q.w
            );
        }
        s
    }
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Trajectory::parse_tum(&text, &path.display().to_string())
}

pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<(), DataError> {
    fs::write(path, traj.to_tum_string()).map_err(io_err(path))
}

/// Pairs each timestamp of `a` with at most one timestamp of `b` within `max_dt`.
///
/// Candidate pairs are accepted in order of increasing time gap (ties go to
/// the earlier timestamps), each sample used at most once. The result is
/// sorted by time.
pub fn associate_times(a: &[f64], b: &[f64], max_dt: f64) -> Vec<(usize, usize)> {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    let mut lo = 0usize;
    for (i, &ta) in a.iter().enumerate() {
        while lo < b.len() && b[lo] < ta - max_dt {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() && b[j] <= ta + max_dt {
            let gap = (b[j] - ta).abs();
            if gap <= max_dt {
                cands.push((gap, i, j));
            }
            j += 1;
        }
    }
    cands.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then((a[x.1] + b[x.2]).total_cmp(&(a[y.1] + b[y.2])))
            .then(x.1.cmp(&y.1))
    });
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cands {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

pub fn associate(a: &Trajectory, b: &Trajectory, max_dt: f64) -> Vec<(usize, usize)> {
    associate_times(&a.timestamps(), &b.timestamps(), max_dt)
}

/// Synthetic stand-ins for the three recorded luminosity conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DarkLevel {
    Shaded,
    SemiDark,
    Dark,
}

impl DarkLevel {
    pub const ALL: [DarkLevel; 3] = [DarkLevel::Shaded, DarkLevel::SemiDark, DarkLevel::Dark];

    /// Attenuation exponent applied as `255 * (p / 255)^gamma`.
    pub fn gamma(self) -> f64 {
        match self {
            DarkLevel::Shaded => 1.5,
            DarkLevel::SemiDark => 2.5,
            DarkLevel::Dark => 4.0,
        }
    }

    /// Standard deviation of the additive sensor noise, in gray levels.
    pub fn noise_sigma(self) -> f64 {
        match self {
            DarkLevel::Shaded => 2.0,
            DarkLevel::SemiDark => 4.0,
            DarkLevel::Dark => 6.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DarkLevel::Shaded => "shaded",
            DarkLevel::SemiDark => "semi-dark",
            DarkLevel::Dark => "dark",
        }
    }
}

impl std::str::FromStr for DarkLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "shaded" => Ok(DarkLevel::Shaded),
            "semi-dark" | "semidark" => Ok(DarkLevel::SemiDark),
            "dark" => Ok(DarkLevel::Dark),
            other => Err(format!("unknown dark level `{other}` (shaded, semi-dark, dark)")),
        }
    }
}

/// Darkens with a gamma attenuation and additive Gaussian noise, bit-exact for a given seed.
pub fn synth_darken(img: &ColorImage, level: DarkLevel, seed: u64) -> ColorImage {
    let gamma = level.gamma();
    let lut: Vec<f64> = (0..256)
        .map(|p| 255.0 * (p as f64 / 255.0).powf(gamma))
        .collect();
    let noise = Normal::new(0.0, level.noise_sigma()).expect("positive sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        let n: f64 = noise.sample(&mut rng);
        *v = (lut[*v as usize] + n).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Writes `seq` in the standard layout under `root`, passing every frame
/// through `map`. Frames keep their file names.
pub fn write_mapped_sequence<E, F>(
    seq: &ImageSequence,
    root: &Path,
    meta: &BTreeMap<String, String>,
    map: F,
) -> Result<(), E>
where
    E: From<DataError> + Send,
    F: Fn(usize, ColorImage) -> Result<ColorImage, E> + Sync,
{
    let names: Vec<String> = seq
        .frames
        .iter()
        .map(|f| f.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let listed: Vec<(f64, String)> = seq
        .frames
        .iter()
        .zip(&names)
        .map(|(f, n)| (f.timestamp, n.clone()))
        .collect();
    let images = write_sequence_header(root, &listed, &seq.intrinsics, meta)?;
    (0..seq.len()).into_par_iter().try_for_each(|i| {
        let img = map(i, seq.load_frame(i)?)?;
        let path = images.join(&names[i]);
        img.save(&path).map_err(|e| E::from(DataError::from(e)))
    })
}

/// Darkens every frame with a per-frame seed and records the level in the metadata.
pub fn darken_sequence(seq: &ImageSequence, root: &Path, level: DarkLevel, seed: u64) -> Result<(), DataError> {
    let mut meta = seq.meta.clone();
    meta.insert("luminosity".into(), level.label().into());
    meta.insert("darken_seed".into(), seed.to_string());
    write_mapped_sequence(seq, root, &meta, |i, img| {
        Ok::<_, DataError>(synth_darken(&img, level, frame_seed(seed, i)))
    })
}

/// Per-frame seed derived from a sequence seed.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
