//! Low-light enhancers: gamma correction, global and contrast-limited
//! adaptive histogram equalization, an illumination-attention blend, and a
//! directory-based protocol for out-of-process enhancers.
//!
//! Equalizers work on BT.601 luma and rescale the color channels by the luma
//! ratio, so hue is kept.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;

use thiserror::Error;

use crate::raster::{ColorImage, RasterError};

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("gamma must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("clip limit must be >= 1, got {0}")]
    InvalidClipLimit(f64),
    #[error("tiling {tiles:?} does not fit a {width}x{height} image")]
    InvalidTiling {
        tiles: (u32, u32),
        width: u32,
        height: u32,
    },
    #[error("attention base must be gamma, histeq or clahe")]
    InvalidAttentionBase,
    #[error("external enhancers run per directory, not per image")]
    ExternalPerImage,
    #[error("plugin `{command}` failed ({status}): {stderr}")]
    PluginFailed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("plugin output incomplete: {0}")]
    PluginIncomplete(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Which enhancer to run, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum EnhancerConfig {
    None,
    Gamma(f64),
    HistEq,
    Clahe { clip_limit: f64, tiles: (u32, u32) },
    Attention(Box<EnhancerConfig>),
    External(String),
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        match self {
            EnhancerConfig::Gamma(g) if !(*g > 0.0 && g.is_finite()) => {
                Err(EnhanceError::InvalidGamma(*g))
            }
            EnhancerConfig::Clahe { clip_limit, tiles } => {
                if clip_limit.is_nan() || *clip_limit < 1.0 {
                    return Err(EnhanceError::InvalidClipLimit(*clip_limit));
                }
                if tiles.0 == 0 || tiles.1 == 0 {
                    return Err(EnhanceError::InvalidTiling {
                        tiles: *tiles,
                        width: 0,
                        height: 0,
                    });
                }
                Ok(())
            }
            EnhancerConfig::Attention(base) => match base.as_ref() {
                EnhancerConfig::Attention(_)
                | EnhancerConfig::External(_)
                | EnhancerConfig::None => Err(EnhanceError::InvalidAttentionBase),
                b => b.validate(),
            },
            _ => Ok(()),
        }
    }

    /// Short column label used in benchmark tables.
    pub fn label(&self) -> String {
        match self {
            EnhancerConfig::None => "original".into(),
            EnhancerConfig::Gamma(g) => format!("gamma{g}"),
            EnhancerConfig::HistEq => "histeq".into(),
            EnhancerConfig::Clahe { clip_limit, tiles } => {
                format!("clahe{clip_limit}x{}x{}", tiles.0, tiles.1)
            }
            EnhancerConfig::Attention(b) => format!("attention-{}", b.label()),
            EnhancerConfig::External(_) => "external".into(),
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, EnhancerConfig::External(_))
    }
}

impl fmt::Display for EnhancerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parses `none`, `gamma:2`, `histeq`, `clahe:2:8x8`, `attention:gamma:2`, `external:<cmd>`.
impl std::str::FromStr for EnhancerConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        let cfg = match (head.to_ascii_lowercase().as_str(), rest) {
            ("none" | "original", None) => EnhancerConfig::None,
            ("histeq" | "hist", None) => EnhancerConfig::HistEq,
            ("gamma", Some(g)) => EnhancerConfig::Gamma(
                g.parse().map_err(|_| format!("bad gamma `{g}`"))?,
            ),
            ("clahe", r) => {
                let r = r.unwrap_or("2:8x8");
                let (clip, tiles) = r.split_once(':').unwrap_or((r, "8x8"));
                let (tx, ty) = tiles
                    .split_once('x')
                    .ok_or_else(|| format!("bad tiling `{tiles}`"))?;
                EnhancerConfig::Clahe {
                    clip_limit: clip.parse().map_err(|_| format!("bad clip limit `{clip}`"))?,
                    tiles: (
                        tx.parse().map_err(|_| format!("bad tiling `{tiles}`"))?,
                        ty.parse().map_err(|_| format!("bad tiling `{tiles}`"))?,
                    ),
                }
            }
            ("attention", Some(base)) => EnhancerConfig::Attention(Box::new(base.parse()?)),
            ("external", Some(cmd)) if !cmd.trim().is_empty() => {
                EnhancerConfig::External(cmd.to_string())
            }
            _ => return Err(format!("unknown enhancer `{s}`")),
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

/// Applies an in-process enhancer to one image.
pub fn enhance(img: &ColorImage, cfg: &EnhancerConfig) -> Result<ColorImage, EnhanceError> {
    match cfg {
        EnhancerConfig::None => Ok(img.clone()),
        EnhancerConfig::Gamma(g) => gamma_correct(img, *g),
        EnhancerConfig::HistEq => Ok(hist_equalize(img)),
        EnhancerConfig::Clahe { clip_limit, tiles } => clahe(img, *clip_limit, *tiles),
        EnhancerConfig::Attention(base) => attention_enhance(img, base),
        EnhancerConfig::External(_) => Err(EnhanceError::ExternalPerImage),
    }
}

/// Brightening gamma LUT: `round(255 * (p / 255)^(1 / gamma))`.
pub fn gamma_lut(gamma: f64) -> Result<[u8; 256], EnhanceError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(EnhanceError::InvalidGamma(gamma));
    }
    let mut lut = [0u8; 256];
    for (p, v) in lut.iter_mut().enumerate() {
        *v = (255.0 * (p as f64 / 255.0).powf(1.0 / gamma))
            .round()
            .clamp(0.0, 255.0) as u8;
    }
    Ok(lut)
}

pub fn gamma_correct(img: &ColorImage, gamma: f64) -> Result<ColorImage, EnhanceError> {
    let lut = gamma_lut(gamma)?;
    Ok(img.map_samples(|v| lut[v as usize]))
}

/// `p → round(255 (cdf(p) − cdf_min) / (N − cdf_min))`, identity for a constant input.
pub fn equalization_lut(hist: &[u64; 256]) -> [u8; 256] {
    let total: u64 = hist.iter().sum();
    let mut lut = [0u8; 256];
    let cdf_min = hist.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if total == cdf_min {
        for (p, v) in lut.iter_mut().enumerate() {
            *v = p as u8;
        }
        return lut;
    }
    let denom = (total - cdf_min) as f64;
    let mut cdf = 0u64;
    for (p, v) in lut.iter_mut().enumerate() {
        cdf += hist[p];
        *v = (255.0 * (cdf.saturating_sub(cdf_min)) as f64 / denom).round() as u8;
    }
    lut
}

pub fn histogram(values: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in values {
        h[v as usize] += 1;
    }
    h
}

pub fn hist_equalize(img: &ColorImage) -> ColorImage {
    let luma = img.luma_plane();
    let lut = equalization_lut(&histogram(&luma));
    let new: Vec<u8> = luma.iter().map(|&v| lut[v as usize]).collect();
    img.with_luma(&luma, &new)
}

/// Contrast-limited adaptive histogram equalization on luma.
///
/// The image is split into `tiles.0 × tiles.1` tiles (the last row/column of
/// tiles is edge-extended when the size does not divide evenly). Each tile
/// histogram is clipped at `clip_limit × tile_area / 256`, the excess is
/// spread uniformly, and pixels interpolate bilinearly between the mappings
/// of the four nearest tile centers.
pub fn clahe(img: &ColorImage, clip_limit: f64, tiles: (u32, u32)) -> Result<ColorImage, EnhanceError> {
    if clip_limit.is_nan() || clip_limit < 1.0 {
        return Err(EnhanceError::InvalidClipLimit(clip_limit));
    }
    let (w, h) = img.dimensions();
    let (tx, ty) = tiles;
    if tx == 0 || ty == 0 || tx > w || ty > h {
        return Err(EnhanceError::InvalidTiling {
            tiles,
            width: w,
            height: h,
        });
    }
    let luma = img.luma_plane();
    let tw = w.div_ceil(tx) as usize;
    let th = h.div_ceil(ty) as usize;
    let (w, h) = (w as usize, h as usize);
    let area = (tw * th) as u64;
    let clip = ((clip_limit * area as f64 / 256.0).floor() as u64).max(1);

    let mut luts = Vec::with_capacity((tx * ty) as usize);
    for j in 0..ty as usize {
        for i in 0..tx as usize {
            let mut hist = [0u64; 256];
            for y in j * th..(j + 1) * th {
                let yy = y.min(h - 1);
                for x in i * tw..(i + 1) * tw {
                    hist[luma[yy * w + x.min(w - 1)] as usize] += 1;
                }
            }
            // a single-level tile has no contrast to redistribute
            if hist.iter().filter(|&&c| c > 0).count() > 1 {
                clip_histogram(&mut hist, clip);
            }
            luts.push(equalization_lut(&hist));
        }
    }

    let lut_at = |i: usize, j: usize| &luts[j * tx as usize + i];
    let axis = |pos: usize, size: usize, n: u32| -> (usize, usize, f64) {
        let f = (pos as f64 + 0.5) / size as f64 - 0.5;
        let max = (n - 1) as f64;
        let f = f.clamp(0.0, max);
        let i0 = f.floor() as usize;
        let i1 = (i0 + 1).min(n as usize - 1);
        (i0, i1, f - i0 as f64)
    };
    let mut out = vec![0u8; luma.len()];
    for y in 0..h {
        let (j0, j1, fy) = axis(y, th, ty);
        for x in 0..w {
            let (i0, i1, fx) = axis(x, tw, tx);
            let v = luma[y * w + x] as usize;
            let top = lut_at(i0, j0)[v] as f64 * (1.0 - fx) + lut_at(i1, j0)[v] as f64 * fx;
            let bot = lut_at(i0, j1)[v] as f64 * (1.0 - fx) + lut_at(i1, j1)[v] as f64 * fx;
            out[y * w + x] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(img.with_luma(&luma, &out))
}

fn clip_histogram(hist: &mut [u64; 256], clip: u64) {
    let mut excess = 0u64;
    for c in hist.iter_mut() {
        if *c > clip {
            excess += *c - clip;
            *c = clip;
        }
    }
    if excess == 0 {
        return;
    }
    let each = excess / 256;
    let rem = (excess % 256) as usize;
    for (i, c) in hist.iter_mut().enumerate() {
        *c += each;
        // spread the remainder evenly over the range
        if rem > 0 && i % (256 / rem).max(1) == 0 && i / (256 / rem).max(1) < rem {
            *c += 1;
        }
    }
}

/// Blends the base enhancer into the input weighted by the inverse-luma
/// attention map: `out = img + A ⊙ (base(img) − img)`, `A = 1 − luma / 255`.
pub fn attention_enhance(img: &ColorImage, base: &EnhancerConfig) -> Result<ColorImage, EnhanceError> {
    match base {
        EnhancerConfig::Attention(_) | EnhancerConfig::External(_) | EnhancerConfig::None => {
            return Err(EnhanceError::InvalidAttentionBase)
        }
        _ => {}
    }
    let enhanced = enhance(img, base)?;
    let luma = img.luma_plane();
    let ch = img.channels() as usize;
    let mut out = img.clone();
    for (i, (o, &b)) in out.data_mut().iter_mut().zip(enhanced.data()).enumerate() {
        let a = 1.0 - luma[i / ch] as f64 / 255.0;
        let v = *o as f64 + a * (b as f64 - *o as f64);
        *o = v.round().clamp(0.0, 255.0) as u8;
    }
    Ok(out)
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// Image files of a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, EnhanceError> {
    let rd = std::fs::read_dir(dir).map_err(|source| EnhanceError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| EnhanceError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let p = entry.path();
        let ok = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if ok && p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Runs `command <in_dir> <out_dir>` and checks that every input image has a
/// same-named, same-resolution counterpart in `out_dir`.
///
/// `command` is split on whitespace; the first token is the program.
pub fn external_enhance(in_dir: &Path, command: &str, out_dir: &Path) -> Result<PathBuf, EnhanceError> {
    let mut parts = command.split_whitespace();
    let program = parts.next().ok_or_else(|| EnhanceError::PluginFailed {
        command: command.to_string(),
        status: "empty command".into(),
        stderr: String::new(),
    })?;
    std::fs::create_dir_all(out_dir).map_err(|source| EnhanceError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let inputs = list_images(in_dir)?;
    let expected: BTreeMap<String, (u32, u32)> = inputs
        .iter()
        .map(|p| {
            Ok((
                p.file_name().unwrap().to_string_lossy().into_owned(),
                ColorImage::probe(p)?,
            ))
        })
        .collect::<Result<_, EnhanceError>>()?;

    log::info!("running plugin `{command}` on {}", in_dir.display());
    let output = Command::new(program)
        .args(parts)
        .arg(in_dir)
        .arg(out_dir)
        .output()
        .map_err(|e| EnhanceError::PluginFailed {
            command: command.to_string(),
            status: "spawn failed".into(),
            stderr: e.to_string(),
        })?;
    let stderr = String::from_utf8_lossy(&output.stderr).into_owned();
    if !stderr.is_empty() {
        log::info!("plugin stderr: {}", stderr.trim_end());
    }
    if !output.status.success() {
        return Err(EnhanceError::PluginFailed {
            command: command.to_string(),
            status: output.status.to_string(),
            stderr,
        });
    }
    for (name, dims) in &expected {
        let p = out_dir.join(name);
        if !p.is_file() {
            return Err(EnhanceError::PluginIncomplete(format!("missing output {name}")));
        }
        let got = ColorImage::probe(&p)
            .map_err(|e| EnhanceError::PluginIncomplete(format!("{name}: {e}")))?;
        if got != *dims {
            return Err(EnhanceError::PluginIncomplete(format!(
                "{name} is {}x{}, expected {}x{}",
                got.0, got.1, dims.0, dims.1
            )));
        }
    }
    Ok(out_dir.to_path_buf())
}
