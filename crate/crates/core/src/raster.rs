//! Dense 8-bit rasters shared by every stage of the pipeline.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageDecoder, ImageReader};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image buffer length {len} does not match {width}x{height}x{channels}")]
    BadLength {
        width: u32,
        height: u32,
        channels: u8,
        len: usize,
    },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(u8),
    #[error("{path}: unsupported pixel format {format:?} (only 8-bit gray or RGB is accepted)")]
    UnsupportedFormat { path: String, format: ColorType },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// ITU-R BT.601 luma, rounded to the nearest gray level.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round() as u8
}

/// Single-channel 8-bit image in row-major order.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0)
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        if data.len() != width as usize * height as usize {
            return Err(RasterError::BadLength {
                width,
                height,
                channels: 1,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    /// Unchecked-signed access, caller guarantees bounds.
    #[inline]
    pub(crate) fn at(&self, x: i32, y: i32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn into_color(self) -> ColorImage {
        ColorImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data,
        }
    }
}

/// Interleaved 8-bit image with one (gray) or three (RGB) channels.
///
/// Enhancers operate on this type; single-channel inputs stay single-channel
/// so that gray sequences round-trip through the tools unchanged.
#[derive(Clone, PartialEq, Eq)]
pub struct ColorImage {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for ColorImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ColorImage({}x{}x{})",
            self.width, self.height, self.channels
        )
    }
}

impl ColorImage {
    pub fn from_vec(
        width: u32,
        height: u32,
        channels: u8,
        data: Vec<u8>,
    ) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::BadChannels(channels));
        }
        if data.len() != width as usize * height as usize * channels as usize {
            return Err(RasterError::BadLength {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled_rgb(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn filled_gray(width: u32, height: u32, v: u8) -> Self {
        GrayImage::filled(width, height, v).into_color()
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> u8 {
        self.channels
    }

    #[inline]
    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Returns a copy with every sample passed through `f`.
    pub fn map_samples(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Per-pixel luma (BT.601 for RGB, identity for gray).
    pub fn luma_plane(&self) -> Vec<u8> {
        match self.channels {
            1 => self.data.clone(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| luma(p[0], p[1], p[2]))
                .collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.luma_plane(),
        }
    }

    /// Replaces luma with `new_luma` while keeping channel ratios.
    pub(crate) fn with_luma(&self, old_luma: &[u8], new_luma: &[u8]) -> Self {
        if self.channels == 1 {
            return Self {
                data: new_luma.to_vec(),
                ..self.clone()
            };
        }
        let mut data = Vec::with_capacity(self.data.len());
        for ((px, &y0), &y1) in self.data.chunks_exact(3).zip(old_luma).zip(new_luma) {
            if y0 == 0 {
                data.extend_from_slice(&[y1, y1, y1]);
            } else {
                let k = y1 as f64 / y0 as f64;
                for &c in px {
                    data.push((c as f64 * k).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Self {
            data,
            ..self.clone()
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Decodes an 8-bit gray or RGB file. Alpha is dropped; 16-bit and float
    /// formats are rejected instead of being truncated.
    pub fn open(path: &Path) -> Result<Self, RasterError> {
        let p = path.display().to_string();
        let reader = ImageReader::open(path)
            .map_err(|source| RasterError::Io {
                path: p.clone(),
                source,
            })?
            .with_guessed_format()
            .map_err(|source| RasterError::Io {
                path: p.clone(),
                source,
            })?;
        let decoder = reader.into_decoder().map_err(|source| RasterError::Decode {
            path: p.clone(),
            source,
        })?;
        let format = decoder.color_type();
        let img = DynamicImage::from_decoder(decoder).map_err(|source| RasterError::Decode {
            path: p.clone(),
            source,
        })?;
        let (width, height) = (img.width(), img.height());
        match format {
            ColorType::L8 | ColorType::La8 => Ok(Self {
                width,
                height,
                channels: 1,
                data: img.into_luma8().into_raw(),
            }),
            ColorType::Rgb8 | ColorType::Rgba8 => Ok(Self {
                width,
                height,
                channels: 3,
                data: img.into_rgb8().into_raw(),
            }),
            other => Err(RasterError::UnsupportedFormat {
                path: p,
                format: other,
            }),
        }
    }

    /// Reads only the header: `(width, height)`, rejecting non-8-bit formats.
    pub fn probe(path: &Path) -> Result<(u32, u32), RasterError> {
        let p = path.display().to_string();
        let decoder = ImageReader::open(path)
            .and_then(|r| r.with_guessed_format())
            .map_err(|source| RasterError::Io {
                path: p.clone(),
                source,
            })?
            .into_decoder()
            .map_err(|source| RasterError::Decode {
                path: p.clone(),
                source,
            })?;
        match decoder.color_type() {
            ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => {
                Ok(decoder.dimensions())
            }
            other => Err(RasterError::UnsupportedFormat {
                path: p,
                format: other,
            }),
        }
    }

    /// Encodes by file extension (`.png`, `.pgm`, `.ppm`).
    pub fn save(&self, path: &Path) -> Result<(), RasterError> {
        let color = if self.channels == 1 {
            ColorType::L8
        } else {
            ColorType::Rgb8
        };
        image::save_buffer(path, &self.data, self.width, self.height, color).map_err(|source| {
            RasterError::Decode {
                path: path.display().to_string(),
                source,
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_weights_sum_to_one_on_gray() {
        for v in 0..=255u8 {
            assert_eq!(luma(v, v, v), v);
        }
    }

    #[test]
    fn rejects_bad_length() {
        assert!(GrayImage::from_vec(2, 2, vec![0; 3]).is_err());
        assert!(ColorImage::from_vec(2, 2, 3, vec![0; 4]).is_err());
        assert!(ColorImage::from_vec(2, 2, 2, vec![0; 8]).is_err());
    }

    #[test]
    fn save_and_open_preserve_channels() {
        let dir = tempfile::tempdir().unwrap();
        let gray = GrayImage::from_fn(7, 5, |x, y| (x * 30 + y) as u8).into_color();
        let p = dir.path().join("g.png");
        gray.save(&p).unwrap();
        assert_eq!(ColorImage::open(&p).unwrap(), gray);
        let pgm = dir.path().join("g.pgm");
        gray.save(&pgm).unwrap();
        assert_eq!(ColorImage::open(&pgm).unwrap(), gray);

        let rgb = ColorImage::filled_rgb(4, 3, [10, 20, 30]);
        let p = dir.path().join("c.png");
        rgb.save(&p).unwrap();
        assert_eq!(ColorImage::open(&p).unwrap(), rgb);
        assert_eq!(ColorImage::probe(&p).unwrap(), (4, 3));
    }

    #[test]
    fn sixteen_bit_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let buf: Vec<u8> = vec![0; 4 * 4 * 2];
        image::save_buffer(&p, &buf, 4, 4, ColorType::L16).unwrap();
        assert!(matches!(
            ColorImage::open(&p),
            Err(RasterError::UnsupportedFormat { .. })
        ));
        assert!(ColorImage::probe(&p).is_err());
    }
}
