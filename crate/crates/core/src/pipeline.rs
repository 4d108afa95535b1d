//! Enhanced grayscale frames of a sequence, with out-of-process enhancers
//! run once per sequence into a scratch directory.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use crate::dataio::{DataError, ImageSequence};
use crate::features::FeatureError;
use crate::imgproc::{enhance, external_enhance, EnhanceError, EnhancerConfig};
use crate::raster::{ColorImage, GrayImage};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("frames of one sequence must share a directory for external enhancers")]
    ScatteredFrames,
}

pub struct FrameSource<'a> {
    seq: &'a ImageSequence,
    enhancer: EnhancerConfig,
    scratch: Option<PathBuf>,
}

impl<'a> FrameSource<'a> {
    pub fn new(seq: &'a ImageSequence, enhancer: &EnhancerConfig) -> Result<Self, PipelineError> {
        enhancer.validate()?;
        let mut src = Self {
            seq,
            enhancer: enhancer.clone(),
            scratch: None,
        };
        if let EnhancerConfig::External(cmd) = enhancer {
            if seq.is_empty() {
                return Ok(src);
            }
            let dir = seq.frames[0].path.parent().unwrap_or(Path::new("."));
            if seq.frames.iter().any(|f| f.path.parent() != Some(dir)) {
                return Err(PipelineError::ScatteredFrames);
            }
            let out = scratch_dir();
            src.scratch = Some(out.clone());
            external_enhance(dir, cmd, &out)?;
        }
        Ok(src)
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    pub fn color(&self, i: usize) -> Result<ColorImage, PipelineError> {
        match &self.scratch {
            Some(dir) => {
                let name = self.seq.frames[i].path.file_name().expect("frame file name");
                Ok(ColorImage::open(&dir.join(name)).map_err(EnhanceError::from)?)
            }
            None => Ok(enhance(&self.seq.load_frame(i)?, &self.enhancer)?),
        }
    }

    pub fn gray(&self, i: usize) -> Result<GrayImage, PipelineError> {
        Ok(self.color(i)?.to_gray())
    }
}

impl Drop for FrameSource<'_> {
    fn drop(&mut self) {
        if let Some(dir) = &self.scratch {
            let _ = std::fs::remove_dir_all(dir);
        }
    }
}

fn scratch_dir() -> PathBuf {
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!("dimslam-enhance-{}-{n}", std::process::id()))
}
