//! Low-light visual odometry front end.
//!
//! The crate wires image enhancement, ORB features, two-view geometry, a
//! small monocular tracker, and trajectory metrics into one pipeline:
//! enhance → detect → match → track → evaluate.

pub mod dataio;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod imgproc;
pub mod matching;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod vo;

pub use dataio::{CameraIntrinsics, DarkLevel, ImageSequence, Trajectory};
pub use geometry::PoseSE3;
pub use raster::{ColorImage, GrayImage};
