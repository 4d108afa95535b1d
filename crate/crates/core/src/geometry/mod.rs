//! Calibrated two-view geometry and single-pose estimation.

mod epipolar;
mod pnp;
mod pose;
mod refine;

pub use epipolar::{
    decompose_essential, essential_from_fundamental, triangulate, Triangulation,
};
pub use pnp::{pnp, PnpResult};
pub use pose::{rotation_angle, skew, so3_exp, PoseSE3};
pub use refine::{project_jacobian, refine_pose, reprojection_rms, RefineResult};

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("no decomposition places more than half of the points in front of both cameras")]
    CheiralityAmbiguous,
    #[error("camera centers coincide")]
    ZeroBaseline,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("a point moved behind the camera during refinement")]
    DivergedBehindCamera,
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// A triangulated map point and the keypoints that observed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub position: Vector3<f64>,
    /// `(frame_id, keypoint index)`
    pub observations: Vec<(usize, usize)>,
}
