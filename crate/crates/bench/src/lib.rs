//! Benchmark fixtures shared by the criterion targets.

use dimslam::geometry::PoseSE3;
use dimslam::synth::{default_intrinsics, orbit_poses, room_scene};
use dimslam::{CameraIntrinsics, GrayImage};

/// Two rendered views of the synthetic room, 20 degrees apart on the orbit.
pub fn view_pair() -> (GrayImage, GrayImage, CameraIntrinsics, [PoseSE3; 2]) {
    let k = default_intrinsics();
    let poses = orbit_poses(36, 1.0);
    let scene = room_scene(1.0);
    let a = scene.render(&poses[0], &k);
    let b = scene.render(&poses[2], &k);
    (a, b, k, [poses[0], poses[2]])
}
