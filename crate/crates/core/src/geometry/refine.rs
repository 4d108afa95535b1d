//! Motion-only Gauss–Newton refinement of a single camera pose.
//!
//! The pose is perturbed on the left, `R ← exp(ω) R`, `t ← t + δ`, so the
//! tangent vector is `[ω, δ]`.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Matrix6, SMatrix, Vector2, Vector3, Vector6};

use super::{skew, so3_exp, GeometryError, PoseSE3};
use crate::dataio::CameraIntrinsics;

const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineResult {
    pub pose: PoseSE3,
    pub iterations: usize,
    pub initial_rms: f64,
    pub final_rms: f64,
}

/// RMS pixel reprojection error; `None` if any point is behind the camera.
pub fn reprojection_rms(
    pose: &PoseSE3,
    pts_3d: &[Vector3<f64>],
    pts_2d: &[Vector2<f64>],
    k: &CameraIntrinsics,
) -> Option<f64> {
    if pts_3d.is_empty() {
        return Some(0.0);
    }
    let mut sum = 0.0;
    for (x, u) in pts_3d.iter().zip(pts_2d) {
        let p = k.project(&pose.transform(x))?;
        sum += (p - u).norm_squared();
    }
    Some((sum / pts_3d.len() as f64).sqrt())
}

/// Jacobian of the pixel projection with respect to the tangent `[ω, δ]`.
pub fn project_jacobian(pose: &PoseSE3, x: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x6<f64> {
    let rotated = pose.rotation() * x;
    let c = rotated + pose.translation();
    let iz = 1.0 / c.z;
    let d_proj = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * c.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * c.y * iz * iz,
    );
    let d_rot: Matrix3<f64> = -skew(&rotated);
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_proj * d_rot));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_proj);
    j
}

pub(crate) fn retract(pose: &PoseSE3, step: &Vector6<f64>) -> PoseSE3 {
    let w = Vector3::new(step[0], step[1], step[2]);
    let d = Vector3::new(step[3], step[4], step[5]);
    PoseSE3::from_matrix(&(so3_exp(&w) * pose.rotation()), pose.translation() + d)
}

/// Refines `initial` by minimizing pixel reprojection error with fixed 3D points.
///
/// Each step is halved up to 8 times until it keeps every point in front of
/// the camera and does not increase the RMS. Stops when the accepted step
/// norm falls below `tol` or after `max_iters` iterations.
pub fn refine_pose(
    initial: &PoseSE3,
    pts_3d: &[Vector3<f64>],
    pts_2d: &[Vector2<f64>],
    k: &CameraIntrinsics,
    max_iters: usize,
    tol: f64,
) -> Result<RefineResult, GeometryError> {
    if pts_3d.len() != pts_2d.len() {
        return Err(GeometryError::LengthMismatch(pts_3d.len(), pts_2d.len()));
    }
    if pts_3d.len() < 3 {
        return Err(GeometryError::TooFewPoints {
            needed: 3,
            got: pts_3d.len(),
        });
    }
    let initial_rms =
        reprojection_rms(initial, pts_3d, pts_2d, k).ok_or(GeometryError::DivergedBehindCamera)?;
    let mut pose = *initial;
    let mut rms = initial_rms;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (x, u) in pts_3d.iter().zip(pts_2d) {
            let p = k
                .project(&pose.transform(x))
                .ok_or(GeometryError::DivergedBehindCamera)?;
            let r: Vector2<f64> = p - u;
            let j = project_jacobian(&pose, x, k);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let Some(step) = solve6(&h, &(-g)) else {
            break;
        };
        let mut step = step;
        let mut accepted = None;
        let mut went_behind = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = retract(&pose, &step);
            match reprojection_rms(&cand, pts_3d, pts_2d, k) {
                None => went_behind = true,
                Some(r) if r <= rms => {
                    accepted = Some((cand, r));
                    break;
                }
                Some(_) => {}
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, r)) => {
                pose = cand;
                rms = r;
                if step.norm() < tol {
                    break;
                }
            }
            None if went_behind => return Err(GeometryError::DivergedBehindCamera),
            None => break,
        }
    }
    Ok(RefineResult {
        pose,
        iterations,
        initial_rms,
        final_rms: rms,
    })
}

fn solve6(h: &Matrix6<f64>, b: &Vector6<f64>) -> Option<Vector6<f64>> {
    if let Some(ch) = h.cholesky() {
        return Some(ch.solve(b));
    }
    let svd: nalgebra::SVD<f64, nalgebra::U6, nalgebra::U6> = SMatrix::from(*h).svd(true, true);
    svd.solve(b, 1e-12).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 510.0, 320.0, 240.0, 640, 480)
    }

    fn scene(seed: u64, n: usize) -> (PoseSE3, Vec<Vector3<f64>>, Vec<Vector2<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = PoseSE3::new(
            UnitQuaternion::from_euler_angles(0.1, 0.2, -0.15),
            Vector3::new(0.3, -0.2, 1.0),
        );
        let k = cam();
        let mut p3 = Vec::new();
        let mut p2 = Vec::new();
        while p3.len() < n {
            let c = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(3.0..8.0),
            );
            let w = pose.inverse().transform(&c);
            p2.push(k.project(&c).unwrap());
            p3.push(w);
        }
        (pose, p3, p2)
    }

    #[test]
    fn ground_truth_initial_is_a_fixed_point() {
        let (pose, p3, p2) = scene(1, 30);
        let res = refine_pose(&pose, &p3, &p2, &cam(), 20, 1e-12).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.pose.rotation_distance(&pose) < 1e-12);
        assert!((res.pose.translation() - pose.translation()).norm() < 1e-12);
    }

    #[test]
    fn recovers_from_perturbation() {
        let (pose, p3, p2) = scene(2, 30);
        let axis = Vector3::new(0.3, -0.8, 0.5).normalize();
        let dr = so3_exp(&(axis * 5f64.to_radians()));
        let init = PoseSE3::from_matrix(
            &(dr * pose.rotation()),
            pose.translation() + Vector3::new(0.1, 0.0, 0.0),
        );
        let res = refine_pose(&init, &p3, &p2, &cam(), 50, 1e-12).unwrap();
        assert!(res.final_rms <= res.initial_rms);
        assert!(res.pose.rotation_distance(&pose) < 1e-8);
        assert!((res.pose.translation() - pose.translation()).norm() < 1e-8);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = cam();
        for _ in 0..50 {
            let pose = PoseSE3::new(
                UnitQuaternion::from_euler_angles(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
            );
            let c = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(2.0..6.0),
            );
            let x = pose.inverse().transform(&c);
            let j = project_jacobian(&pose, &x, &k);
            let h = 1e-6;
            for i in 0..6 {
                let mut e = Vector6::zeros();
                e[i] = h;
                let fp = k.project(&retract(&pose, &e).transform(&x)).unwrap();
                let fm = k.project(&retract(&pose, &(-e)).transform(&x)).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let an = j.column(i);
                let rel = (fd - an).norm() / an.norm().max(1e-3);
                assert!(rel < 1e-5, "column {i}: rel {rel}");
            }
        }
    }

    #[test]
    fn needs_three_points() {
        let (pose, p3, p2) = scene(4, 2);
        assert!(matches!(
            refine_pose(&pose, &p3, &p2, &cam(), 5, 1e-9),
            Err(GeometryError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn initial_behind_camera_is_rejected() {
        let (pose, p3, p2) = scene(5, 10);
        let flipped = PoseSE3::new(pose.quaternion(), pose.translation() - Vector3::new(0.0, 0.0, 100.0));
        assert_eq!(
            refine_pose(&flipped, &p3, &p2, &cam(), 5, 1e-9),
            Err(GeometryError::DivergedBehindCamera)
        );
    }
}
