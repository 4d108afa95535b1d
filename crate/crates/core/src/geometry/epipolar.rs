use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector2, Vector3};

use super::{GeometryError, PoseSE3};
use crate::dataio::CameraIntrinsics;

/// `E = K_bᵀ F K_a`, projected onto the essential manifold (singular values
/// `(1, 1, 0)`) and scaled to unit Frobenius norm.
pub fn essential_from_fundamental(
    f: &Matrix3<f64>,
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
) -> Matrix3<f64> {
    let e = k_b.matrix().transpose() * f * k_a.matrix();
    project_essential(&e)
}

pub(crate) fn project_essential(e: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = e.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
    let e = u * s * v_t;
    e / e.norm()
}

/// Linear (DLT) triangulation result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub point: Vector3<f64>,
    /// Smallest over second-smallest singular value of the DLT system. Near 0
    /// for a well-constrained point; infinite when the solution is not unique
    /// (point on the baseline) or lies at infinity.
    pub residual: f64,
}

/// Triangulates one correspondence given in normalized image coordinates.
pub fn triangulate(
    pose_a: &PoseSE3,
    pose_b: &PoseSE3,
    pt_a: &Vector2<f64>,
    pt_b: &Vector2<f64>,
) -> Result<Triangulation, GeometryError> {
    if (pose_a.center() - pose_b.center()).norm() <= 1e-9 {
        return Err(GeometryError::ZeroBaseline);
    }
    Ok(triangulate_unchecked(
        &projection(pose_a),
        &projection(pose_b),
        pt_a,
        pt_b,
    ))
}

pub(crate) fn projection(pose: &PoseSE3) -> Matrix3x4<f64> {
    pose.to_matrix().fixed_view::<3, 4>(0, 0).into_owned()
}

pub(crate) fn triangulate_unchecked(
    pa: &Matrix3x4<f64>,
    pb: &Matrix3x4<f64>,
    xa: &Vector2<f64>,
    xb: &Vector2<f64>,
) -> Triangulation {
    let mut a = Matrix4::zeros();
    a.set_row(0, &(pa.row(2) * xa.x - pa.row(0)));
    a.set_row(1, &(pa.row(2) * xa.y - pa.row(1)));
    a.set_row(2, &(pb.row(2) * xb.x - pb.row(0)));
    a.set_row(3, &(pb.row(2) * xb.y - pb.row(1)));
    for mut r in a.row_iter_mut() {
        let n = r.norm();
        if n > 0.0 {
            r /= n;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let s = svd.singular_values;
    let (imin, i2) = smallest_two(&[s[0], s[1], s[2], s[3]]);
    let h = v_t.row(imin);
    let w = h[3];
    let point = Vector3::new(h[0], h[1], h[2]);
    let degenerate = s[i2] <= 1e-12 * s.max() || w.abs() <= 1e-12 * point.norm();
    Triangulation {
        point: if w != 0.0 { point / w } else { point * f64::INFINITY },
        residual: if degenerate {
            f64::INFINITY
        } else {
            s[imin] / s[i2]
        },
    }
}

fn smallest_two(s: &[f64; 4]) -> (usize, usize) {
    let mut idx = [0usize, 1, 2, 3];
    idx.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    (idx[0], idx[1])
}

/// Chooses the (R, t) among the four decompositions of `E` that places most
/// correspondences in front of both cameras. Returns the pose of camera b
/// with camera a at the origin, `‖t‖ = 1`.
pub fn decompose_essential(
    e: &Matrix3<f64>,
    pts_a: &[Vector2<f64>],
    pts_b: &[Vector2<f64>],
) -> Result<PoseSE3, GeometryError> {
    if pts_a.len() != pts_b.len() {
        return Err(GeometryError::LengthMismatch(pts_a.len(), pts_b.len()));
    }
    if pts_a.is_empty() {
        return Err(GeometryError::TooFewPoints { needed: 1, got: 0 });
    }
    let best = essential_candidates(e)
        .into_iter()
        .map(|pose| (count_in_front(&pose, pts_a, pts_b), pose))
        .fold(None::<(usize, PoseSE3)>, |best, cur| match best {
            Some(b) if b.0 >= cur.0 => Some(b),
            _ => Some(cur),
        })
        .unwrap();
    if 2 * best.0 <= pts_a.len() {
        return Err(GeometryError::CheiralityAmbiguous);
    }
    Ok(best.1)
}

pub(crate) fn essential_candidates(e: &Matrix3<f64>) -> [PoseSE3; 4] {
    let svd = e.svd(true, true);
    let mut u = svd.u.unwrap();
    let mut v_t = svd.v_t.unwrap();
    // nalgebra does not sort a zero singular value last reliably; reorder columns.
    let s = svd.singular_values;
    let imin = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
    if imin != 2 {
        u.swap_columns(imin, 2);
        v_t.swap_rows(imin, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).normalize();
    [
        PoseSE3::from_matrix(&r1, t),
        PoseSE3::from_matrix(&r1, -t),
        PoseSE3::from_matrix(&r2, t),
        PoseSE3::from_matrix(&r2, -t),
    ]
}

fn count_in_front(pose: &PoseSE3, pts_a: &[Vector2<f64>], pts_b: &[Vector2<f64>]) -> usize {
    let pa = projection(&PoseSE3::identity());
    let pb = projection(pose);
    pts_a
        .iter()
        .zip(pts_b)
        .filter(|(a, b)| {
            let tri = triangulate_unchecked(&pa, &pb, a, b);
            let x = tri.point;
            x.iter().all(|v| v.is_finite()) && x.z > 0.0 && pose.transform(&x).z > 0.0
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn project_n(pose: &PoseSE3, x: &Vector3<f64>) -> Vector2<f64> {
        let c = pose.transform(x);
        Vector2::new(c.x / c.z, c.y / c.z)
    }

    fn synth_pair(seed: u64, n: usize) -> (PoseSE3, Vec<Vector3<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rot = UnitQuaternion::from_euler_angles(0.05, -0.12, 0.03);
        let t = Vector3::new(0.8, 0.1, -0.2).normalize();
        let pose = PoseSE3::new(rot, t);
        let pts = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(4.0..9.0),
                )
            })
            .collect();
        (pose, pts)
    }

    fn essential_of(pose: &PoseSE3) -> Matrix3<f64> {
        let e = super::super::skew(&pose.translation()) * pose.rotation();
        e / e.norm()
    }

    fn sign_free_delta(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).norm().min((a + b).norm())
    }

    #[test]
    fn essential_recovered_from_fundamental() {
        let (pose, _) = synth_pair(1, 0);
        let e = essential_of(&pose);
        let ka = CameraIntrinsics::new(520.0, 515.0, 320.0, 240.0, 640, 480);
        let kb = CameraIntrinsics::new(480.0, 482.0, 300.0, 250.0, 640, 480);
        let f = kb.matrix().try_inverse().unwrap().transpose() * e * ka.matrix().try_inverse().unwrap();
        let f = f * 37.5;
        let rec = essential_from_fundamental(&f, &ka, &kb);
        assert!(sign_free_delta(&rec, &e) < 1e-9);
        let sv = rec.singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(f64::total_cmp);
        assert!(s[0].abs() < 1e-12 && (s[1] - s[2]).abs() < 1e-12);
    }

    #[test]
    fn identity_intrinsics_gives_projected_fundamental() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 640, 480);
        let f = Matrix3::new(0.1, 0.4, -0.3, 0.2, -0.1, 0.9, 0.5, -0.2, 0.0);
        let e = essential_from_fundamental(&f, &k, &k);
        assert!(sign_free_delta(&e, &project_essential(&f)) < 1e-12);
    }

    #[test]
    fn pure_x_translation_essential_is_skew() {
        let pose = PoseSE3::new(UnitQuaternion::identity(), Vector3::new(1.0, 0.0, 0.0));
        let e = essential_of(&pose);
        let expected = super::super::skew(&Vector3::x());
        assert!(sign_free_delta(&e, &(expected / expected.norm())) < 1e-15);
        let projected = project_essential(&e);
        assert!(sign_free_delta(&projected, &e) < 1e-12);
    }

    #[test]
    fn decomposition_recovers_pose() {
        let (pose, pts) = synth_pair(2, 20);
        let a: Vec<_> = pts.iter().map(|x| project_n(&PoseSE3::identity(), x)).collect();
        let b: Vec<_> = pts.iter().map(|x| project_n(&pose, x)).collect();
        let rec = decompose_essential(&essential_of(&pose), &a, &b).unwrap();
        assert!(rec.rotation_distance(&pose) < 1e-6);
        let ang = rec.translation().angle(&pose.translation());
        assert!(ang < 1e-6, "t angle {ang}");
        assert!((rec.translation().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decomposition_translation_unit_norm() {
        let pose = PoseSE3::new(UnitQuaternion::identity(), Vector3::new(1.0, 0.0, 0.0));
        let pts = [Vector3::new(0.3, 0.2, 5.0), Vector3::new(-1.0, 0.5, 6.0)];
        let a: Vec<_> = pts.iter().map(|x| project_n(&PoseSE3::identity(), x)).collect();
        let b: Vec<_> = pts.iter().map(|x| project_n(&pose, x)).collect();
        let rec = decompose_essential(&essential_of(&pose), &a, &b).unwrap();
        assert!((rec.translation().norm() - 1.0).abs() < 1e-12);
        assert!((rec.translation() - Vector3::x()).norm() < 1e-9);
    }

    #[test]
    fn adversarial_points_are_ambiguous() {
        // (R, t) and (R, -t) share E; split the data evenly between them.
        let (pose, pts) = synth_pair(4, 8);
        let e = essential_of(&pose);
        let mirrored = PoseSE3::new(pose.quaternion(), -pose.translation());
        let id = PoseSE3::identity();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (i, x) in pts.iter().enumerate() {
            let cam_b = if i % 2 == 0 { &pose } else { &mirrored };
            assert!(cam_b.transform(x).z > 0.0);
            a.push(project_n(&id, x));
            b.push(project_n(cam_b, x));
        }
        assert_eq!(
            decompose_essential(&e, &a, &b),
            Err(GeometryError::CheiralityAmbiguous)
        );
    }

    #[test]
    fn triangulation_is_exact_on_noiseless_views() {
        let (pose, pts) = synth_pair(3, 10);
        let id = PoseSE3::identity();
        for x in &pts {
            let tri = triangulate(&id, &pose, &project_n(&id, x), &project_n(&pose, x)).unwrap();
            assert!((tri.point - x).norm() < 1e-9);
            assert!(tri.residual < 1e-6);
        }
    }

    #[test]
    fn triangulation_rejects_zero_baseline() {
        let p = PoseSE3::new(
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_euler_angles(0.1, 0.0, 0.0)),
            Vector3::new(0.0, 0.0, 1.0),
        );
        let x = Vector2::new(0.0, 0.0);
        assert_eq!(triangulate(&p, &p, &x, &x), Err(GeometryError::ZeroBaseline));
    }

    #[test]
    fn point_on_baseline_reports_large_residual() {
        // forward motion: a point on the line through both centers is unconstrained
        let a = PoseSE3::identity();
        let b = PoseSE3::from_center(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 1.0));
        let x = Vector3::new(0.0, 0.0, 5.0);
        let tri = triangulate(&a, &b, &project_n(&a, &x), &project_n(&b, &x)).unwrap();
        assert!(tri.residual > 1e3);
    }
}
