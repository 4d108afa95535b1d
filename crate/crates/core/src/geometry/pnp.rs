//! Perspective-n-point: linear initialization (general DLT or planar
//! homography) followed by Gauss–Newton refinement.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Vector2, Vector3};

use super::refine::refine_pose;
use super::{GeometryError, PoseSE3};
use crate::dataio::CameraIntrinsics;

const REFINE_ITERS: usize = 50;
const REFINE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpResult {
    pub pose: PoseSE3,
    /// RMS pixel reprojection error after refinement.
    pub rms: f64,
    /// Whether the planar (homography) initializer was used.
    pub planar: bool,
}

/// Estimates the world-to-camera pose from 3D world points and their pixel
/// observations (already undistorted).
///
/// Planar point sets (plane-fit residual below `1e-6` of the cloud extent)
/// need 4 points; general sets need 6.
pub fn pnp(
    pts_3d: &[Vector3<f64>],
    pts_2d: &[Vector2<f64>],
    k: &CameraIntrinsics,
) -> Result<PnpResult, GeometryError> {
    if pts_3d.len() != pts_2d.len() {
        return Err(GeometryError::LengthMismatch(pts_3d.len(), pts_2d.len()));
    }
    let n = pts_3d.len();
    if n < 4 {
        return Err(GeometryError::TooFewPoints { needed: 4, got: n });
    }
    let shape = analyze_cloud(pts_3d);
    if shape.singular[1] <= 1e-9 * shape.singular[0] {
        return Err(GeometryError::DegenerateConfiguration("world points are collinear"));
    }
    let extent = shape.singular[0].max(1e-300);
    let planar = shape.singular[2] < 1e-6 * extent;
    let normalized: Vec<Vector2<f64>> = pts_2d.iter().map(|p| k.normalize(*p)).collect();
    let init = if planar {
        planar_init(pts_3d, &normalized, &shape)?
    } else {
        if n < 6 {
            return Err(GeometryError::TooFewPoints { needed: 6, got: n });
        }
        dlt_init(pts_3d, &normalized)?
    };
    let refined = refine_pose(&init, pts_3d, pts_2d, k, REFINE_ITERS, REFINE_TOL)?;
    Ok(PnpResult {
        pose: refined.pose,
        rms: refined.final_rms,
        planar,
    })
}

struct CloudShape {
    centroid: Vector3<f64>,
    /// Principal axes as rows, largest spread first.
    axes: Matrix3<f64>,
    /// RMS spread along each axis.
    singular: [f64; 3],
}

fn analyze_cloud(pts: &[Vector3<f64>]) -> CloudShape {
    let n = pts.len() as f64;
    let centroid = pts.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Matrix3::zeros();
    let mut singular = [0.0; 3];
    for (row, &i) in order.iter().enumerate() {
        axes.set_row(row, &eig.eigenvectors.column(i).transpose());
        singular[row] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    if axes.determinant() < 0.0 {
        axes.set_row(2, &(-axes.row(2)));
    }
    CloudShape {
        centroid,
        axes,
        singular,
    }
}

/// Similarity normalizing 2D points to zero mean and RMS distance √2.
fn normalize_2d(pts: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vector2<f64>>() / n;
    let rms = (pts.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n).sqrt();
    let s = if rms > 0.0 { std::f64::consts::SQRT_2 / rms } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn null_vector(a: &DMatrix<f64>) -> DVector<f64> {
    // pad to at least as many rows as columns so V is complete
    let cols = a.ncols();
    let a = if a.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (a.nrows(), cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = a.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let imin = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    v_t.row(imin).transpose()
}

fn nearest_rotation(m: &Matrix3<f64>) -> (Matrix3<f64>, f64) {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
    }
    (r, svd.singular_values.mean())
}

fn dlt_init(pts_3d: &[Vector3<f64>], pts_n: &[Vector2<f64>]) -> Result<PoseSE3, GeometryError> {
    let n = pts_3d.len();
    // normalize world points: centroid at origin, RMS distance √3
    let c = pts_3d.iter().sum::<Vector3<f64>>() / n as f64;
    let rms = (pts_3d.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n as f64).sqrt();
    let s3 = 3f64.sqrt() / rms;
    let t2 = normalize_2d(pts_n);
    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, (x, u)) in pts_3d.iter().zip(pts_n).enumerate() {
        let xw = (x - c) * s3;
        let h = [xw.x, xw.y, xw.z, 1.0];
        let un = t2 * Vector3::new(u.x, u.y, 1.0);
        for j in 0..4 {
            a[(2 * i, j)] = h[j];
            a[(2 * i, 8 + j)] = -un.x * h[j];
            a[(2 * i + 1, 4 + j)] = h[j];
            a[(2 * i + 1, 8 + j)] = -un.y * h[j];
        }
    }
    let v = null_vector(&a);
    let p_norm = Matrix3x4::from_row_slice(v.as_slice());
    // undo normalizations: P = T2⁻¹ P_norm [s3 I, -s3 c; 0 1]
    let t2_inv = t2.try_inverse().ok_or(GeometryError::DegenerateConfiguration("bad 2D normalization"))?;
    let mut p = t2_inv * p_norm;
    let m = p.fixed_view::<3, 3>(0, 0) * s3;
    let t = p.column(3) - m * c;
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
    p.set_column(3, &t);
    let (mut r, mut scale) = nearest_rotation(&p.fixed_view::<3, 3>(0, 0).into_owned());
    let mut m3 = p.fixed_view::<3, 3>(0, 0).into_owned();
    let mut t = p.column(3).into_owned();
    // P is known up to sign: the camera must see the points in front
    let depth_sign = pts_3d.iter().map(|x| (m3 * x + t).z).sum::<f64>();
    if depth_sign < 0.0 {
        m3 = -m3;
        t = -t;
        let nr = nearest_rotation(&m3);
        r = nr.0;
        scale = nr.1;
    }
    if scale <= 0.0 {
        return Err(GeometryError::DegenerateConfiguration("DLT solution has zero scale"));
    }
    Ok(PoseSE3::from_matrix(&r, t / scale))
}

fn planar_init(
    pts_3d: &[Vector3<f64>],
    pts_n: &[Vector2<f64>],
    shape: &CloudShape,
) -> Result<PoseSE3, GeometryError> {
    // plane frame: origin at the centroid, z along the plane normal
    let plane: Vec<Vector2<f64>> = pts_3d
        .iter()
        .map(|p| {
            let q = shape.axes * (p - shape.centroid);
            Vector2::new(q.x, q.y)
        })
        .collect();
    let h = homography(&plane, pts_n)?;
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let mut lambda = 2.0 / (h1.norm() + h2.norm());
    // plane origin must be in front of the camera
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let r3 = r1.cross(&r2);
    let (r_plane, _) = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]));
    let t_plane = h3 * lambda;
    // x_cam = R_plane * A (x - c) + t_plane
    let r = r_plane * shape.axes;
    let t = t_plane - r * shape.centroid;
    Ok(PoseSE3::from_matrix(&r, t))
}

fn homography(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Result<Matrix3<f64>, GeometryError> {
    let ts = normalize_2d(src);
    let td = normalize_2d(dst);
    let n = src.len();
    let mut a = DMatrix::zeros(2 * n, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = ts * Vector3::new(s.x, s.y, 1.0);
        let d = td * Vector3::new(d.x, d.y, 1.0);
        let h = [s.x, s.y, 1.0];
        for j in 0..3 {
            a[(2 * i, j)] = h[j];
            a[(2 * i, 6 + j)] = -d.x * h[j];
            a[(2 * i + 1, 3 + j)] = h[j];
            a[(2 * i + 1, 6 + j)] = -d.y * h[j];
        }
    }
    let v = null_vector(&a);
    let hn = Matrix3::from_row_slice(v.as_slice());
    let td_inv = td
        .try_inverse()
        .ok_or(GeometryError::DegenerateConfiguration("bad 2D normalization"))?;
    Ok(td_inv * hn * ts)
}
