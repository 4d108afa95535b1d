use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};

/// Rigid transform mapping world coordinates into the camera frame:
/// `x_cam = R * x_world + t`.
///
/// Every pose in the crate uses this convention. Camera centers and
/// camera-to-world orientations are derived through [`PoseSE3::center`] and
/// [`PoseSE3::orientation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3(pub Isometry3<f64>);

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self(Isometry3::identity())
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self(Isometry3::from_parts(Translation3::from(translation), rotation))
    }

    /// Builds from a rotation matrix, re-orthonormalizing it through the quaternion.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// Pose of a camera located at `center` with camera-to-world orientation `orientation`.
    pub fn from_center(orientation: UnitQuaternion<f64>, center: Vector3<f64>) -> Self {
        Self(Isometry3::from_parts(Translation3::from(center), orientation).inverse())
    }

    /// Camera placed at `eye` looking at `target`, image `y` axis roughly along `down`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, down: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        let c2w = Matrix3::from_columns(&[x, y, z]);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(c2w));
        Self::from_center(q, eye)
    }

    #[inline]
    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.rotation.to_rotation_matrix().into_inner()
    }

    #[inline]
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        self.0.rotation
    }

    #[inline]
    pub fn translation(&self) -> Vector3<f64> {
        self.0.translation.vector
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.0.rotation.inverse() * self.0.translation.vector)
    }

    /// Camera-to-world orientation.
    pub fn orientation(&self) -> UnitQuaternion<f64> {
        self.0.rotation.inverse()
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.0 * Point3::from(*p)).coords
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        Self(self.0 * other.0)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        self.0.to_homogeneous()
    }

    /// Rotation angle of the relative rotation between two poses.
    pub fn rotation_distance(&self, other: &PoseSE3) -> f64 {
        rotation_angle(&(self.rotation() * other.rotation().transpose()))
    }
}

/// Geodesic angle of a rotation matrix, accurate near 0 and near π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = (r.trace() - 1.0) / 2.0;
    let sin = 0.5
        * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    sin.atan2(cos)
}

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues exponential map.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*w).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn center_and_orientation_invert_the_pose() {
        let q = UnitQuaternion::from_euler_angles(0.1, -0.3, 0.7);
        let c = Vector3::new(1.0, 2.0, -0.5);
        let pose = PoseSE3::from_center(q, c);
        assert!((pose.center() - c).norm() < 1e-12);
        assert!(pose.orientation().angle_to(&q) < 1e-12);
        assert!(pose.transform(&c).norm() < 1e-12);
    }

    #[test]
    fn rotation_angle_handles_extremes() {
        assert!(rotation_angle(&Matrix3::identity()).abs() < 1e-15);
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), PI).into_inner();
        assert!((rotation_angle(&r) - PI).abs() < 1e-12);
        let r = Rotation3::from_axis_angle(&Vector3::x_axis(), 1e-7).into_inner();
        assert!((rotation_angle(&r) - 1e-7).abs() < 1e-18);
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let pose = PoseSE3::look_at(
            Vector3::new(0.5, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::y(),
        );
        let p = pose.transform(&Vector3::new(0.0, 0.0, 3.0));
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
    }
}
