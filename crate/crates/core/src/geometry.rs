//! Pin-hole camera model, poses, camera centers, projection and
//! back-projection, and two-view DLT triangulation.
//!
//! Coordinate convention used throughout the crate: right-handed,
//! camera looks along +z, y points down. Heights above the road are
//! therefore measured along -y.

use nalgebra::{Matrix3, Matrix4, RowVector4, Vector3, Vector4};
use thiserror::Error;

/// 3D point in meters.
pub type Point3 = nalgebra::Point3<f64>;
/// 2D pixel coordinate.
pub type Point2 = nalgebra::Point2<f64>;

/// Minimum camera-center separation for triangulation, in meters.
pub const BASELINE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// Point depth in the camera frame is zero or negative.
    #[error("point has non-positive depth in the camera frame")]
    NonPositiveDepth,
    /// Camera centers are too close together for triangulation.
    #[error("camera baseline below {BASELINE_EPSILON} m")]
    DegenerateBaseline,
    /// The triangulated point lies behind one of the cameras.
    #[error("triangulated point lies behind a camera")]
    BehindCamera,
    /// Rotation part of a pose is not orthonormal within tolerance.
    #[error("rotation matrix is not orthonormal (error {0:e})")]
    NonRotationMatrix(f64),
}

/// Pin-hole intrinsics: focal length and principal point, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal_length: f64,
    pub principal_x: f64,
    pub principal_y: f64,
}

impl CameraIntrinsics {
    pub fn new(focal_length: f64, principal_x: f64, principal_y: f64) -> Self {
        debug_assert!(focal_length > 0.0 && principal_x > 0.0 && principal_y > 0.0);
        Self {
            focal_length,
            principal_x,
            principal_y,
        }
    }
}

/// Normalized camera pose `[R | t]` mapping world points into the camera
/// frame: `x_cam = R * x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose after verifying `R` is orthonormal with det +1
    /// within `tol` (max-norm of `R^T R - I`).
    pub fn checked(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tol: f64,
    ) -> Result<Self, GeometryError> {
        let err = orthonormality_error(&rotation);
        let det_err = (rotation.determinant() - 1.0).abs();
        if err > tol || det_err > tol.max(1e-3) {
            return Err(GeometryError::NonRotationMatrix(err.max(det_err)));
        }
        Ok(Self::new(rotation, translation))
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    /// Builds the pose whose camera center is `center` with rotation `r`
    /// (`t = -R c`).
    pub fn from_center(r: Matrix3<f64>, center: Point3) -> Self {
        Self::new(r, -r * center.coords)
    }

    /// Transforms a world point into this camera's frame.
    pub fn to_camera(&self, p: Point3) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }
}

/// Max-norm of `R^T R - I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let e = r.transpose() * r - Matrix3::identity();
    e.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Camera center `c = -R^-1 t`; the rotation is orthonormal so the
/// inverse is the transpose.
pub fn camera_center(pose: &Pose) -> Point3 {
    Point3::from(-(pose.rotation.transpose() * pose.translation))
}

/// Perspective projection of a world point into pixel coordinates.
pub fn project(intr: &CameraIntrinsics, pose: &Pose, p: Point3) -> Result<Point2, GeometryError> {
    let pc = pose.to_camera(p);
    if pc.z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth);
    }
    Ok(Point2::new(
        intr.focal_length * pc.x / pc.z + intr.principal_x,
        intr.focal_length * pc.y / pc.z + intr.principal_y,
    ))
}

/// Inverse of [`project`] at a known depth, in the camera frame.
pub fn back_project(
    intr: &CameraIntrinsics,
    q: Point2,
    depth: f64,
) -> Result<Point3, GeometryError> {
    if depth <= 0.0 {
        return Err(GeometryError::NonPositiveDepth);
    }
    Ok(Point3::new(
        (q.x - intr.principal_x) * depth / intr.focal_length,
        (q.y - intr.principal_y) * depth / intr.focal_length,
        depth,
    ))
}

/// Two-view linear (DLT) triangulation: least-squares point minimizing
/// the algebraic reprojection residual of both observations.
pub fn triangulate(
    intr: &CameraIntrinsics,
    pose_a: &Pose,
    pose_b: &Pose,
    q_a: Point2,
    q_b: Point2,
) -> Result<Point3, GeometryError> {
    let baseline = (camera_center(pose_a) - camera_center(pose_b)).norm();
    if baseline <= BASELINE_EPSILON {
        return Err(GeometryError::DegenerateBaseline);
    }

    let mut a = Matrix4::zeros();
    for (row, (pose, q)) in [(pose_a, q_a), (pose_b, q_b)].iter().enumerate() {
        let pm = projection_matrix(intr, pose);
        let p0 = pm.row(0);
        let p1 = pm.row(1);
        let p2 = pm.row(2);
        a.set_row(2 * row, &(q.x * p2 - p0));
        a.set_row(2 * row + 1, &(q.y * p2 - p1));
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("SVD of a 4x4 matrix always yields V^T");
    // Right singular vector of the smallest singular value.
    let mut min_idx = 0;
    for i in 1..svd.singular_values.len() {
        if svd.singular_values[i] < svd.singular_values[min_idx] {
            min_idx = i;
        }
    }
    let h: Vector4<f64> = v_t.row(min_idx).transpose();
    let w = h.w;
    if w == 0.0 || !(h / w).iter().all(|v| v.is_finite()) {
        return Err(GeometryError::BehindCamera);
    }
    let p = Point3::new(h.x / w, h.y / w, h.z / w);
    for pose in [pose_a, pose_b] {
        if pose.to_camera(p).z <= 0.0 {
            return Err(GeometryError::BehindCamera);
        }
    }
    Ok(p)
}

/// `K [R | t]` as a 3x4 matrix, expressed row-wise.
fn projection_matrix(intr: &CameraIntrinsics, pose: &Pose) -> nalgebra::Matrix3x4<f64> {
    let k = Matrix3::new(
        intr.focal_length,
        0.0,
        intr.principal_x,
        0.0,
        intr.focal_length,
        intr.principal_y,
        0.0,
        0.0,
        1.0,
    );
    let mut rt = nalgebra::Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rotation);
    rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&pose.translation);
    k * rt
}

/// Row of the 3x4 projection matrix as a `RowVector4`.
#[allow(dead_code)]
fn row4(m: &nalgebra::Matrix3x4<f64>, i: usize) -> RowVector4<f64> {
    RowVector4::new(m[(i, 0)], m[(i, 1)], m[(i, 2)], m[(i, 3)])
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand::RngExt;

    /// Random rotation from a uniformly random axis and angle.
    pub fn random_rotation(rng: &mut impl RngExt) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let axis = if axis.norm() < 1e-9 {
            Vector3::x()
        } else {
            axis
        };
        let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .into_inner()
    }
}
