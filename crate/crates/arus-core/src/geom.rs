//! Coordinate algebra: SE(3) rigid transforms, pinhole projection and
//! unprojection, Euler decomposition, and pose-difference metrics.
//!
//! Conventions used across the whole crate:
//!
//! * every length is in millimeters; angles are radians internally and
//!   degrees at reporting interfaces,
//! * a transform named `T_a_from_b` maps points expressed in frame `b`
//!   into frame `a` (so chains read right to left),
//! * Euler reports use the intrinsic Z-Y-X (yaw-pitch-roll) convention and
//!   are returned in `[roll_x, pitch_y, yaw_z]` order.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `RᵀR − I` and `det(R) − 1` accepted at construction.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Drift threshold beyond which `compose` re-orthonormalizes its result.
const COMPOSE_DRIFT: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("rotation is not orthonormal with det +1 (deviation {0:.3e})")]
    InvalidRotation(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("non-positive depth z = {0} mm")]
    NonPositiveDepth(f64),
}

/// Maximum deviation of `r` from a proper rotation: the largest entry of
/// `|RᵀR − I|` or `|det(R) − 1|`, whichever is bigger.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let ortho = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ortho.max((r.determinant() - 1.0).abs())
}

/// Project `m` onto the nearest proper rotation (polar projection via SVD,
/// reflection corrected so det = +1).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd of 3x3 always yields u");
    let v_t = svd.v_t.expect("svd of 3x3 always yields v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// A rigid SE(3) transform. Named `T_a_from_b` by convention: maps points
/// expressed in frame `b` to frame `a` as `p_a = R · p_b + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigidTransformRaw", into = "RigidTransformRaw")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Plain-array form used for (de)serialization; validated on the way in.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RigidTransformRaw {
    rotation_row_major: [[f64; 3]; 3],
    translation_mm: [f64; 3],
}

impl From<RigidTransform> for RigidTransformRaw {
    fn from(t: RigidTransform) -> Self {
        let r = t.rotation;
        RigidTransformRaw {
            rotation_row_major: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation_mm: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<RigidTransformRaw> for RigidTransform {
    type Error = GeomError;
    fn try_from(raw: RigidTransformRaw) -> Result<Self, GeomError> {
        let m = raw.rotation_row_major;
        let rotation = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        RigidTransform::new(rotation, Vector3::from(raw.translation_mm))
    }
}

impl RigidTransform {
    /// Build a transform, validating the rotation against
    /// [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let dev = rotation_deviation(&rotation);
        if dev > ROTATION_TOLERANCE {
            return Err(GeomError::InvalidRotation(dev));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about the x axis by `angle_rad`, zero translation.
    pub fn from_rotation_x(angle_rad: f64) -> Self {
        let (s, c) = angle_rad.sin_cos();
        Self {
            rotation: Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation about the y axis by `angle_rad`, zero translation.
    pub fn from_rotation_y(angle_rad: f64) -> Self {
        let (s, c) = angle_rad.sin_cos();
        Self {
            rotation: Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation about the z axis by `angle_rad`, zero translation.
    pub fn from_rotation_z(angle_rad: f64) -> Self {
        let (s, c) = angle_rad.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::zeros(),
        }
    }

    /// Intrinsic Z-Y-X rotation from `[roll_x, pitch_y, yaw_z]` in degrees:
    /// `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
    pub fn from_euler_zyx_deg(angles_deg: [f64; 3]) -> Self {
        let [roll, pitch, yaw] = angles_deg.map(f64::to_radians);
        let r = Self::from_rotation_z(yaw).rotation
            * Self::from_rotation_y(pitch).rotation
            * Self::from_rotation_x(roll).rotation;
        Self {
            rotation: r,
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_translation(mut self, translation: Vector3<f64>) -> Self {
        self.translation = translation;
        self
    }

    /// Map a point from frame `b` into frame `a` (for `T_a_from_b`).
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotate a direction without translating it.
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }
}

/// Chain two transforms: `compose(T_a_from_b, T_b_from_c) = T_a_from_c`.
///
/// The operands must share the middle frame by naming convention; this is
/// not checkable and is the caller's responsibility. The rotation is
/// re-orthonormalized when accumulated drift exceeds 1e-12.
pub fn compose(t_a_from_b: &RigidTransform, t_b_from_c: &RigidTransform) -> RigidTransform {
    let mut rotation = t_a_from_b.rotation * t_b_from_c.rotation;
    if rotation_deviation(&rotation) > COMPOSE_DRIFT {
        rotation = nearest_rotation(&rotation);
    }
    RigidTransform {
        rotation,
        translation: t_a_from_b.rotation * t_b_from_c.translation + t_a_from_b.translation,
    }
}

/// Invert a transform: `invert(T_a_from_b) = T_b_from_a`.
pub fn invert(t: &RigidTransform) -> RigidTransform {
    let r_inv = t.rotation.transpose();
    RigidTransform {
        rotation: r_inv,
        translation: -(r_inv * t.translation),
    }
}

/// Pinhole camera intrinsics (no distortion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeomError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if cx < 0.0 || cx >= width as f64 || cy < 0.0 || cy >= height as f64 {
            return Err(GeomError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// True if the continuous pixel coordinate lies inside the image.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// Project a camera-frame point to pixel coordinates:
/// `u = fx·x/z + cx`, `v = fy·y/z + cy`.
pub fn project(k: &CameraIntrinsics, p_cam: &Vector3<f64>) -> Result<(f64, f64), GeomError> {
    if p_cam.z <= 0.0 {
        return Err(GeomError::NonPositiveDepth(p_cam.z));
    }
    Ok((
        k.fx * p_cam.x / p_cam.z + k.cx,
        k.fy * p_cam.y / p_cam.z + k.cy,
    ))
}

/// Unproject a pixel at a given z-depth back to a camera-frame point.
pub fn unproject(k: &CameraIntrinsics, pixel: (f64, f64), depth: f64) -> Result<Vector3<f64>, GeomError> {
    if depth <= 0.0 {
        return Err(GeomError::NonPositiveDepth(depth));
    }
    Ok(Vector3::new(
        (pixel.0 - k.cx) / k.fx * depth,
        (pixel.1 - k.cy) / k.fy * depth,
        depth,
    ))
}

/// Difference between two poses: translation distance plus the Euler
/// decomposition of the relative rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseOffset {
    /// Distance between the two translations, mm.
    pub center_offset: f64,
    /// `[roll_x, pitch_y, yaw_z]` of `R_gtᵀ·R_est`, degrees, each in
    /// (−180, 180].
    pub euler_offsets: [f64; 3],
    /// Set when the middle angle is within 1e-6° of ±90° and the
    /// decomposition is degenerate (roll folded into yaw).
    pub gimbal_lock: bool,
}

/// Decompose a rotation into intrinsic Z-Y-X Euler angles, returned as
/// `[roll_x, pitch_y, yaw_z]` in degrees. The boolean flags gimbal lock.
pub fn euler_zyx_deg(r: &Matrix3<f64>) -> ([f64; 3], bool) {
    let sin_pitch = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sin_pitch.asin();
    let pitch_deg = pitch.to_degrees();
    if (90.0 - pitch_deg.abs()).abs() < 1e-6 {
        // roll and yaw are coupled; conventionally report roll = 0
        let yaw = f64::atan2(-r[(0, 1)], r[(1, 1)]);
        return ([0.0, pitch_deg, yaw.to_degrees()], true);
    }
    let yaw = f64::atan2(r[(1, 0)], r[(0, 0)]);
    let roll = f64::atan2(r[(2, 1)], r[(2, 2)]);
    ([roll.to_degrees(), pitch_deg, yaw.to_degrees()], false)
}

/// Geodesic angle of a rotation matrix, radians.
pub fn rotation_angle_rad(r: &Matrix3<f64>) -> f64 {
    (((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

/// Interpolate between two poses (quaternion slerp plus linear
/// translation), `s` in [0, 1].
pub fn interpolate_pose(a: &RigidTransform, b: &RigidTransform, s: f64) -> RigidTransform {
    use nalgebra::{Rotation3, UnitQuaternion};
    let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(a.rotation));
    let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(b.rotation));
    let q = qa.slerp(&qb, s);
    RigidTransform {
        rotation: *q.to_rotation_matrix().matrix(),
        translation: a.translation * (1.0 - s) + b.translation * s,
    }
}

/// Compare an estimated pose against ground truth.
pub fn pose_offset(t_gt: &RigidTransform, t_est: &RigidTransform) -> PoseOffset {
    let center_offset = (t_gt.translation - t_est.translation).norm();
    let r_rel = t_gt.rotation.transpose() * t_est.rotation;
    let (euler_offsets, gimbal_lock) = euler_zyx_deg(&r_rel);
    PoseOffset {
        center_offset,
        euler_offsets,
        gimbal_lock,
    }
}
