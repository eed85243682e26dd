use super::{Mat3, PointCloud, Vec3};
use crate::error::{Error, Result};
use nalgebra::{Rotation3, Unit, Vector3};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// A proper rigid motion acting on row vectors: `p -> p * rotation + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    rotation: Mat3,
    translation: Vec3,
}

impl RigidMotion {
    /// Validates `rotation` (orthonormal, determinant +1, within 1e-9).
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("rigid motion".into()));
        }
        let gram = rotation.transpose() * rotation;
        if (gram - Mat3::identity()).abs().max() > ORTHONORMAL_TOL {
            return Err(Error::InvalidConfig("rotation is not orthonormal".into()));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidConfig("rotation has determinant != +1".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn new_unchecked(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new_unchecked(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new_unchecked(Mat3::identity(), translation)
    }

    /// Rotation by `angle` radians (right-handed) about `axis`, then translation.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let axis = Unit::new_normalize(Vector3::new(axis.x, axis.y, axis.z));
        // nalgebra rotates column vectors; the row-vector form is the transpose.
        let column_form = Rotation3::from_axis_angle(&axis, angle);
        Self::new_unchecked(column_form.matrix().transpose(), translation)
    }

    /// Rotation about the up axis (z) through the origin.
    pub fn yaw(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), angle, Vec3::zeros())
    }

    /// Intrinsic yaw-pitch-roll about z, y, x applied to an object at `position`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, position: Vec3) -> Self {
        let column_form = Rotation3::from_euler_angles(roll, pitch, yaw);
        Self::new_unchecked(column_form.matrix().transpose(), position)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.rotation + self.translation
    }

    /// Applies only the rotation (for direction vectors).
    #[inline]
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        v * self.rotation
    }

    pub fn apply_all(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    /// Moves every point of the cloud; labels are preserved.
    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| self.apply(p))
    }

    /// The motion equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &RigidMotion) -> RigidMotion {
        Self::new_unchecked(
            self.rotation * next.rotation,
            self.translation * next.rotation + next.translation,
        )
    }

    pub fn inverse(&self) -> RigidMotion {
        let rt = self.rotation.transpose();
        Self::new_unchecked(rt, -(self.translation * rt))
    }

    /// Largest absolute entry difference of rotations and translations.
    pub fn max_abs_diff(&self, other: &RigidMotion) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

impl Default for RigidMotion {
    fn default() -> Self {
        Self::identity()
    }
}

/// Applies a motion to a cloud. Free-function form of [`RigidMotion::apply_cloud`].
pub fn apply_motion(cloud: &PointCloud, motion: &RigidMotion) -> PointCloud {
    motion.apply_cloud(cloud)
}
