//! Point clouds, flow fields and rigid motions.
//!
//! Points are row vectors and motions act from the right: `p * R + t`.
//! Every rotation in the crate follows that convention.

mod kabsch;
mod knn;
mod motion;

pub use kabsch::{kabsch_fit, rmsd};
pub use knn::{KnnIndex, Neighbor};
pub use motion::{apply_motion, RigidMotion};

use crate::error::{Error, Result};
use nalgebra::{Matrix3, RowVector3};

/// A 3-vector in meters, row convention.
pub type Vec3 = RowVector3<f64>;
/// A 3x3 matrix acting on row vectors from the right.
pub type Mat3 = Matrix3<f64>;

/// Entity identifier attached to LiDAR returns.
pub type EntityId = u32;

/// Index of the up axis (z) in every coordinate frame of the crate.
pub const UP_AXIS: usize = 2;

/// An ordered set of points with optional per-point entity labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vec3>,
    labels: Option<Vec<Option<EntityId>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        check_finite(&points)?;
        Ok(Self {
            points,
            labels: None,
        })
    }

    pub fn with_labels(points: Vec<Vec3>, labels: Vec<Option<EntityId>>) -> Result<Self> {
        check_finite(&points)?;
        if labels.len() != points.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                found: labels.len(),
            });
        }
        Ok(Self {
            points,
            labels: Some(labels),
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[Option<EntityId>]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points at `indices`, in that order, carrying labels along.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Replaces the coordinates, keeping the labels. Lengths must agree.
    pub fn map_points(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn centroid(&self) -> Option<Vec3> {
        centroid(&self.points)
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }
}

/// Per-point displacement vectors aligned with an anchor cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowField {
    vectors: Vec<Vec3>,
}

impl FlowField {
    pub fn new(vectors: Vec<Vec3>) -> Result<Self> {
        check_finite(&vectors)?;
        Ok(Self { vectors })
    }

    /// Flow that carries `anchor` onto `end_points`.
    pub fn between(anchor: &[Vec3], end_points: &[Vec3]) -> Result<Self> {
        if anchor.len() != end_points.len() {
            return Err(Error::LengthMismatch {
                expected: anchor.len(),
                found: end_points.len(),
            });
        }
        Self::new(
            anchor
                .iter()
                .zip(end_points)
                .map(|(a, b)| b - a)
                .collect(),
        )
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            vectors: vec![Vec3::zeros(); n],
        }
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            vectors: indices.iter().map(|&i| self.vectors[i]).collect(),
        }
    }

    /// `anchor + flow`, the warped frame.
    pub fn warp(&self, anchor: &[Vec3]) -> Vec<Vec3> {
        debug_assert_eq!(anchor.len(), self.vectors.len());
        anchor.iter().zip(&self.vectors).map(|(p, f)| p + f).collect()
    }
}

pub fn centroid(points: &[Vec3]) -> Option<Vec3> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    Some(sum / points.len() as f64)
}

fn check_finite(points: &[Vec3]) -> Result<()> {
    match points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        Some(i) => Err(Error::NonFinite(format!("point {i}"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_points() {
        let err = PointCloud::new(vec![Vec3::new(0.0, f64::NAN, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn labels_must_match_length() {
        let err = PointCloud::with_labels(vec![Vec3::zeros(); 2], vec![Some(1)]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
    }

    #[test]
    fn select_keeps_labels_aligned() {
        let cloud = PointCloud::with_labels(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            vec![Some(5), None, Some(7)],
        )
        .unwrap();
        let sub = cloud.select(&[2, 0]);
        assert_eq!(sub.points()[0].x, 2.0);
        assert_eq!(sub.labels().unwrap(), &[Some(7), Some(5)]);
    }
}
