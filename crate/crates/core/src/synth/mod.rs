//! Procedural rigid-body LiDAR scenes with exact scene flow annotation.
//!
//! Coordinate frames: the world is z-up. The sensor-local frame is the ego
//! frame, with its origin on the ground below the LiDAR, x forward and z up;
//! the LiDAR itself sits at `mount_height` on the z axis. A [`SensorPath`]
//! pose maps sensor-local coordinates to world coordinates.

mod annotate;
mod lidar;
mod preprocess;
mod scene;
mod script;

pub use annotate::{annotate_pair, compensate_ego_motion, entity_consistent_positions, retrieve_ego_motion};
pub use lidar::{intersect, lidar_scan, LidarConfig};
pub use preprocess::{preprocess, preprocess_indexed, remove_ground, GroundStrategy, PreprocessConfig};
pub use scene::{build_scene, generate_pair, is_ground_id, Scene, FIRST_OBJECT_ID};
pub use script::{GroundScript, PropScript, SceneScript, SensorScript, VehicleScript};

use crate::geom::{EntityId, FlowField, PointCloud, RigidMotion, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityKind {
    Vehicle,
    StaticProp,
    Ground,
}

/// Surface geometry in entity-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Axis-aligned box centered at the origin.
    Box { half_extents: Vec3 },
    Sphere { radius: f64 },
    /// The infinite plane `z = 0`.
    Plane,
}

impl Shape {
    /// Signed distance of a local point to the surface (planes: height above).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Box { half_extents } => {
                let q = p.abs() - half_extents;
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Plane => p.z,
        }
    }

    /// Radius of a ball around the local origin containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Box { half_extents } => half_extents.norm(),
            Shape::Sphere { radius } => *radius,
            Shape::Plane => f64::INFINITY,
        }
    }
}

/// A rigid body with one optional pose per frame (`None`: not in the scene).
#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub shape: Shape,
    /// Entity-local to world, per frame.
    pub poses: Vec<Option<RigidMotion>>,
}

impl Entity {
    pub fn pose(&self, frame: usize) -> Option<&RigidMotion> {
        self.poses.get(frame).and_then(|p| p.as_ref())
    }

    pub fn is_static(&self) -> bool {
        matches!(self.kind, EntityKind::StaticProp | EntityKind::Ground)
    }
}

/// Per-frame sensor-to-world poses sampled every `dt` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorPath {
    pub poses: Vec<RigidMotion>,
    pub dt: f64,
    pub mount_height: f64,
}

impl SensorPath {
    pub fn pose(&self, frame: usize) -> &RigidMotion {
        &self.poses[frame]
    }

    /// The inverse pose, world to sensor-local coordinates.
    pub fn world_to_lidar(&self, frame: usize) -> RigidMotion {
        self.poses[frame].inverse()
    }

    pub fn frames(&self) -> usize {
        self.poses.len()
    }

    pub fn lidar_origin(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.mount_height)
    }
}

/// Two consecutive sensor-local frames with the ground-truth flow of the first.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedPair {
    pub first: PointCloud,
    pub second: PointCloud,
    pub flow: FlowField,
}
