//! Spherical-grid ray caster.

use super::{Entity, Shape};
use crate::error::{Error, Result};
use crate::geom::{EntityId, PointCloud, RigidMotion, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarConfig {
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    /// Horizontal field of view centered on the forward axis, degrees.
    pub azimuth_fov_deg: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    /// Standard deviation of Gaussian range noise, meters.
    pub range_noise: f64,
    pub max_range: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            azimuth_bins: 512,
            elevation_bins: 64,
            azimuth_fov_deg: 360.0,
            elevation_min_deg: -24.8,
            elevation_max_deg: 2.0,
            range_noise: 0.0,
            max_range: 80.0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.azimuth_bins == 0 || self.elevation_bins == 0 {
            return Err(Error::InvalidScript("lidar bins must be >= 1".into()));
        }
        if !(self.azimuth_fov_deg > 0.0 && self.azimuth_fov_deg <= 360.0) {
            return Err(Error::InvalidScript("lidar.azimuth_fov_deg must be in (0, 360]".into()));
        }
        if !(self.elevation_min_deg <= self.elevation_max_deg)
            || self.elevation_min_deg < -90.0
            || self.elevation_max_deg > 90.0
        {
            return Err(Error::InvalidScript("lidar elevation range is invalid".into()));
        }
        if !(self.range_noise >= 0.0 && self.max_range > 0.0) {
            return Err(Error::InvalidScript("lidar noise must be >= 0 and max_range > 0".into()));
        }
        Ok(())
    }

    /// Unit ray directions in sensor-local coordinates, elevation-major.
    pub fn directions(&self) -> Vec<Vec3> {
        let fov = self.azimuth_fov_deg.to_radians();
        let (lo, hi) = (self.elevation_min_deg.to_radians(), self.elevation_max_deg.to_radians());
        let mut out = Vec::with_capacity(self.azimuth_bins * self.elevation_bins);
        for m in 0..self.elevation_bins {
            let el = if self.elevation_bins == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * m as f64 / (self.elevation_bins - 1) as f64
            };
            for k in 0..self.azimuth_bins {
                let az = fov * (k as f64 + 0.5) / self.azimuth_bins as f64 - 0.5 * fov;
                out.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        out
    }
}

/// Distance along a unit ray to the first surface crossing in local coordinates.
pub fn intersect(shape: &Shape, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    match shape {
        Shape::Box { half_extents } => {
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            for a in 0..3 {
                if dir[a].abs() < 1e-15 {
                    if origin[a].abs() > half_extents[a] {
                        return None;
                    }
                    continue;
                }
                let t1 = (-half_extents[a] - origin[a]) / dir[a];
                let t2 = (half_extents[a] - origin[a]) / dir[a];
                t_near = t_near.max(t1.min(t2));
                t_far = t_far.min(t1.max(t2));
            }
            (t_near <= t_far && t_near > HIT_EPS).then_some(t_near)
        }
        Shape::Sphere { radius } => {
            let b = origin.dot(dir);
            let c = origin.norm_squared() - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let t = -b - disc.sqrt();
            (t > HIT_EPS).then_some(t)
        }
        Shape::Plane => {
            if dir.z.abs() < 1e-15 {
                return None;
            }
            let t = -origin.z / dir.z;
            (t > HIT_EPS).then_some(t)
        }
    }
}

struct Prepared<'a> {
    id: EntityId,
    shape: &'a Shape,
    to_local: RigidMotion,
    center: Vec3,
    radius: f64,
}

/// Casts the configured ray grid from a sensor at `sensor_pose` into the
/// entities' frame-`frame` poses. Returns the nearest hit per ray in
/// sensor-local coordinates, labeled with the hit entity.
pub fn lidar_scan(
    entities: &[Entity],
    frame: usize,
    sensor_pose: &RigidMotion,
    mount_height: f64,
    cfg: &LidarConfig,
    noise_seed: u64,
) -> PointCloud {
    let prepared: Vec<Prepared> = entities
        .iter()
        .filter_map(|e| {
            e.pose(frame).map(|pose| Prepared {
                id: e.id,
                shape: &e.shape,
                to_local: pose.inverse(),
                center: *pose.translation(),
                radius: e.shape.bounding_radius(),
            })
        })
        .collect();
    let origin_local = Vec3::new(0.0, 0.0, mount_height);
    let origin_world = sensor_pose.apply(&origin_local);
    let dirs = cfg.directions();

    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise: Vec<f64> = if cfg.range_noise > 0.0 {
        let dist = Normal::new(0.0, cfg.range_noise).expect("finite sigma");
        (0..dirs.len()).map(|_| dist.sample(&mut rng)).collect()
    } else {
        vec![0.0; dirs.len()]
    };

    let hits: Vec<Option<(Vec3, EntityId)>> = dirs
        .par_iter()
        .zip(noise.par_iter())
        .map(|(d, n)| {
            let d_world = sensor_pose.rotate(d);
            let mut best: Option<(f64, EntityId)> = None;
            for e in &prepared {
                if e.radius.is_finite() {
                    let v = e.center - origin_world;
                    let tc = v.dot(&d_world);
                    if tc < -e.radius || v.norm_squared() - tc * tc > e.radius * e.radius {
                        continue;
                    }
                }
                let o = e.to_local.apply(&origin_world);
                let dl = e.to_local.rotate(&d_world);
                if let Some(t) = intersect(e.shape, &o, &dl) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, e.id));
                    }
                }
            }
            best.filter(|(t, _)| *t <= cfg.max_range).map(|(t, id)| {
                let range = (t + n).max(HIT_EPS);
                (origin_local + d * range, id)
            })
        })
        .collect();

    let (points, labels): (Vec<Vec3>, Vec<Option<EntityId>>) =
        hits.into_iter().flatten().map(|(p, id)| (p, Some(id))).unzip();
    PointCloud::with_labels(points, labels).expect("finite hits")
}
