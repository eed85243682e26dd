use super::lidar::lidar_scan;
use super::{annotate_pair, AnnotatedPair, Entity, EntityKind, SceneScript, SensorPath, Shape};
use crate::error::Result;
use crate::geom::{EntityId, RigidMotion, Vec3};
use crate::seed::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ids below this value are reserved for ground surfaces.
pub const FIRST_OBJECT_ID: EntityId = 8;

/// True for ids reserved for ground entities.
pub fn is_ground_id(id: EntityId) -> bool {
    id < FIRST_OBJECT_ID
}

const SCAN_STREAM: u64 = 0x5CA7;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub script: SceneScript,
    pub seed: u64,
    pub entities: Vec<Entity>,
    pub sensor: SensorPath,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Pose after `time` seconds of constant speed and yaw rate from `start`.
fn unicycle(start: Vec3, heading: f64, speed: f64, yaw_rate: f64, time: f64) -> (Vec3, f64) {
    let theta = heading + yaw_rate * time;
    let (dx, dy) = if yaw_rate.abs() < 1e-12 {
        (speed * time * heading.cos(), speed * time * heading.sin())
    } else {
        let r = speed / yaw_rate;
        (r * (theta.sin() - heading.sin()), r * (heading.cos() - theta.cos()))
    };
    (start + Vec3::new(dx, dy, 0.0), theta)
}

fn ground_height(script: &SceneScript, y: f64) -> f64 {
    (script.ground.side_grade * (y.abs() - script.ground.side_offset)).max(0.0)
}

/// Builds a deterministic scene from a script.
pub fn build_scene(script: &SceneScript, seed: u64) -> Result<Scene> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = script.frames;
    let dt = script.sensor.dt;
    let mut entities = Vec::new();

    entities.push(Entity {
        id: 0,
        kind: EntityKind::Ground,
        shape: Shape::Plane,
        poses: vec![Some(RigidMotion::identity()); frames],
    });
    if script.ground.side_grade > 0.0 {
        let angle = script.ground.side_grade.atan();
        let offset = script.ground.side_offset;
        for (id, side) in [(1, 1.0), (2, -1.0)] {
            let pose = RigidMotion::from_axis_angle(
                Vec3::new(1.0, 0.0, 0.0),
                side * angle,
                Vec3::new(0.0, side * offset, 0.0),
            );
            entities.push(Entity {
                id,
                kind: EntityKind::Ground,
                shape: Shape::Plane,
                poses: vec![Some(pose); frames],
            });
        }
    }

    let speed = uniform(&mut rng, script.sensor.speed);
    let yaw_rate = uniform(&mut rng, script.sensor.yaw_rate);
    let sensor = SensorPath {
        poses: (0..frames)
            .map(|k| {
                let (pos, theta) = unicycle(Vec3::zeros(), 0.0, speed, yaw_rate, k as f64 * dt);
                RigidMotion::yaw(theta).then(&RigidMotion::from_translation(pos))
            })
            .collect(),
        dt,
        mount_height: script.sensor.mount_height,
    };

    let mut next_id = FIRST_OBJECT_ID;
    let v = &script.vehicles;
    // (lane, x, half length) of placed vehicles, for overlap rejection.
    let mut placed: Vec<(usize, f64, f64)> = Vec::new();
    for _ in 0..v.count {
        let length = uniform(&mut rng, v.length);
        let width = uniform(&mut rng, v.width);
        let height = uniform(&mut rng, v.height);
        let speed = uniform(&mut rng, v.speed);
        let yaw_rate = uniform(&mut rng, [-v.yaw_rate, v.yaw_rate]);
        let mut slot = None;
        for _ in 0..32 {
            let lane = rng.random_range(0..v.lanes.len());
            let x = uniform(&mut rng, v.x_range);
            let clear = placed
                .iter()
                .all(|&(l, px, half)| l != lane || (px - x).abs() > half + 0.5 * length + 1.5);
            if clear {
                slot = Some((lane, x));
                break;
            }
        }
        let despawn_at = rng
            .random_bool(v.despawn_probability)
            .then(|| rng.random_range(1..frames));
        let Some((lane, x)) = slot else { continue };
        placed.push((lane, x, 0.5 * length));
        let y = v.lanes[lane];
        let heading = if y < 0.0 { std::f64::consts::PI } else { 0.0 };
        let start = Vec3::new(x, y, 0.0);
        let poses = (0..frames)
            .map(|k| {
                if despawn_at.is_some_and(|d| k >= d) {
                    return None;
                }
                let (pos, theta) = unicycle(start, heading, speed, yaw_rate, k as f64 * dt);
                let centre = pos + Vec3::new(0.0, 0.0, 0.5 * height);
                Some(RigidMotion::yaw(theta).then(&RigidMotion::from_translation(centre)))
            })
            .collect();
        entities.push(Entity {
            id: next_id,
            kind: EntityKind::Vehicle,
            shape: Shape::Box {
                half_extents: Vec3::new(0.5 * length, 0.5 * width, 0.5 * height),
            },
            poses,
        });
        next_id += 1;
    }

    let p = &script.props;
    for _ in 0..p.count {
        let x = uniform(&mut rng, p.x_range);
        let y = uniform(&mut rng, p.lateral) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let base = ground_height(script, y);
        let (shape, pose) = if rng.random_bool(p.sphere_fraction) {
            let r = uniform(&mut rng, p.sphere_radius);
            (Shape::Sphere { radius: r }, RigidMotion::from_translation(Vec3::new(x, y, base + r)))
        } else {
            let he = Vec3::new(
                0.5 * uniform(&mut rng, p.size),
                0.5 * uniform(&mut rng, p.size),
                0.5 * uniform(&mut rng, p.size),
            );
            let yaw = rng.random_range(0.0..std::f64::consts::PI);
            let pose = RigidMotion::yaw(yaw).then(&RigidMotion::from_translation(Vec3::new(x, y, base + he.z)));
            (Shape::Box { half_extents: he }, pose)
        };
        entities.push(Entity {
            id: next_id,
            kind: EntityKind::StaticProp,
            shape,
            poses: vec![Some(pose); frames],
        });
        next_id += 1;
    }

    Ok(Scene {
        script: script.clone(),
        seed,
        entities,
        sensor,
    })
}

impl Scene {
    /// Scans frames `frame` and `frame + 1` and annotates the pair.
    pub fn pair(&self, frame: usize) -> Result<AnnotatedPair> {
        let scan = |k: usize| {
            lidar_scan(
                &self.entities,
                k,
                self.sensor.pose(k),
                self.sensor.mount_height,
                &self.script.lidar,
                derive_seed(self.seed, SCAN_STREAM + k as u64),
            )
        };
        let first = scan(frame);
        let second = scan(frame + 1);
        annotate_pair(&self.entities, &self.sensor, frame, first, second)
    }

    pub fn pair_count(&self) -> usize {
        self.sensor.frames() - 1
    }
}

/// Builds the scene for `seed` and returns its first annotated pair.
pub fn generate_pair(script: &SceneScript, seed: u64) -> Result<AnnotatedPair> {
    build_scene(script, seed)?.pair(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SceneScript {
        let mut s = SceneScript::preset("source").unwrap();
        s.lidar.azimuth_bins = 180;
        s.lidar.elevation_bins = 16;
        s
    }

    #[test]
    fn same_seed_same_scene() {
        let s = base();
        assert_eq!(build_scene(&s, 5).unwrap(), build_scene(&s, 5).unwrap());
        assert_ne!(build_scene(&s, 5).unwrap().entities, build_scene(&s, 6).unwrap().entities);
    }

    #[test]
    fn static_world_static_sensor_has_zero_flow() {
        let mut s = base();
        s.vehicles.count = 0;
        s.sensor.speed = [0.0, 0.0];
        s.sensor.yaw_rate = [0.0, 0.0];
        let pair = generate_pair(&s, 1).unwrap();
        assert!(!pair.first.is_empty());
        assert!(pair.flow.vectors().iter().all(|f| f.norm() == 0.0));
    }

    #[test]
    fn constant_velocity_vehicle_flow() {
        let mut s = base();
        s.props.count = 0;
        s.sensor.speed = [0.0, 0.0];
        s.sensor.yaw_rate = [0.0, 0.0];
        s.vehicles.count = 1;
        s.vehicles.yaw_rate = 0.0;
        s.vehicles.speed = [5.0, 5.0];
        s.vehicles.lanes = vec![1.75];
        s.vehicles.x_range = [10.0, 10.0];
        let pair = generate_pair(&s, 3).unwrap();
        let labels = pair.first.labels().unwrap();
        let mut seen = 0;
        for (f, l) in pair.flow.vectors().iter().zip(labels) {
            if *l == Some(FIRST_OBJECT_ID) {
                seen += 1;
                assert!((f - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
            } else {
                assert_eq!(f.norm(), 0.0);
            }
        }
        assert!(seen > 10);
    }

    #[test]
    fn unicycle_arc() {
        let (p, th) = unicycle(Vec3::zeros(), 0.0, 1.0, std::f64::consts::FRAC_PI_2, 1.0);
        let r = 2.0 / std::f64::consts::PI;
        assert!((p - Vec3::new(r, r, 0.0)).norm() < 1e-12);
        assert!((th - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn embankments_lift_props() {
        let mut s = SceneScript::preset("slope").unwrap();
        s.props.count = 20;
        let scene = build_scene(&s, 2).unwrap();
        let grounds = scene.entities.iter().filter(|e| e.kind == EntityKind::Ground).count();
        assert_eq!(grounds, 3);
        for e in scene.entities.iter().filter(|e| e.kind == EntityKind::StaticProp) {
            let c = e.pose(0).unwrap().translation();
            assert!(c.z >= ground_height(&s, c.y));
        }
    }
}
