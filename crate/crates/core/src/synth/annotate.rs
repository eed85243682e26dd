use super::{AnnotatedPair, Entity, SensorPath};
use crate::error::{Error, Result};
use crate::geom::{EntityId, FlowField, PointCloud, RigidMotion, Vec3};
use std::collections::HashMap;

fn index_entities(entities: &[Entity]) -> HashMap<EntityId, &Entity> {
    entities.iter().map(|e| (e.id, e)).collect()
}

/// Entity poses at frames `i` and `i + 1` when the entity moves and is present in both.
fn moving_poses<'a>(e: Option<&&'a Entity>, i: usize) -> Option<(&'a RigidMotion, &'a RigidMotion)> {
    let e = e?;
    if e.is_static() {
        return None;
    }
    Some((e.pose(i)?, e.pose(i + 1)?))
}

/// Annotates ground-truth flow for a scanned pair.
///
/// Points on moving entities present in both frames follow the entity:
/// `f = ((p - P_e) R_e^T R'_e + P'_e) - p` in world coordinates. All other
/// points are held fixed in the world, so their flow is pure ego-motion.
pub fn annotate_pair(
    entities: &[Entity],
    sensor: &SensorPath,
    frame: usize,
    first: PointCloud,
    second: PointCloud,
) -> Result<AnnotatedPair> {
    let labels = first.labels().ok_or(Error::MissingLabels)?;
    let by_id = index_entities(entities);
    let to_world = sensor.pose(frame);
    let to_next = sensor.world_to_lidar(frame + 1);
    let flow = first
        .points()
        .iter()
        .zip(labels)
        .map(|(p, label)| {
            let pw = to_world.apply(p);
            let fw = match moving_poses(label.as_ref().and_then(|id| by_id.get(id)), frame) {
                Some((now, next)) => {
                    (pw - now.translation()) * now.rotation().transpose() * next.rotation() + next.translation() - pw
                }
                None => Vec3::zeros(),
            };
            to_next.apply(&(pw + fw)) - p
        })
        .collect();
    Ok(AnnotatedPair {
        first,
        second,
        flow: FlowField::new(flow)?,
    })
}

/// Frame-`i + 1` sensor-local position of each first-frame point carried
/// rigidly by its entity, or `None` for points on static or vanishing entities.
pub fn entity_consistent_positions(
    entities: &[Entity],
    sensor: &SensorPath,
    frame: usize,
    first: &PointCloud,
) -> Result<Vec<Option<Vec3>>> {
    let labels = first.labels().ok_or(Error::MissingLabels)?;
    let by_id = index_entities(entities);
    Ok(first
        .points()
        .iter()
        .zip(labels)
        .map(|(p, label)| {
            let e = by_id.get(label.as_ref()?)?;
            if e.is_static() {
                return None;
            }
            let carry = sensor
                .pose(frame)
                .then(&e.pose(frame)?.inverse())
                .then(e.pose(frame + 1)?)
                .then(&sensor.world_to_lidar(frame + 1));
            Some(carry.apply(p))
        })
        .collect())
}

/// `F = P - (P - dt F0) (T^s)^-1 T^t`, with the motions applied left to right.
pub fn retrieve_ego_motion(
    points: &PointCloud,
    speed: &FlowField,
    t_s: &RigidMotion,
    t_t: &RigidMotion,
    dt: f64,
) -> Result<FlowField> {
    check_lengths(points, speed)?;
    let m = t_s.inverse().then(t_t);
    let out = points
        .points()
        .iter()
        .zip(speed.vectors())
        .map(|(p, f0)| p - m.apply(&(p - f0 * dt)))
        .collect();
    FlowField::new(out)
}

/// Inverse of [`retrieve_ego_motion`]: the speed field `F0` it maps to `flow`.
pub fn compensate_ego_motion(
    points: &PointCloud,
    flow: &FlowField,
    t_s: &RigidMotion,
    t_t: &RigidMotion,
    dt: f64,
) -> Result<FlowField> {
    check_lengths(points, flow)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig("dt must be > 0".into()));
    }
    let m_inv = t_t.inverse().then(t_s);
    let out = points
        .points()
        .iter()
        .zip(flow.vectors())
        .map(|(p, f)| (p - m_inv.apply(&(p - f))) / dt)
        .collect();
    FlowField::new(out)
}

fn check_lengths(points: &PointCloud, flow: &FlowField) -> Result<()> {
    if points.len() != flow.len() {
        return Err(Error::LengthMismatch {
            expected: points.len(),
            found: flow.len(),
        });
    }
    Ok(())
}
