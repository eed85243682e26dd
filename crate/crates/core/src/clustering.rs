//! DBSCAN segmentation of a frame into rigid-object candidates.

use crate::error::{Error, Result};
use crate::geom::{KnnIndex, PointCloud};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbscanConfig {
    /// Neighborhood radius in meters.
    pub epsilon: f64,
    /// Neighbors (self included) required for a core point.
    pub min_points: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            min_points: 8,
        }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("dbscan epsilon must be > 0".into()));
        }
        if self.min_points < 1 {
            return Err(Error::InvalidConfig("dbscan min_points must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-point cluster assignment; `None` marks noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    assignments: Vec<Option<usize>>,
    cluster_count: usize,
}

impl Clustering {
    /// All points noise.
    pub fn all_noise(n: usize) -> Self {
        Self {
            assignments: vec![None; n],
            cluster_count: 0,
        }
    }

    /// Builds a clustering from raw assignments, renumbering ids to `0..N_c` in
    /// order of first appearance.
    pub fn from_assignments(raw: &[Option<usize>]) -> Self {
        let mut remap = std::collections::BTreeMap::new();
        let mut next = 0;
        let assignments = raw
            .iter()
            .map(|a| {
                a.map(|id| {
                    *remap.entry(id).or_insert_with(|| {
                        next += 1;
                        next - 1
                    })
                })
            })
            .collect();
        Self {
            assignments,
            cluster_count: next,
        }
    }

    pub fn assignments(&self) -> &[Option<usize>] {
        &self.assignments
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn noise_count(&self) -> usize {
        self.assignments.iter().filter(|a| a.is_none()).count()
    }

    /// Member indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, a) in self.assignments.iter().enumerate() {
            if let Some(c) = a {
                out[*c].push(i);
            }
        }
        out
    }
}

/// Density-based clustering with Euclidean, inclusive epsilon-neighborhoods.
///
/// Points are scanned in ascending index order and clusters are expanded
/// breadth-first, so a border point reachable from several clusters joins
/// the one discovered first.
pub fn dbscan(cloud: &PointCloud, cfg: &DbscanConfig) -> Clustering {
    let n = cloud.len();
    let index = KnnIndex::new(cloud.points());
    let points = cloud.points();
    let mut assignments: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut cluster_count = 0;
    let mut neighbors = Vec::new();
    let mut queue = VecDeque::new();

    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        index.within_radius_into(&points[i], cfg.epsilon, &mut neighbors);
        if neighbors.len() < cfg.min_points {
            continue;
        }
        let id = cluster_count;
        cluster_count += 1;
        assignments[i] = Some(id);
        queue.clear();
        queue.extend(neighbors.iter().copied().filter(|&j| j != i));
        while let Some(j) = queue.pop_front() {
            if assignments[j].is_none() {
                assignments[j] = Some(id);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            index.within_radius_into(&points[j], cfg.epsilon, &mut neighbors);
            if neighbors.len() >= cfg.min_points {
                queue.extend(neighbors.iter().copied().filter(|&m| assignments[m].is_none() || !visited[m]));
            }
        }
    }
    Clustering {
        assignments,
        cluster_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;

    fn blob(center: Vec3, count: usize, spacing: f64) -> Vec<Vec3> {
        (0..count)
            .map(|i| center + Vec3::new((i % 5) as f64 * spacing, (i / 5) as f64 * spacing, 0.0))
            .collect()
    }

    #[test]
    fn single_point_is_noise() {
        let cloud = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        let c = dbscan(&cloud, &DbscanConfig { epsilon: 0.5, min_points: 2 });
        assert_eq!(c.assignments(), &[None]);
        assert_eq!(c.cluster_count(), 0);
    }

    #[test]
    fn min_points_one_makes_every_point_a_cluster() {
        let cloud = PointCloud::new(vec![Vec3::zeros(), Vec3::new(5.0, 0.0, 0.0)]).unwrap();
        let c = dbscan(&cloud, &DbscanConfig { epsilon: 0.5, min_points: 1 });
        assert_eq!(c.assignments(), &[Some(0), Some(1)]);
    }

    #[test]
    fn two_separated_blobs() {
        let mut pts = blob(Vec3::zeros(), 20, 0.1);
        pts.extend(blob(Vec3::new(1.4, 0.0, 0.0), 20, 0.1));
        let cloud = PointCloud::new(pts).unwrap();
        let c = dbscan(&cloud, &DbscanConfig { epsilon: 0.3, min_points: 4 });
        assert_eq!(c.cluster_count(), 2);
        assert_eq!(c.noise_count(), 0);
        assert!(c.assignments()[..20].iter().all(|a| *a == Some(0)));
        assert!(c.assignments()[20..].iter().all(|a| *a == Some(1)));
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // Two chains of core points sharing one border point at x = 1.0.
        let mut pts = vec![Vec3::new(1.0, 0.0, 0.0)];
        pts.extend((0..4).map(|i| Vec3::new(0.65 - 0.1 * i as f64, 0.0, 0.0)));
        pts.extend((0..4).map(|i| Vec3::new(1.35 + 0.1 * i as f64, 0.0, 0.0)));
        let cloud = PointCloud::new(pts).unwrap();
        let c = dbscan(&cloud, &DbscanConfig { epsilon: 0.4, min_points: 4 });
        assert_eq!(c.cluster_count(), 2);
        // Border point 0 is scanned first but is not core; cluster 0 is the left chain.
        assert_eq!(c.assignments()[0], Some(0));
        assert_eq!(c.assignments()[1], Some(0));
        assert_eq!(c.assignments()[5], Some(1));
    }

    #[test]
    fn renumbering_is_contiguous() {
        let c = Clustering::from_assignments(&[Some(7), None, Some(3), Some(7)]);
        assert_eq!(c.assignments(), &[Some(0), None, Some(1), Some(0)]);
        assert_eq!(c.cluster_count(), 2);
    }
}
