//! Pseudo-label refinement of a teacher's warped frame.
//!
//! Deformation regularization replaces each cluster of the warp by the best
//! rigid motion of its first-frame points. Correspondence refinement then
//! shifts each reconstructed cluster by the mean gap between its Laplacian
//! coordinates in the second frame and in the warp itself.

use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::geom::{kabsch_fit, KnnIndex, PointCloud, RigidMotion, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// First frame displaced by a flow field, index-aligned with that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedCloud(pub Vec<Vec3>);

impl WarpedCloud {
    pub fn points(&self) -> &[Vec3] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrConfig {
    /// Neighbors used for both Laplacian coordinates.
    pub k_neighbors: usize,
}

impl Default for CrConfig {
    fn default() -> Self {
        Self { k_neighbors: 6 }
    }
}

impl CrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors < 1 {
            return Err(Error::InvalidConfig("k_neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

/// Counters for cases the refinement absorbs instead of failing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RefineDiagnostics {
    pub noise_points: usize,
    pub degenerate_clusters: usize,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub warp: WarpedCloud,
    /// One motion per cluster; identity for degenerate clusters.
    pub motions: Vec<RigidMotion>,
    pub diagnostics: RefineDiagnostics,
}

#[derive(Debug, Clone)]
pub struct PseudoLabels {
    /// Refined end points, index-aligned with the first frame.
    pub points: Vec<Vec3>,
    pub motions: Vec<RigidMotion>,
    /// Shared correction added to every member of each cluster.
    pub deltas: Vec<Vec3>,
    pub diagnostics: RefineDiagnostics,
}

impl PseudoLabels {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Fits a rigid motion per cluster from the first frame to the warp and
/// rebuilds the cluster from it.
///
/// Noise points keep their warped position. A cluster whose rotation is not
/// identifiable gets the identity motion; its members fall back to their
/// first-frame positions.
pub fn deformation_regularize(
    first: &PointCloud,
    warp: &WarpedCloud,
    clusters: &Clustering,
) -> Result<Reconstruction> {
    let n = first.len();
    if warp.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: warp.len(),
        });
    }
    if clusters.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: clusters.len(),
        });
    }
    let src = first.points();
    let mut out = warp.0.clone();
    let mut diagnostics = RefineDiagnostics {
        noise_points: clusters.noise_count(),
        degenerate_clusters: 0,
    };
    let members = clusters.members();
    let fits: Vec<Result<RigidMotion>> = members
        .par_iter()
        .map(|idx| {
            let s: Vec<Vec3> = idx.iter().map(|&i| src[i]).collect();
            let t: Vec<Vec3> = idx.iter().map(|&i| warp.0[i]).collect();
            kabsch_fit(&s, &t)
        })
        .collect();
    let mut motions = Vec::with_capacity(members.len());
    for (idx, fit) in members.iter().zip(fits) {
        let motion = match fit {
            Ok(m) => m,
            Err(Error::DegenerateCluster(_)) => {
                diagnostics.degenerate_clusters += 1;
                RigidMotion::identity()
            }
            Err(e) => return Err(e),
        };
        for &i in idx {
            out[i] = motion.apply(&src[i]);
        }
        motions.push(motion);
    }
    Ok(Reconstruction {
        warp: WarpedCloud(out),
        motions,
        diagnostics,
    })
}

/// Mean offset from `warp[j]` to its `k` nearest neighbors within the warp,
/// the point itself excluded.
pub fn laplacian_coordinate_self(warp: &[Vec3], index: &KnnIndex, j: usize, k: usize) -> Result<Vec3> {
    let mut scratch = Vec::with_capacity(k + 1);
    laplacian_self_with(warp, index, j, k, &mut scratch)
}

fn laplacian_self_with(
    warp: &[Vec3],
    index: &KnnIndex,
    j: usize,
    k: usize,
    scratch: &mut Vec<crate::geom::Neighbor>,
) -> Result<Vec3> {
    if warp.len() < 2 {
        return Err(Error::EmptyNeighborhood);
    }
    let p = warp[j];
    index.knn_into(&p, k + 1, scratch)?;
    let mut sum = Vec3::zeros();
    let mut count = 0usize;
    for nb in scratch.iter().filter(|nb| nb.index != j).take(k) {
        sum += index.point(nb.index) - p;
        count += 1;
    }
    Ok(sum / count as f64)
}

/// Mean offset from `p` to its `k` nearest neighbors in the second frame.
pub fn laplacian_coordinate_cross(p: &Vec3, second: &KnnIndex, k: usize) -> Result<Vec3> {
    let mut scratch = Vec::with_capacity(k);
    laplacian_cross_with(p, second, k, &mut scratch)
}

fn laplacian_cross_with(
    p: &Vec3,
    second: &KnnIndex,
    k: usize,
    scratch: &mut Vec<crate::geom::Neighbor>,
) -> Result<Vec3> {
    second.knn_into(p, k, scratch)?;
    let sum = scratch
        .iter()
        .fold(Vec3::zeros(), |acc, nb| acc + (second.point(nb.index) - p));
    Ok(sum / scratch.len() as f64)
}

/// Shifts every reconstructed cluster by the mean of `L2 - L1` over its members.
pub fn correspondence_refine(
    reconstructed: &Reconstruction,
    clusters: &Clustering,
    second: &PointCloud,
    cfg: &CrConfig,
) -> Result<PseudoLabels> {
    let second_index = KnnIndex::new(second.points());
    correspondence_refine_indexed(reconstructed, clusters, &second_index, cfg)
}

/// [`correspondence_refine`] against a prebuilt index over the second frame.
pub fn correspondence_refine_indexed(
    reconstructed: &Reconstruction,
    clusters: &Clustering,
    second: &KnnIndex,
    cfg: &CrConfig,
) -> Result<PseudoLabels> {
    cfg.validate()?;
    let warp = reconstructed.warp.points();
    if clusters.len() != warp.len() {
        return Err(Error::LengthMismatch {
            expected: warp.len(),
            found: clusters.len(),
        });
    }
    if second.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let k = cfg.k_neighbors;
    let warp_index = KnnIndex::new(warp);
    let gaps: Vec<Option<Vec3>> = (0..warp.len())
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(k + 1),
            |scratch, j| -> Result<Option<Vec3>> {
                if clusters.assignments()[j].is_none() {
                    return Ok(None);
                }
                let l1 = laplacian_self_with(warp, &warp_index, j, k, scratch)?;
                let l2 = laplacian_cross_with(&warp[j], second, k, scratch)?;
                Ok(Some(l2 - l1))
            },
        )
        .collect::<Result<_>>()?;

    let mut sums = vec![Vec3::zeros(); clusters.cluster_count()];
    let mut counts = vec![0usize; clusters.cluster_count()];
    for (a, gap) in clusters.assignments().iter().zip(&gaps) {
        if let (Some(c), Some(g)) = (a, gap) {
            sums[*c] += g;
            counts[*c] += 1;
        }
    }
    let deltas: Vec<Vec3> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { Vec3::zeros() } else { s / c as f64 })
        .collect();
    let points = warp
        .iter()
        .zip(clusters.assignments())
        .map(|(p, a)| match a {
            Some(c) => p + deltas[*c],
            None => *p,
        })
        .collect();
    Ok(PseudoLabels {
        points,
        motions: reconstructed.motions.clone(),
        deltas,
        diagnostics: reconstructed.diagnostics,
    })
}
