use super::scene::is_ground_id;
use super::AnnotatedPair;
use crate::error::{Error, Result};
use crate::geom::{PointCloud, UP_AXIS};
use crate::seed::derive_seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundStrategy {
    None,
    /// Drop points whose up coordinate is below the height threshold.
    ByHeight,
    /// Drop points labeled with a ground entity.
    ByEntity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub ground: GroundStrategy,
    pub height_threshold: f64,
    pub max_range: f64,
    pub num_points: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            ground: GroundStrategy::ByEntity,
            height_threshold: 0.3,
            max_range: 60.0,
            num_points: 8192,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.height_threshold.is_finite() || !(self.max_range > 0.0) || self.num_points == 0 {
            return Err(Error::InvalidConfig(
                "preprocess needs a finite height threshold, max_range > 0 and num_points >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Removes ground points; returns the survivors and their original indices.
pub fn remove_ground(cloud: &PointCloud, strategy: GroundStrategy, height_threshold: f64) -> Result<(PointCloud, Vec<usize>)> {
    let keep: Vec<usize> = match strategy {
        GroundStrategy::None => (0..cloud.len()).collect(),
        GroundStrategy::ByHeight => (0..cloud.len())
            .filter(|&i| cloud.points()[i][UP_AXIS] >= height_threshold)
            .collect(),
        GroundStrategy::ByEntity => {
            if cloud.is_empty() {
                return Ok((cloud.clone(), Vec::new()));
            }
            let labels = cloud.labels().ok_or(Error::MissingLabels)?;
            (0..cloud.len())
                .filter(|&i| !labels[i].is_some_and(is_ground_id))
                .collect()
        }
    };
    Ok((cloud.select(&keep), keep))
}

fn frame_indices(cloud: &PointCloud, cfg: &PreprocessConfig, seed: u64) -> Result<Vec<usize>> {
    let (_, kept) = remove_ground(cloud, cfg.ground, cfg.height_threshold)?;
    let in_range: Vec<usize> = kept
        .into_iter()
        .filter(|&i| cloud.points()[i].norm() <= cfg.max_range)
        .collect();
    if in_range.len() <= cfg.num_points {
        return Ok(in_range);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, in_range.len(), cfg.num_points)
        .into_iter()
        .map(|j| in_range[j])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Ground removal, range filter and seeded subsampling of both frames.
/// Also returns the original first-frame index of every surviving point.
pub fn preprocess_indexed(pair: &AnnotatedPair, cfg: &PreprocessConfig, seed: u64) -> Result<(AnnotatedPair, Vec<usize>)> {
    cfg.validate()?;
    let first = frame_indices(&pair.first, cfg, derive_seed(seed, 1))?;
    let second = frame_indices(&pair.second, cfg, derive_seed(seed, 2))?;
    let out = AnnotatedPair {
        first: pair.first.select(&first),
        second: pair.second.select(&second),
        flow: pair.flow.select(&first),
    };
    Ok((out, first))
}

pub fn preprocess(pair: &AnnotatedPair, cfg: &PreprocessConfig, seed: u64) -> Result<AnnotatedPair> {
    preprocess_indexed(pair, cfg, seed).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{FlowField, Vec3};

    fn labeled(points: Vec<Vec3>, labels: Vec<Option<u32>>) -> PointCloud {
        PointCloud::with_labels(points, labels).unwrap()
    }

    #[test]
    fn by_height_keeps_objects() {
        let c = labeled(
            vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.5), Vec3::new(3.0, 0.0, 0.29)],
            vec![Some(0), Some(9), Some(9)],
        );
        let (out, idx) = remove_ground(&c, GroundStrategy::ByHeight, 0.3).unwrap();
        assert_eq!(idx, vec![1]);
        assert_eq!(out.points()[0], Vec3::new(2.0, 0.0, 0.5));
    }

    #[test]
    fn sloped_ground_leaks_by_height_only() {
        // Embankment points above the threshold.
        let c = labeled(
            vec![Vec3::new(5.0, 10.0, 0.6), Vec3::new(5.0, 12.0, 1.2), Vec3::new(5.0, 1.0, 1.0)],
            vec![Some(1), Some(1), Some(9)],
        );
        let (h, _) = remove_ground(&c, GroundStrategy::ByHeight, 0.3).unwrap();
        let (e, idx) = remove_ground(&c, GroundStrategy::ByEntity, 0.3).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(e.len(), 1);
        assert_eq!(idx, vec![2]);
    }

    #[test]
    fn empty_and_unlabeled() {
        let (e, idx) = remove_ground(&PointCloud::empty(), GroundStrategy::ByEntity, 0.3).unwrap();
        assert!(e.is_empty() && idx.is_empty());
        let c = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        assert!(matches!(remove_ground(&c, GroundStrategy::ByEntity, 0.3), Err(Error::MissingLabels)));
    }

    fn pair(n: usize) -> AnnotatedPair {
        let pts: Vec<Vec3> = (0..n).map(|i| Vec3::new(i as f64 * 0.1, 1.0, 1.0)).collect();
        let flow: Vec<Vec3> = (0..n).map(|i| Vec3::new(0.0, i as f64, 0.0)).collect();
        AnnotatedPair {
            first: labeled(pts.clone(), vec![Some(9); n]),
            second: labeled(pts, vec![Some(9); n]),
            flow: FlowField::new(flow).unwrap(),
        }
    }

    #[test]
    fn subsample_is_seeded_and_keeps_flow_aligned() {
        let p = pair(1000);
        let cfg = PreprocessConfig { num_points: 100, ..Default::default() };
        let (a, idx) = preprocess_indexed(&p, &cfg, 4).unwrap();
        let b = preprocess(&p, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.first.len(), 100);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        for (k, &i) in idx.iter().enumerate() {
            assert_eq!(a.flow.vectors()[k].y, i as f64);
            assert_eq!(a.first.points()[k], p.first.points()[i]);
        }
        assert_ne!(preprocess(&p, &cfg, 5).unwrap(), a);
    }

    #[test]
    fn defaults_and_small_clouds() {
        let cfg = PreprocessConfig::default();
        assert_eq!(cfg.num_points, 8192);
        assert_eq!(cfg.max_range, 60.0);
        assert_eq!(cfg.height_threshold, 0.3);
        let p = pair(50);
        assert_eq!(preprocess(&p, &cfg, 0).unwrap().first.len(), 50);
    }

    #[test]
    fn range_cut() {
        let c = labeled(vec![Vec3::new(59.0, 0.0, 1.0), Vec3::new(61.0, 0.0, 1.0)], vec![Some(9); 2]);
        let p = AnnotatedPair { first: c.clone(), second: c, flow: FlowField::zeros(2) };
        let out = preprocess(&p, &PreprocessConfig::default(), 0).unwrap();
        assert_eq!(out.first.len(), 1);
    }
}
