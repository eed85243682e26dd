use super::{centroid, Mat3, RigidMotion, Vec3};
use crate::error::{Error, Result};
use nalgebra::{SymmetricEigen, SVD};

/// Spread (RMS along a principal axis, meters) below which a direction is
/// considered collapsed.
const COLLAPSE_TOL: f64 = 1e-12;

/// Least-squares rigid motion taking `source[i]` onto `target[i]`:
/// minimizes `sum |source[i] * R + t - target[i]|^2` with `det(R) = +1`.
///
/// The covariance `H = sum s_i^T t_i` of the centered sets is decomposed as
/// `U S V^T`; the rotation is `U D V^T` where `D` flips the axis of the
/// smallest singular value when `U V^T` would be a reflection.
pub fn kabsch_fit(source: &[Vec3], target: &[Vec3]) -> Result<RigidMotion> {
    if source.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: source.len(),
            found: target.len(),
        });
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::DegenerateCluster("fewer than three points"));
    }
    let mu_s = centroid(source).expect("non-empty");
    let mu_t = centroid(target).expect("non-empty");

    let mut h = Mat3::zeros();
    let mut spread = Mat3::zeros();
    for (s, t) in source.iter().zip(target) {
        let sc = s - mu_s;
        let tc = t - mu_t;
        h += sc.transpose() * tc;
        spread += sc.transpose() * sc;
    }

    let mut eig = SymmetricEigen::new(spread / n as f64).eigenvalues;
    eig.as_mut_slice()
        .sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let major = eig[0].max(0.0).sqrt();
    let minor = eig[1].max(0.0).sqrt();
    if minor <= COLLAPSE_TOL * (1.0 + major) {
        return Err(Error::DegenerateCluster(
            "source points are collinear or coincident",
        ));
    }

    let svd = SVD::new(h, true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut rotation = u * v_t;
    if rotation.determinant() < 0.0 {
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .expect("three singular values");
        let mut d = Mat3::identity();
        d[(smallest, smallest)] = -1.0;
        rotation = u * d * v_t;
    }
    let translation = mu_t - mu_s * rotation;
    Ok(RigidMotion::new_unchecked(rotation, translation))
}

/// Root-mean-square residual of `motion` mapping `source` onto `target`.
pub fn rmsd(source: &[Vec3], target: &[Vec3], motion: &RigidMotion) -> f64 {
    assert_eq!(source.len(), target.len());
    if source.is_empty() {
        return 0.0;
    }
    let sq: f64 = source
        .iter()
        .zip(target)
        .map(|(s, t)| (motion.apply(s) - t).norm_squared())
        .sum();
    (sq / source.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn generic_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> RigidMotion {
        // Uniform rotation from a normalized Gaussian quaternion.
        let g = Normal::new(0.0, 1.0).unwrap();
        let q = nalgebra::Quaternion::new(g.sample(rng), g.sample(rng), g.sample(rng), g.sample(rng));
        let r = nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        RigidMotion::new_unchecked(r.matrix().transpose(), Vec3::zeros())
    }

    #[test]
    fn identical_sets_give_identity() {
        let src = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.2, 0.0),
            Vec3::new(0.3, 1.0, 0.4),
            Vec3::new(-0.5, 0.1, 1.2),
        ];
        let m = kabsch_fit(&src, &src).unwrap();
        assert!(m.max_abs_diff(&RigidMotion::identity()) < 1e-12);
    }

    #[test]
    fn recovers_yaw_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = generic_points(&mut rng, 5);
        let truth = RigidMotion::yaw(30f64.to_radians()).then(&RigidMotion::from_translation(Vec3::new(1.0, 2.0, 3.0)));
        let dst = truth.apply_all(&src);
        let fit = kabsch_fit(&src, &dst).unwrap();
        assert!(fit.max_abs_diff(&truth) < 1e-9);
    }

    #[test]
    fn reflection_is_corrected_on_planar_input() {
        // Planar source mapped by a mirror: best proper rotation must still have det +1.
        let src = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.5, 2.0, 0.0),
        ];
        let dst: Vec<Vec3> = src.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let fit = kabsch_fit(&src, &dst).unwrap();
        assert!((fit.rotation().determinant() - 1.0).abs() < 1e-9);
        assert!(RigidMotion::new(*fit.rotation(), *fit.translation()).is_ok());
        assert!(rmsd(&src, &dst, &fit) < 1e-9, "planar mirror is reachable by a proper rotation");
    }

    #[test]
    fn rejects_degenerate_sources() {
        let two = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        assert!(matches!(kabsch_fit(&two, &two), Err(Error::DegenerateCluster(_))));
        let line: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(kabsch_fit(&line, &line), Err(Error::DegenerateCluster(_))));
        let same = vec![Vec3::new(1.0, 1.0, 1.0); 4];
        assert!(matches!(kabsch_fit(&same, &same), Err(Error::DegenerateCluster(_))));
    }

    #[test]
    fn noisy_fit_beats_sampled_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let src = generic_points(&mut rng, 20);
        let truth = random_rotation(&mut rng).then(&RigidMotion::from_translation(Vec3::new(0.5, -1.0, 2.0)));
        let dst: Vec<Vec3> = truth
            .apply_all(&src)
            .into_iter()
            .map(|p| p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        let fitted = rmsd(&src, &dst, &kabsch_fit(&src, &dst).unwrap());
        let mu_s = centroid(&src).unwrap();
        let mu_t = centroid(&dst).unwrap();
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            // Optimal translation for a fixed rotation aligns the centroids.
            let cand = RigidMotion::new_unchecked(*r.rotation(), mu_t - mu_s * r.rotation());
            assert!(fitted <= rmsd(&src, &dst, &cand) + 1e-15);
        }
    }
}
