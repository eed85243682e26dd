use proptest::prelude::*;
use sceneflow_uda::clustering::{dbscan, DbscanConfig};
use sceneflow_uda::geom::{PointCloud, RigidMotion, Vec3};

fn blobs() -> impl Strategy<Value = Vec<Vec3>> {
    let blob = ((-20.0f64..20.0, -20.0f64..20.0, -2.0f64..2.0), prop::collection::vec((-0.6f64..0.6, -0.6f64..0.6, -0.6f64..0.6), 1..40));
    prop::collection::vec(blob, 1..6).prop_map(|bs| {
        bs.into_iter()
            .flat_map(|((cx, cy, cz), offs)| offs.into_iter().map(move |(x, y, z)| Vec3::new(cx + x, cy + y, cz + z)))
            .collect()
    })
}

fn config() -> impl Strategy<Value = DbscanConfig> {
    (0.1f64..0.8, 1usize..10).prop_map(|(epsilon, min_points)| DbscanConfig { epsilon, min_points })
}

fn neighbor_count(pts: &[Vec3], i: usize, eps: f64) -> usize {
    pts.iter().filter(|q| (*q - pts[i]).norm() <= eps).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_and_density(pts in blobs(), cfg in config()) {
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let c = dbscan(&cloud, &cfg);
        prop_assert_eq!(c.len(), pts.len());
        let members = c.members();
        prop_assert_eq!(members.len(), c.cluster_count());
        // Every point belongs to at most one cluster; assigned points appear exactly once.
        let mut seen = vec![0usize; pts.len()];
        for m in &members {
            for &i in m {
                seen[i] += 1;
            }
        }
        for (i, a) in c.assignments().iter().enumerate() {
            prop_assert_eq!(seen[i], usize::from(a.is_some()));
        }
        prop_assert_eq!(c.noise_count(), seen.iter().filter(|&&s| s == 0).count());
        // Brute-force density checks.
        let core: Vec<bool> = (0..pts.len()).map(|i| neighbor_count(&pts, i, cfg.epsilon) >= cfg.min_points).collect();
        for m in &members {
            prop_assert!(m.iter().any(|&i| core[i]), "cluster without a core point");
        }
        for i in 0..pts.len() {
            if core[i] {
                prop_assert!(c.assignments()[i].is_some(), "core point marked noise");
                for j in 0..pts.len() {
                    if core[j] && (pts[i] - pts[j]).norm() <= cfg.epsilon {
                        prop_assert_eq!(c.assignments()[i], c.assignments()[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_and_rigid_invariant(pts in blobs(), cfg in config(), yaw in -3.0f64..3.0, t in (-50.0f64..50.0, -50.0f64..50.0)) {
        let cloud = PointCloud::new(pts).unwrap();
        let a = dbscan(&cloud, &cfg);
        prop_assert_eq!(&a, &dbscan(&cloud, &cfg));
        let m = RigidMotion::from_axis_angle(Vec3::new(0.3, 0.2, 1.0).normalize(), yaw, Vec3::new(t.0, t.1, 1.0));
        let moved = dbscan(&m.apply_cloud(&cloud), &cfg);
        prop_assert_eq!(a.assignments(), moved.assignments());
    }
}
