use nalgebra::{Quaternion, UnitQuaternion};
use proptest::prelude::*;
use sceneflow_uda::geom::{FlowField, Vec3};
use sceneflow_uda::metrics::{aggregate, evaluate, Averaging, FlowMetrics};

fn flows() -> impl Strategy<Value = (Vec<Vec3>, Vec<Vec3>)> {
    let v = || (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| Vec3::new(x, y, z));
    (1usize..200).prop_flat_map(move |n| (prop::collection::vec(v(), n), prop::collection::vec(v(), n)))
}

/// Straight per-point recount of the metric definitions.
fn recount(pred: &[Vec3], gt: &[Vec3]) -> FlowMetrics {
    let n = gt.len() as f64;
    let mut epe = 0.0;
    let (mut s, mut r, mut o) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        let e = (p - g).norm();
        let rel = e / g.norm().max(1e-9);
        epe += e;
        if e < 0.05 || rel < 0.05 {
            s += 1.0;
        }
        if e < 0.1 || rel < 0.1 {
            r += 1.0;
        }
        if e > 0.3 || rel > 0.1 {
            o += 1.0;
        }
    }
    FlowMetrics {
        epe3d: epe / n,
        acc_strict: 100.0 * s / n,
        acc_relax: 100.0 * r / n,
        outliers: 100.0 * o / n,
        point_count: gt.len(),
    }
}

proptest! {
    #[test]
    fn matches_recount_and_orders_accuracies((pred, gt) in flows()) {
        let m = evaluate(&FlowField::new(pred.clone()).unwrap(), &FlowField::new(gt.clone()).unwrap()).unwrap();
        let want = recount(&pred, &gt);
        prop_assert!((m.epe3d - want.epe3d).abs() < 1e-12);
        prop_assert_eq!((m.acc_strict, m.acc_relax, m.outliers), (want.acc_strict, want.acc_relax, want.outliers));
        prop_assert!(m.acc_strict <= m.acc_relax);
        for v in [m.acc_strict, m.acc_relax, m.outliers] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        prop_assert!(m.epe3d >= 0.0);
    }

    #[test]
    fn invariant_under_global_rotation((pred, gt) in flows(), q in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)) {
        prop_assume!(q.0 * q.0 + q.1 * q.1 + q.2 * q.2 + q.3 * q.3 > 1e-2);
        let r = UnitQuaternion::from_quaternion(Quaternion::new(q.0, q.1, q.2, q.3)).to_rotation_matrix().into_inner();
        let rot = |v: &[Vec3]| FlowField::new(v.iter().map(|x| x * r).collect()).unwrap();
        let a = evaluate(&FlowField::new(pred.clone()).unwrap(), &FlowField::new(gt.clone()).unwrap()).unwrap();
        let b = evaluate(&rot(&pred), &rot(&gt)).unwrap();
        prop_assert!((a.epe3d - b.epe3d).abs() < 1e-12);
        // Threshold decisions can only flip for points within rounding of a threshold.
        for (x, y) in [(a.acc_strict, b.acc_strict), (a.acc_relax, b.acc_relax), (a.outliers, b.outliers)] {
            prop_assert!((x - y).abs() <= 100.0 / gt.len() as f64 + 1e-9);
        }
    }
}

#[test]
fn averaging_modes_differ_only_by_weights() {
    let m = |epe: f64, n: usize| FlowMetrics { epe3d: epe, acc_strict: 0.0, acc_relax: 0.0, outliers: 0.0, point_count: n };
    let rows = [m(0.1, 100), m(0.4, 300)];
    assert!((aggregate(&rows, Averaging::PerPair).unwrap().epe3d - 0.25).abs() < 1e-12);
    assert!((aggregate(&rows, Averaging::Pooled).unwrap().epe3d - 0.325).abs() < 1e-12);
    assert_eq!(aggregate(&rows, Averaging::PerPair).unwrap().point_count, 400);
}
