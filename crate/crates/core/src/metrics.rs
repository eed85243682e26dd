//! End-point error and accuracy metrics for scene flow.

use crate::error::{Error, Result};
use crate::geom::FlowField;
use serde::{Deserialize, Serialize};

/// Strict accuracy: end-point error below 5 cm ...
pub const STRICT_ABS: f64 = 0.05;
/// ... or relative error below 5%.
pub const STRICT_REL: f64 = 0.05;
pub const RELAX_ABS: f64 = 0.1;
pub const RELAX_REL: f64 = 0.1;
/// Outliers: end-point error above 30 cm or relative error above 10%.
pub const OUTLIER_ABS: f64 = 0.3;
pub const OUTLIER_REL: f64 = 0.1;
/// Floor on the ground-truth norm in the relative error.
pub const REL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    /// Mean end-point error, meters.
    pub epe3d: f64,
    /// Percent of points within the strict thresholds.
    pub acc_strict: f64,
    pub acc_relax: f64,
    pub outliers: f64,
    pub point_count: usize,
}

/// How dataset-level numbers are formed from per-pair metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Unweighted mean over pairs.
    #[default]
    PerPair,
    /// Every point counts once, regardless of its pair.
    Pooled,
}

pub fn evaluate(pred: &FlowField, gt: &FlowField) -> Result<FlowMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut epe = 0.0;
    let (mut strict, mut relax, mut out) = (0usize, 0usize, 0usize);
    for (f, g) in pred.vectors().iter().zip(gt.vectors()) {
        let e = (f - g).norm();
        let r = e / g.norm().max(REL_EPS);
        epe += e;
        strict += usize::from(e < STRICT_ABS || r < STRICT_REL);
        relax += usize::from(e < RELAX_ABS || r < RELAX_REL);
        out += usize::from(e > OUTLIER_ABS || r > OUTLIER_REL);
    }
    let n = gt.len() as f64;
    Ok(FlowMetrics {
        epe3d: epe / n,
        acc_strict: 100.0 * strict as f64 / n,
        acc_relax: 100.0 * relax as f64 / n,
        outliers: 100.0 * out as f64 / n,
        point_count: gt.len(),
    })
}

/// Combines per-pair metrics into one dataset record.
pub fn aggregate(per_pair: &[FlowMetrics], mode: Averaging) -> Result<FlowMetrics> {
    if per_pair.is_empty() {
        return Err(Error::EmptyInput);
    }
    let weight = |m: &FlowMetrics| match mode {
        Averaging::PerPair => 1.0,
        Averaging::Pooled => m.point_count as f64,
    };
    let total: f64 = per_pair.iter().map(weight).sum();
    let mean = |f: fn(&FlowMetrics) -> f64| per_pair.iter().map(|m| weight(m) * f(m)).sum::<f64>() / total;
    Ok(FlowMetrics {
        epe3d: mean(|m| m.epe3d),
        acc_strict: mean(|m| m.acc_strict),
        acc_relax: mean(|m| m.acc_relax),
        outliers: mean(|m| m.outliers),
        point_count: per_pair.iter().map(|m| m.point_count).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;

    #[test]
    fn perfect_prediction() {
        let gt = FlowField::new(vec![Vec3::new(0.1, 0.0, 0.0), Vec3::zeros(), Vec3::new(3.0, 1.0, -1.0)]).unwrap();
        let m = evaluate(&gt, &gt).unwrap();
        assert_eq!((m.epe3d, m.acc_strict, m.acc_relax, m.outliers), (0.0, 100.0, 100.0, 0.0));
    }

    #[test]
    fn two_point_hand_case() {
        let gt = FlowField::new(vec![Vec3::new(10.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)]).unwrap();
        let pred = FlowField::new(vec![Vec3::new(10.04, 0.0, 0.0), Vec3::new(0.0, 1.5, 0.0)]).unwrap();
        let m = evaluate(&pred, &gt).unwrap();
        assert!((m.epe3d - 0.27).abs() < 1e-12);
        assert_eq!((m.acc_strict, m.acc_relax, m.outliers), (50.0, 50.0, 50.0));
    }

    #[test]
    fn static_points_with_motion_are_outliers() {
        let gt = FlowField::zeros(1);
        let pred = FlowField::new(vec![Vec3::new(0.01, 0.0, 0.0)]).unwrap();
        let m = evaluate(&pred, &gt).unwrap();
        // 1 cm absolute error passes the absolute tests but is infinitely large relative.
        assert_eq!((m.acc_strict, m.acc_relax, m.outliers), (100.0, 100.0, 100.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(evaluate(&FlowField::zeros(2), &FlowField::zeros(3)), Err(Error::LengthMismatch { .. })));
        assert!(matches!(evaluate(&FlowField::zeros(0), &FlowField::zeros(0)), Err(Error::EmptyInput)));
    }

    #[test]
    fn pooled_weights_by_points() {
        let a = FlowMetrics { epe3d: 1.0, acc_strict: 0.0, acc_relax: 0.0, outliers: 100.0, point_count: 1 };
        let b = FlowMetrics { epe3d: 0.0, acc_strict: 100.0, acc_relax: 100.0, outliers: 0.0, point_count: 3 };
        assert_eq!(aggregate(&[a, b], Averaging::PerPair).unwrap().epe3d, 0.5);
        assert_eq!(aggregate(&[a, b], Averaging::Pooled).unwrap().epe3d, 0.25);
    }
}
