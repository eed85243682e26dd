//! Mean-teacher adaptation: EMA teacher, asymmetric rotation of the first
//! target frame, and end-point consistency against refined pseudo-labels.

use crate::clustering::{dbscan, Clustering, DbscanConfig};
use crate::error::{Error, Result};
use crate::estimator::{
    loss_and_gradients_from_candidates, predict_from_candidates, Candidates, EstimatorConfig, EstimatorParams,
};
use crate::geom::{FlowField, KnnIndex, PointCloud, RigidMotion, Vec3};
use crate::pseudo_label::{
    correspondence_refine_indexed, deformation_regularize, CrConfig, PseudoLabels, RefineDiagnostics, WarpedCloud,
};
use crate::seed::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const ADAPT_STREAM: u64 = 0xADA9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmaConfig {
    pub alpha: f64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self { alpha: 0.999 }
    }
}

impl EmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig("ema alpha must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `alpha * teacher + (1 - alpha) * student`, entry by entry.
pub fn ema_update(teacher: &EstimatorParams, student: &EstimatorParams, cfg: &EmaConfig) -> Result<EstimatorParams> {
    let a = cfg.alpha;
    teacher.zip_map(student, |t, s| a * t + (1.0 - a) * s)
}

/// How the student's view of a target pair is transformed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformMode {
    /// Rotate the first frame; compare against rotated pseudo-labels.
    Reconciled,
    /// Rotate the first frame; compare against the pseudo-labels as built.
    Literal,
    /// Rotate both frames and the pseudo-labels.
    Symmetric,
}

/// A rotation about the up axis through the sensor origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymTransform {
    pub angle: f64,
}

impl AsymTransform {
    /// Uniform angle in `[-max_angle, max_angle]` radians.
    pub fn sample(rng: &mut impl Rng, max_angle: f64) -> Self {
        let angle = if max_angle > 0.0 {
            rng.random_range(-max_angle..=max_angle)
        } else {
            0.0
        };
        Self { angle }
    }

    pub fn motion(&self) -> RigidMotion {
        RigidMotion::yaw(self.angle)
    }
}

/// Rotates the first frame and passes the second through untouched.
pub fn asymmetric_transform<'a>(
    first: &PointCloud,
    second: &'a PointCloud,
    t: &AsymTransform,
) -> (PointCloud, &'a PointCloud) {
    (t.motion().apply_cloud(first), second)
}

/// Teacher warp, then rigid reconstruction, then correspondence refinement.
pub fn epc_loss_targets(
    first: &PointCloud,
    teacher_flow: &FlowField,
    clusters: &Clustering,
    second: &PointCloud,
    cr_cfg: &CrConfig,
) -> Result<PseudoLabels> {
    epc_loss_targets_indexed(first, teacher_flow, clusters, &KnnIndex::new(second.points()), cr_cfg)
}

pub fn epc_loss_targets_indexed(
    first: &PointCloud,
    teacher_flow: &FlowField,
    clusters: &Clustering,
    second: &KnnIndex,
    cr_cfg: &CrConfig,
) -> Result<PseudoLabels> {
    if teacher_flow.len() != first.len() {
        return Err(Error::LengthMismatch {
            expected: first.len(),
            found: teacher_flow.len(),
        });
    }
    let warp = WarpedCloud(teacher_flow.warp(first.points()));
    let rec = deformation_regularize(first, &warp, clusters)?;
    correspondence_refine_indexed(&rec, clusters, second, cr_cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub ema: EmaConfig,
    pub cr: CrConfig,
    /// Half-width of the uniform rotation range, degrees.
    pub rotation_range_deg: f64,
    pub mode: TransformMode,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            ema: EmaConfig::default(),
            cr: CrConfig::default(),
            rotation_range_deg: 15.0,
            mode: TransformMode::Reconciled,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        self.ema.validate()?;
        self.cr.validate()?;
        if !(self.rotation_range_deg >= 0.0 && self.rotation_range_deg <= 180.0) {
            return Err(Error::InvalidConfig("rotation_range_deg must lie in [0, 180]".into()));
        }
        Ok(())
    }
}

/// A labeled source pair with its candidate sets precomputed.
#[derive(Debug, Clone)]
pub struct SourceBatch {
    cands: Candidates,
    targets: Vec<Vec3>,
}

impl SourceBatch {
    pub fn new(first: &PointCloud, second: &PointCloud, flow: &FlowField, candidate_k: usize) -> Result<Self> {
        if flow.len() != first.len() {
            return Err(Error::LengthMismatch {
                expected: first.len(),
                found: flow.len(),
            });
        }
        let index = KnnIndex::new(second.points());
        Ok(Self {
            cands: Candidates::gather(first.points(), &index, candidate_k)?,
            targets: flow.warp(first.points()),
        })
    }

    pub fn candidates(&self) -> &Candidates {
        &self.cands
    }

    /// Ground-truth end points.
    pub fn targets(&self) -> &[Vec3] {
        &self.targets
    }
}

/// An unlabeled target pair with everything that does not depend on the
/// parameters precomputed: first-frame clusters, the second-frame index and
/// the teacher's candidate sets.
#[derive(Debug, Clone)]
pub struct TargetBatch {
    first: PointCloud,
    clusters: Clustering,
    second_index: KnnIndex,
    cands: Candidates,
}

impl TargetBatch {
    pub fn new(first: &PointCloud, second: &PointCloud, dbscan_cfg: &DbscanConfig, candidate_k: usize) -> Result<Self> {
        let second_index = KnnIndex::new(second.points());
        let cands = Candidates::gather(first.points(), &second_index, candidate_k)?;
        Ok(Self {
            first: first.clone(),
            clusters: dbscan(first, dbscan_cfg),
            second_index,
            cands,
        })
    }

    pub fn first(&self) -> &PointCloud {
        &self.first
    }

    pub fn clusters(&self) -> &Clustering {
        &self.clusters
    }

    pub fn candidates(&self) -> &Candidates {
        &self.cands
    }

    pub fn pseudo_labels(&self, teacher: &EstimatorParams, cr: &CrConfig) -> Result<PseudoLabels> {
        let flow = predict_from_candidates(teacher, &self.cands);
        epc_loss_targets_indexed(&self.first, &flow, &self.clusters, &self.second_index, cr)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTallies {
    pub source_sum: f64,
    pub epc_sum: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub student: EstimatorParams,
    pub teacher: EstimatorParams,
    pub step: u64,
    pub seed: u64,
    pub tallies: LossTallies,
}

impl TrainState {
    /// Student and teacher both start from `params`.
    pub fn new(params: EstimatorParams, seed: u64) -> Self {
        Self {
            teacher: params.clone(),
            student: params,
            step: 0,
            seed,
            tallies: LossTallies::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub step: u64,
    pub l_source: f64,
    pub l_epc: f64,
    pub l_stu: f64,
    pub angle: f64,
    pub diagnostics: RefineDiagnostics,
}

/// Seeded stream for the randomness of one adaptation step.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, ADAPT_STREAM), step))
}

/// One supervised step on a source pair. Returns the loss before the update.
pub fn pretrain_step(params: &mut EstimatorParams, source: &SourceBatch, cfg: &EstimatorConfig) -> Result<f64> {
    let (loss, grads) = loss_and_gradients_from_candidates(params, &source.cands, &source.targets)?;
    params.sgd_step(&grads, cfg.learning_rate, cfg.clip_norm);
    Ok(loss)
}

/// One adaptation step. On error the state is left untouched.
pub fn adapt_step(
    state: &mut TrainState,
    source: &SourceBatch,
    target: &TargetBatch,
    est: &EstimatorConfig,
    cfg: &AdaptConfig,
) -> Result<StepReport> {
    let mut rng = step_rng(state.seed, state.step);
    let transform = AsymTransform::sample(&mut rng, cfg.rotation_range_deg.to_radians());
    let student = &state.student;
    let teacher = &state.teacher;

    let (source_part, pseudo) = rayon::join(
        || loss_and_gradients_from_candidates(student, &source.cands, &source.targets),
        || target.pseudo_labels(teacher, &cfg.cr),
    );
    let (l_source, mut grads) = source_part.map_err(|e| with_context(e, state.step, "source"))?;
    let pseudo = pseudo?;

    let rot = transform.motion();
    let (cands, targets) = match cfg.mode {
        TransformMode::Reconciled => (
            Candidates::gather(&rot.apply_all(target.first.points()), &target.second_index, student.candidate_k())?,
            rot.apply_all(&pseudo.points),
        ),
        TransformMode::Literal => (
            Candidates::gather(&rot.apply_all(target.first.points()), &target.second_index, student.candidate_k())?,
            pseudo.points.clone(),
        ),
        TransformMode::Symmetric => (target.cands.transformed(&rot), rot.apply_all(&pseudo.points)),
    };
    let (l_epc, g_epc) =
        loss_and_gradients_from_candidates(student, &cands, &targets).map_err(|e| with_context(e, state.step, "epc"))?;
    grads.add_assign(&g_epc);
    let l_stu = l_source + l_epc;
    if !l_stu.is_finite() || !grads.is_finite() {
        return Err(with_context(Error::NonFiniteLoss(format!("l_stu = {l_stu}")), state.step, "total"));
    }

    let mut next_student = student.clone();
    next_student.sgd_step(&grads, est.learning_rate, est.clip_norm);
    let next_teacher = ema_update(teacher, &next_student, &cfg.ema)?;

    let report = StepReport {
        step: state.step,
        l_source,
        l_epc,
        l_stu,
        angle: transform.angle,
        diagnostics: pseudo.diagnostics,
    };
    state.student = next_student;
    state.teacher = next_teacher;
    state.step += 1;
    state.tallies.source_sum += l_source;
    state.tallies.epc_sum += l_epc;
    state.tallies.steps += 1;
    Ok(report)
}

fn with_context(e: Error, step: u64, term: &str) -> Error {
    match e {
        Error::NonFiniteLoss(m) => Error::NonFiniteLoss(format!("step {step}, {term} term: {m}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::predict_flow;

    fn params(seed: u64) -> EstimatorParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = EstimatorParams::init(&EstimatorConfig { dim: 4, candidate_k: 6, ..Default::default() });
        for i in 0..p.num_scalars() {
            let v = p.scalars()[i] + rng.random_range(-0.5..0.5);
            p.set_scalar(i, v);
        }
        p
    }

    fn blob(rng: &mut ChaCha8Rng, centre: Vec3, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| centre + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.5)))
            .collect()
    }

    fn scene(seed: u64) -> (PointCloud, PointCloud, FlowField) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut first = blob(&mut rng, Vec3::new(5.0, 0.0, 0.0), 150);
        first.extend(blob(&mut rng, Vec3::new(-4.0, 6.0, 0.0), 150));
        let shift = Vec3::new(0.1, 0.05, 0.0);
        let second: Vec<Vec3> = first.iter().map(|p| p + shift).collect();
        let flow = FlowField::new(vec![shift; first.len()]).unwrap();
        (PointCloud::new(first).unwrap(), PointCloud::new(second).unwrap(), flow)
    }

    #[test]
    fn ema_limits_and_contraction() {
        let t0 = params(1);
        let s = params(2);
        assert_eq!(ema_update(&t0, &s, &EmaConfig { alpha: 0.0 }).unwrap(), s);
        assert_eq!(ema_update(&t0, &s, &EmaConfig { alpha: 1.0 }).unwrap(), t0);
        let cfg = EmaConfig { alpha: 0.9 };
        let mut t = t0.clone();
        for n in 1..=20 {
            t = ema_update(&t, &s, &cfg).unwrap();
            let expect = 0.9f64.powi(n) * t0.distance(&s);
            assert!((t.distance(&s) - expect).abs() < 1e-9);
        }
        assert!(EmaConfig { alpha: 1.5 }.validate().is_err());
    }

    #[test]
    fn asymmetric_transform_properties() {
        let (a, b, _) = scene(3);
        let (same, second) = asymmetric_transform(&a, &b, &AsymTransform { angle: 0.0 });
        assert_eq!(same, a);
        assert!(std::ptr::eq(second, &b));
        let (r, _) = asymmetric_transform(&a, &b, &AsymTransform { angle: 0.2 });
        let (back, _) = asymmetric_transform(&r, &b, &AsymTransform { angle: -0.2 });
        for (p, q) in back.points().iter().zip(a.points()) {
            assert!((p - q).norm() < 1e-12);
        }
        let d0 = (a.points()[3] - a.points()[77]).norm();
        let d1 = (r.points()[3] - r.points()[77]).norm();
        assert!((d0 - d1).abs() < 1e-12);
    }

    #[test]
    fn sampled_angles_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let t = AsymTransform::sample(&mut rng, 0.25);
            assert!(t.angle.abs() <= 0.25);
        }
        assert_eq!(AsymTransform::sample(&mut rng, 0.0).angle, 0.0);
    }

    #[test]
    fn zero_flow_on_identical_frames_stays_put() {
        let (a, _, _) = scene(4);
        let clusters = dbscan(&a, &DbscanConfig::default());
        let out = epc_loss_targets(&a, &FlowField::zeros(a.len()), &clusters, &a, &CrConfig::default()).unwrap();
        assert_eq!(out.len(), a.len());
        // L1 skips the query point while L2 may match it, so clusters can
        // shift by a fraction of the sampling spacing but never more.
        for (i, (p, q)) in out.points.iter().zip(a.points()).enumerate() {
            match clusters.assignments()[i] {
                None => assert_eq!(p, q),
                Some(_) => assert!((p - q).norm() < 0.05),
            }
        }
    }

    #[test]
    fn epc_loss_vanishes_on_rotated_pseudo_labels() {
        let (a, b, _) = scene(5);
        let p = params(6);
        let rot = AsymTransform { angle: 0.1 }.motion();
        let rotated = rot.apply_cloud(&a);
        let pred = predict_flow(&p, &rotated, &b).unwrap();
        // Pseudo-labels whose rotation equals the student's warp.
        let student_warp = pred.warp(rotated.points());
        let pseudo: Vec<Vec3> = rot.inverse().apply_all(&student_warp);
        let targets = rot.apply_all(&pseudo);
        let index = KnnIndex::new(b.points());
        let cands = Candidates::gather(rotated.points(), &index, p.candidate_k()).unwrap();
        let (loss, _) = loss_and_gradients_from_candidates(&p, &cands, &targets).unwrap();
        assert!(loss < 1e-12);
    }

    fn run(mode: TransformMode, alpha: f64, steps: usize) -> (TrainState, Vec<StepReport>) {
        let (a, b, f) = scene(7);
        let est = EstimatorConfig { dim: 4, candidate_k: 6, ..Default::default() };
        let source = SourceBatch::new(&a, &b, &f, 6).unwrap();
        let target = TargetBatch::new(&a, &b, &DbscanConfig::default(), 6).unwrap();
        let cfg = AdaptConfig { ema: EmaConfig { alpha }, mode, ..Default::default() };
        let mut state = TrainState::new(params(8), 11);
        let reports = (0..steps)
            .map(|_| adapt_step(&mut state, &source, &target, &est, &cfg).unwrap())
            .collect();
        (state, reports)
    }

    #[test]
    fn teacher_moves_only_through_ema() {
        let (state, _) = run(TransformMode::Reconciled, 1.0, 3);
        assert_eq!(state.teacher, params(8));
        assert_ne!(state.student, params(8));
    }

    #[test]
    fn losses_add_and_tally() {
        let (state, reports) = run(TransformMode::Literal, 0.99, 4);
        for r in &reports {
            assert!((r.l_stu - (r.l_source + r.l_epc)).abs() <= 1e-12);
        }
        assert_eq!(state.step, 4);
        assert_eq!(state.tallies.steps, 4);
        let s: f64 = reports.iter().map(|r| r.l_source).sum();
        assert!((state.tallies.source_sum - s).abs() < 1e-12);
    }

    #[test]
    fn trajectories_are_reproducible() {
        for mode in [TransformMode::Reconciled, TransformMode::Literal, TransformMode::Symmetric] {
            let (a, ra) = run(mode, 0.999, 3);
            let (b, rb) = run(mode, 0.999, 3);
            assert_eq!(a, b);
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn non_finite_loss_leaves_state_untouched() {
        let (a, b, f) = scene(9);
        let est = EstimatorConfig { dim: 4, candidate_k: 6, ..Default::default() };
        let source = SourceBatch::new(&a, &b, &f, 6).unwrap();
        let target = TargetBatch::new(&a, &b, &DbscanConfig::default(), 6).unwrap();
        let mut bad = params(8);
        bad.set_scalar(0, 1e300);
        let mut state = TrainState::new(bad, 1);
        let before = state.clone();
        let err = adapt_step(&mut state, &source, &target, &est, &AdaptConfig::default());
        assert!(matches!(err, Err(Error::NonFiniteLoss(_))), "{err:?}");
        assert_eq!(state, before);
    }
}
