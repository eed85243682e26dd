//! Soft-correspondence flow estimator with a learned matching metric.
//!
//! For each first-frame point `p` the estimator gathers its `candidate_k`
//! nearest second-frame points `q_j`, scores them by
//! `s_j = -|(p - q_j) W|^2 / tau` with a learned `3 x d` embedding `W`, and
//! predicts the softmax-weighted mean offset `sum_j w_j (q_j - p)`.
//! Candidate sets depend only on geometry, so the model is differentiable in
//! `W` and `log tau` everywhere.

use crate::error::{Error, Result};
use crate::geom::{FlowField, KnnIndex, PointCloud, RigidMotion, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Embedding width `d`.
    pub dim: usize,
    pub candidate_k: usize,
    /// Scale of the identity block the embedding starts from.
    pub init_scale: f64,
    pub init_log_temperature: f64,
    pub learning_rate: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            candidate_k: 16,
            init_scale: 1.0,
            init_log_temperature: 0.0,
            learning_rate: 0.05,
            clip_norm: 10.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 || self.candidate_k < 1 {
            return Err(Error::InvalidConfig("estimator dim and candidate_k must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be >= 0 and clip_norm > 0".into()));
        }
        if !self.init_scale.is_finite() || !self.init_log_temperature.is_finite() {
            return Err(Error::InvalidConfig("estimator init values must be finite".into()));
        }
        Ok(())
    }
}

/// Learnable state of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorParams {
    dim: usize,
    /// Row-major `3 x dim`.
    embedding: Vec<f64>,
    log_temperature: f64,
    candidate_k: usize,
}

impl EstimatorParams {
    pub fn new(dim: usize, embedding: Vec<f64>, log_temperature: f64, candidate_k: usize) -> Result<Self> {
        if dim == 0 || candidate_k == 0 {
            return Err(Error::ShapeMismatch("dim and candidate_k must be >= 1".into()));
        }
        if embedding.len() != 3 * dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding has {} entries, expected {}",
                embedding.len(),
                3 * dim
            )));
        }
        if !embedding.iter().all(|v| v.is_finite()) || !log_temperature.is_finite() {
            return Err(Error::NonFinite("estimator parameters".into()));
        }
        Ok(Self {
            dim,
            embedding,
            log_temperature,
            candidate_k,
        })
    }

    /// Scaled identity in the first three columns, zeros elsewhere.
    pub fn init(cfg: &EstimatorConfig) -> Self {
        let mut embedding = vec![0.0; 3 * cfg.dim];
        for r in 0..3.min(cfg.dim) {
            embedding[r * cfg.dim + r] = cfg.init_scale;
        }
        Self {
            dim: cfg.dim,
            embedding,
            log_temperature: cfg.init_log_temperature,
            candidate_k: cfg.candidate_k,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn candidate_k(&self) -> usize {
        self.candidate_k
    }

    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    pub fn log_temperature(&self) -> f64 {
        self.log_temperature
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.embedding.len() + 1
    }

    /// Learnable scalars in a fixed order: embedding entries, then `log tau`.
    pub fn scalars(&self) -> Vec<f64> {
        let mut v = self.embedding.clone();
        v.push(self.log_temperature);
        v
    }

    pub fn set_scalar(&mut self, i: usize, value: f64) {
        if i < self.embedding.len() {
            self.embedding[i] = value;
        } else {
            assert_eq!(i, self.embedding.len(), "scalar index out of range");
            self.log_temperature = value;
        }
    }

    pub fn same_shape(&self, other: &EstimatorParams) -> bool {
        self.dim == other.dim && self.candidate_k == other.candidate_k
    }

    /// Applies `f(self_i, other_i)` entry-wise to build a new parameter set.
    pub fn zip_map(&self, other: &EstimatorParams, f: impl Fn(f64, f64) -> f64) -> Result<EstimatorParams> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "(d={}, k={}) vs (d={}, k={})",
                self.dim, self.candidate_k, other.dim, other.candidate_k
            )));
        }
        Ok(EstimatorParams {
            dim: self.dim,
            embedding: self
                .embedding
                .iter()
                .zip(&other.embedding)
                .map(|(a, b)| f(*a, *b))
                .collect(),
            log_temperature: f(self.log_temperature, other.log_temperature),
            candidate_k: self.candidate_k,
        })
    }

    /// Euclidean distance between two parameter sets viewed as flat vectors.
    pub fn distance(&self, other: &EstimatorParams) -> f64 {
        self.scalars()
            .iter()
            .zip(other.scalars())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// One plain SGD step with global-norm clipping.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64, clip_norm: f64) {
        let norm = grads.norm();
        let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
        for (w, g) in self.embedding.iter_mut().zip(&grads.embedding) {
            *w -= learning_rate * scale * g;
        }
        self.log_temperature -= learning_rate * scale * grads.log_temperature;
    }
}

/// Accumulated derivatives of a loss with respect to [`EstimatorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: Vec<f64>,
    pub log_temperature: f64,
}

impl Gradients {
    pub fn zeros_like(params: &EstimatorParams) -> Self {
        Self {
            embedding: vec![0.0; params.embedding.len()],
            log_temperature: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.embedding.iter().map(|g| g * g).sum::<f64>() + self.log_temperature * self.log_temperature).sqrt()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.embedding.iter_mut().zip(&other.embedding) {
            *a += b;
        }
        self.log_temperature += other.log_temperature;
    }

    pub fn scalars(&self) -> Vec<f64> {
        let mut v = self.embedding.clone();
        v.push(self.log_temperature);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.log_temperature.is_finite() && self.embedding.iter().all(|g| g.is_finite())
    }
}

/// Candidate offsets `q_j - p_i` for every first-frame point.
#[derive(Debug, Clone)]
pub struct Candidates {
    anchors: Vec<Vec3>,
    k: usize,
    offsets: Vec<Vec3>,
}

impl Candidates {
    pub fn gather(first: &[Vec3], second: &KnnIndex, k: usize) -> Result<Self> {
        if first.is_empty() || second.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let k = k.min(second.len());
        let offsets: Vec<Vec3> = first
            .par_iter()
            .map_init(
                || Vec::with_capacity(k),
                |scratch, p| {
                    second.knn_into(p, k, scratch).expect("non-empty index");
                    scratch.iter().map(|nb| second.point(nb.index) - p).collect::<Vec<_>>()
                },
            )
            .flatten()
            .collect();
        Ok(Self {
            anchors: first.to_vec(),
            k,
            offsets,
        })
    }

    pub fn anchors(&self) -> &[Vec3] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Candidates per point (the requested k clamped to the second frame size).
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn offsets_of(&self, i: usize) -> &[Vec3] {
        &self.offsets[i * self.k..(i + 1) * self.k]
    }

    /// The candidate sets of both frames moved by the same rigid motion.
    /// Neighbor sets are invariant under isometries, so no search is needed.
    pub fn transformed(&self, motion: &RigidMotion) -> Self {
        Self {
            anchors: motion.apply_all(&self.anchors),
            k: self.k,
            offsets: self.offsets.iter().map(|o| motion.rotate(o)).collect(),
        }
    }
}

struct PointForward {
    flow: Vec3,
    weights: Vec<f64>,
    sq_dist: Vec<f64>,
    embedded: Vec<f64>,
}

fn forward_point(params: &EstimatorParams, offsets: &[Vec3], keep: bool) -> PointForward {
    let d = params.dim;
    let inv_tau = (-params.log_temperature).exp();
    let mut embedded = vec![0.0; if keep { offsets.len() * d } else { d }];
    let mut sq_dist = vec![0.0; offsets.len()];
    let mut logits = vec![0.0; offsets.len()];
    for (j, o) in offsets.iter().enumerate() {
        let z = if keep {
            &mut embedded[j * d..(j + 1) * d]
        } else {
            &mut embedded[..]
        };
        let w = &params.embedding;
        let mut s = 0.0;
        for c in 0..d {
            let v = o.x * w[c] + o.y * w[d + c] + o.z * w[2 * d + c];
            z[c] = v;
            s += v * v;
        }
        sq_dist[j] = s;
    }
    // Shifting by the smallest distance keeps the tau -> 0 and overflow
    // limits well defined (hard assignment instead of NaN).
    let min = sq_dist.iter().cloned().fold(f64::INFINITY, f64::min);
    for (l, s) in logits.iter_mut().zip(&sq_dist) {
        *l = if *s == min { 0.0 } else { -(s - min) * inv_tau };
    }
    let mut weights: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let flow = offsets
        .iter()
        .zip(&weights)
        .fold(Vec3::zeros(), |acc, (o, w)| acc + o * *w);
    PointForward {
        flow,
        weights,
        sq_dist,
        embedded,
    }
}

/// Flow predicted from precomputed candidates.
pub fn predict_from_candidates(params: &EstimatorParams, cands: &Candidates) -> FlowField {
    let vectors: Vec<Vec3> = (0..cands.len())
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|i| forward_point(params, cands.offsets_of(i), false).flow)
        .collect();
    FlowField::new(vectors).expect("convex combination of finite offsets")
}

/// Flow from `first` towards `second`.
pub fn predict_flow(params: &EstimatorParams, first: &PointCloud, second: &PointCloud) -> Result<FlowField> {
    let index = KnnIndex::new(second.points());
    let cands = Candidates::gather(first.points(), &index, params.candidate_k)?;
    Ok(predict_from_candidates(params, &cands))
}

/// Mean per-point L1 distance between predicted end points and `targets`,
/// with exact gradients.
pub fn loss_and_gradients_from_candidates(
    params: &EstimatorParams,
    cands: &Candidates,
    targets: &[Vec3],
) -> Result<(f64, Gradients)> {
    let n = cands.len();
    if targets.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: targets.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let d = params.dim;
    let inv_tau = (-params.log_temperature).exp();
    let inv_n = 1.0 / n as f64;
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    // Chunk partials are reduced in chunk order, so the result does not
    // depend on the thread count.
    let partials: Vec<(f64, Gradients)> = starts
        .par_iter()
        .map(|&start| {
            let mut loss = 0.0;
            let mut g = Gradients::zeros_like(params);
            for i in start..(start + CHUNK).min(n) {
                let offsets = cands.offsets_of(i);
                let fw = forward_point(params, offsets, true);
                let residual = cands.anchors[i] + fw.flow - targets[i];
                loss += residual.abs().sum();
                let sign = residual.map(signum) * inv_n;
                let a: Vec<f64> = offsets.iter().map(|o| sign.dot(o)).collect();
                let a_bar: f64 = a.iter().zip(&fw.weights).map(|(a, w)| a * w).sum();
                for (j, o) in offsets.iter().enumerate() {
                    let ds = fw.weights[j] * (a[j] - a_bar);
                    if ds == 0.0 {
                        continue;
                    }
                    g.log_temperature += ds * fw.sq_dist[j] * inv_tau;
                    let z = &fw.embedded[j * d..(j + 1) * d];
                    let coef = -2.0 * inv_tau * ds;
                    for c in 0..d {
                        g.embedding[c] += coef * o.x * z[c];
                        g.embedding[d + c] += coef * o.y * z[c];
                        g.embedding[2 * d + c] += coef * o.z * z[c];
                    }
                }
            }
            (loss, g)
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(params);
    for (l, g) in &partials {
        loss += l;
        grads.add_assign(g);
    }
    loss *= inv_n;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss = {loss}")));
    }
    Ok((loss, grads))
}

/// [`loss_and_gradients_from_candidates`] on raw frames.
pub fn loss_and_gradients(
    params: &EstimatorParams,
    first: &PointCloud,
    second: &PointCloud,
    targets: &[Vec3],
) -> Result<(f64, Gradients)> {
    let index = KnnIndex::new(second.points());
    let cands = Candidates::gather(first.points(), &index, params.candidate_k)?;
    loss_and_gradients_from_candidates(params, &cands, targets)
}

fn signum(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Nearest second-frame point minus the first-frame point.
pub fn nn_baseline_flow(first: &PointCloud, second: &PointCloud) -> Result<FlowField> {
    if second.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index = KnnIndex::new(second.points());
    let vectors = first
        .points()
        .par_iter()
        .map(|p| {
            let nb = index.knn(p, 1).expect("non-empty index")[0];
            index.point(nb.index) - p
        })
        .collect();
    FlowField::new(vectors)
}
