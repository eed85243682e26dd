//! Exact k-nearest-neighbor and radius queries over a static kd-tree.
//!
//! Results are ordered by ascending distance, ties broken by lower point
//! index, so every query is deterministic.

use super::Vec3;
use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 12;
const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
struct Node {
    start: u32,
    end: u32,
    lo: [f64; 3],
    hi: [f64; 3],
    left: u32,
    right: u32,
}

/// Immutable spatial index over a set of points.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    d2: f64,
    index: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl KnnIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let points: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, points.len(), &mut nodes);
        }
        Self {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> Vec3 {
        let p = self.points[index];
        Vec3::new(p[0], p[1], p[2])
    }

    /// The `min(k, len)` nearest points to `query`.
    pub fn knn(&self, query: &Vec3, k: usize) -> Result<Vec<Neighbor>> {
        let mut out = Vec::with_capacity(k.min(self.len()));
        self.knn_into(query, k, &mut out)?;
        Ok(out)
    }

    /// Like [`knn`](Self::knn) but reuses `out`.
    pub fn knn_into(&self, query: &Vec3, k: usize, out: &mut Vec<Neighbor>) -> Result<()> {
        out.clear();
        if self.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let k = k.min(self.len());
        if k == 0 {
            return Ok(());
        }
        let q = [query.x, query.y, query.z];
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search_knn(0, &q, k, &mut heap);
        let mut found = heap.into_vec();
        found.sort_unstable();
        out.extend(found.into_iter().map(|c| Neighbor {
            index: c.index as usize,
            distance: c.d2.sqrt(),
        }));
        Ok(())
    }

    /// Indices of all points within `radius` (inclusive) of `query`, ascending.
    pub fn within_radius(&self, query: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_radius_into(query, radius, &mut out);
        out
    }

    pub fn within_radius_into(&self, query: &Vec3, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if self.is_empty() {
            return;
        }
        let q = [query.x, query.y, query.z];
        self.search_radius(0, &q, radius * radius, out);
        out.sort_unstable();
    }

    fn search_knn(&self, node: usize, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        let n = &self.nodes[node];
        if n.left == NO_CHILD {
            for &idx in &self.order[n.start as usize..n.end as usize] {
                let cand = Candidate {
                    d2: dist2(&self.points[idx as usize], q),
                    index: idx,
                };
                if heap.len() < k {
                    heap.push(cand);
                } else if cand < *heap.peek().expect("k >= 1") {
                    heap.pop();
                    heap.push(cand);
                }
            }
            return;
        }
        let (l, r) = (n.left as usize, n.right as usize);
        let dl = box_dist2(&self.nodes[l], q);
        let dr = box_dist2(&self.nodes[r], q);
        let (first, d_first, second, d_second) = if dl <= dr { (l, dl, r, dr) } else { (r, dr, l, dl) };
        for (child, d) in [(first, d_first), (second, d_second)] {
            // Equal distance can still win on the index tie-break, so only prune strictly.
            if heap.len() < k || d <= heap.peek().expect("non-empty").d2 {
                self.search_knn(child, q, k, heap);
            }
        }
    }

    fn search_radius(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        let n = &self.nodes[node];
        if box_dist2(n, q) > r2 {
            return;
        }
        if n.left == NO_CHILD {
            for &idx in &self.order[n.start as usize..n.end as usize] {
                if dist2(&self.points[idx as usize], q) <= r2 {
                    out.push(idx as usize);
                }
            }
            return;
        }
        self.search_radius(n.left as usize, q, r2, out);
        self.search_radius(n.right as usize, q, r2, out);
    }
}

fn build(points: &[[f64; 3]], order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<Node>) -> u32 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &order[start..end] {
        let p = &points[i as usize];
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let id = nodes.len() as u32;
    nodes.push(Node {
        start: start as u32,
        end: end as u32,
        lo,
        hi,
        left: NO_CHILD,
        right: NO_CHILD,
    });
    if end - start <= LEAF_SIZE {
        return id;
    }
    let dim = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .expect("three dims");
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a as usize][dim]
            .total_cmp(&points[b as usize][dim])
            .then(a.cmp(&b))
    });
    let left = build(points, order, start, mid, nodes);
    let right = build(points, order, mid, end, nodes);
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    id
}

#[inline]
fn dist2(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let dz = p[2] - q[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn box_dist2(n: &Node, q: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for d in 0..3 {
        let v = if q[d] < n.lo[d] {
            n.lo[d] - q[d]
        } else if q[d] > n.hi[d] {
            q[d] - n.hi[d]
        } else {
            0.0
        };
        s += v * v;
    }
    s
}
