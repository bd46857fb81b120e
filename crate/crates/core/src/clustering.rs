//! DBSCAN over grid fixation points and the adaptive clustering policy.
//!
//! Distances are Euclidean on the unit square: each axis difference is
//! `(a - b) / 1000`. A point is core when its closed ε-ball (itself included)
//! holds at least `min_pts` points. Clusters are numbered in the order their
//! first core point appears in the input; a border point joins the first
//! cluster that reaches it.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::geometry::{GridPoint, GRID_EXTENT};
use crate::FixationSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Neighborhood radius on the unit square.
    pub eps: f64,
    pub min_pts: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterResult {
    /// Member indices per cluster, ascending within each cluster.
    pub clusters: Vec<Vec<usize>>,
    /// Indices that belong to no cluster, ascending.
    pub noise: Vec<usize>,
    pub centroids: Vec<GridPoint>,
}

/// Thresholds for [`adaptive_cluster`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterPolicy {
    /// Scenes with fewer raw points than this are passed through untouched.
    pub skip_below: usize,
    pub base: DbscanParams,
    pub strict: DbscanParams,
    /// Switch to `strict` when the base run yields more centroids than this.
    pub strict_above: usize,
}

impl Default for ClusterPolicy {
    fn default() -> Self {
        Self {
            skip_below: 100,
            base: DbscanParams { eps: 0.04, min_pts: 1 },
            strict: DbscanParams { eps: 0.04, min_pts: 2 },
            strict_above: 200,
        }
    }
}

/// Axis difference on the unit square.
#[inline]
pub fn unit_delta(a: f64, b: f64) -> f64 {
    (a - b) / GRID_EXTENT
}

#[inline]
fn unit_dist2(a: &GridPoint, b: &GridPoint) -> f64 {
    let dx = unit_delta(a.gx, b.gx);
    let dy = unit_delta(a.gy, b.gy);
    dx * dx + dy * dy
}

/// Uniform hash over the unit square with cells slightly wider than ε, so
/// every ε-neighbor sits in the 3×3 block around a point's cell.
struct SpatialHash {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialHash {
    fn new(points: &[GridPoint], eps: f64) -> Self {
        let cell = eps * (1.0 + 1e-9);
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(p: &GridPoint, cell: f64) -> (i64, i64) {
        (
            (p.gx / GRID_EXTENT / cell).floor() as i64,
            (p.gy / GRID_EXTENT / cell).floor() as i64,
        )
    }

    fn neighbors(&self, points: &[GridPoint], i: usize, eps2: f64, out: &mut Vec<usize>) {
        out.clear();
        let (cx, cy) = Self::key(&points[i], self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy)) {
                    out.extend(
                        bucket
                            .iter()
                            .copied()
                            .filter(|&j| unit_dist2(&points[i], &points[j]) <= eps2),
                    );
                }
            }
        }
    }
}

const UNVISITED: usize = usize::MAX;
const NOISE: usize = usize::MAX - 1;

pub fn dbscan(points: &[GridPoint], params: DbscanParams) -> ClusterResult {
    assert!(params.eps > 0.0, "eps must be positive");
    assert!(params.min_pts >= 1, "min_pts must be at least 1");
    let n = points.len();
    if n == 0 {
        return ClusterResult::default();
    }
    let eps2 = params.eps * params.eps;
    let index = SpatialHash::new(points, params.eps);

    let mut label = vec![UNVISITED; n];
    let mut n_clusters = 0usize;
    let mut nbrs = Vec::new();
    let mut queue = VecDeque::new();

    for i in 0..n {
        if label[i] != UNVISITED {
            continue;
        }
        index.neighbors(points, i, eps2, &mut nbrs);
        if nbrs.len() < params.min_pts {
            label[i] = NOISE;
            continue;
        }
        let cid = n_clusters;
        n_clusters += 1;
        label[i] = cid;
        queue.clear();
        queue.extend(nbrs.iter().copied());
        while let Some(j) = queue.pop_front() {
            if label[j] == NOISE {
                // border point
                label[j] = cid;
                continue;
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = cid;
            index.neighbors(points, j, eps2, &mut nbrs);
            if nbrs.len() >= params.min_pts {
                queue.extend(nbrs.iter().copied().filter(|&k| label[k] == UNVISITED || label[k] == NOISE));
            }
        }
    }

    let mut clusters = vec![Vec::new(); n_clusters];
    let mut noise = Vec::new();
    for (i, &l) in label.iter().enumerate() {
        if l == NOISE {
            noise.push(i);
        } else {
            clusters[l].push(i);
        }
    }
    let centroids = clusters.iter().map(|m| centroid(points, m)).collect();
    ClusterResult {
        clusters,
        noise,
        centroids,
    }
}

fn centroid(points: &[GridPoint], members: &[usize]) -> GridPoint {
    let n = members.len() as f64;
    let (sx, sy) = members
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &i| (sx + points[i].gx, sy + points[i].gy));
    GridPoint::new(sx / n, sy / n)
}

/// Reduces a scene's raw fixation points to a manageable set: small scenes
/// pass through, larger ones are replaced by base-config centroids, and if
/// those still exceed `strict_above` the raw points are re-clustered with the
/// strict config (noise dropped, no truncation).
pub fn adaptive_cluster(points: &[GridPoint], policy: &ClusterPolicy) -> FixationSet {
    if points.len() < policy.skip_below {
        return points.to_vec();
    }
    let base = dbscan(points, policy.base);
    if base.centroids.len() <= policy.strict_above {
        return base.centroids;
    }
    let strict = dbscan(points, policy.strict);
    if strict.centroids.len() > policy.strict_above {
        log::debug!(
            "strict clustering still yields {} centroids; keeping all",
            strict.centroids.len()
        );
    }
    strict.centroids
}
