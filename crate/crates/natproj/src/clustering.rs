//! Per-timestep clustering of hull states: plain k-means, k-means with a
//! minimum cluster cardinality (assignment step solved as a min-cost flow
//! with per-cluster lower bounds), and a density clusterer over the
//! epsilon-neighborhood graph with noise rejection.
//!
//! All algorithms are deterministic given the same inputs and seed; distance
//! ties in assignment go to the lowest cluster index.

use crate::geometry::HullPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClusteringError {
    #[error("clustering needs at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("infeasible: {got} points cannot fill {k} clusters of at least {min_size}")]
    Infeasible { got: usize, k: usize, min_size: usize },
}

/// A partition of the input indices into `k` disjoint non-empty clusters,
/// plus noise indices (empty except for the density clusterer).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub index_sets: Vec<Vec<usize>>,
    pub noise_indices: Vec<usize>,
    pub centroids: Option<Vec<HullPoint>>,
}

impl ClusterAssignment {
    /// Total number of input points covered (clusters plus noise).
    pub fn total_points(&self) -> usize {
        self.index_sets.iter().map(Vec::len).sum::<usize>() + self.noise_indices.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterAlgorithm {
    Kmeans,
    KmeansConstrained,
    Density,
}

/// Clustering configuration; the JSON form is a fragment of the pipeline
/// config, e.g. `{"algorithm":"kmeans_constrained","k":5,
/// "min_cluster_size":3,"seed":17,"max_iterations":100}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustererConfig {
    pub algorithm: ClusterAlgorithm,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_min_cluster_size")]
    pub min_cluster_size: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_k() -> usize {
    1
}
fn default_min_cluster_size() -> usize {
    3
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_max_iterations() -> usize {
    100
}

impl ClustererConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k < 1 {
            return Err("k must be at least 1".into());
        }
        if self.min_cluster_size < 3 {
            return Err("min_cluster_size must be at least n_y + 1 = 3".into());
        }
        if self.epsilon <= 0.0 {
            return Err("epsilon must be positive".into());
        }
        Ok(())
    }
}

/// Run the configured clusterer on a slice of hull states.
pub fn cluster(points: &[HullPoint], cfg: &ClustererConfig) -> Result<ClusterAssignment, ClusteringError> {
    match cfg.algorithm {
        ClusterAlgorithm::Kmeans => kmeans(points, cfg.k, cfg.seed, cfg.max_iterations),
        ClusterAlgorithm::KmeansConstrained => {
            kmeans_constrained(points, cfg.k, cfg.min_cluster_size, cfg.seed, cfg.max_iterations)
        }
        ClusterAlgorithm::Density => density_cluster(points, cfg.min_cluster_size, cfg.epsilon, cfg.seed),
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean(points: &[HullPoint], idx: &[usize]) -> Vec<f64> {
    let d = points[idx[0]].dim();
    let mut m = vec![0.0; d];
    for &i in idx {
        for j in 0..d {
            m[j] += points[i].coords[j];
        }
    }
    for v in &mut m {
        *v /= idx.len() as f64;
    }
    m
}

/// Within-cluster sum of squared distances to centroids (the Lloyd
/// objective); noise indices are excluded.
pub fn wcss(points: &[HullPoint], assignment: &ClusterAssignment) -> f64 {
    let mut total = 0.0;
    for set in &assignment.index_sets {
        let c = mean(points, set);
        for &i in set {
            total += dist2(&points[i].coords, &c);
        }
    }
    total
}

/// k-means++ initialization; returns centroid coordinates.
fn kmeanspp_init(points: &[HullPoint], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen: Vec<usize> = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let d2: Vec<f64> = (0..n)
            .map(|i| {
                chosen
                    .iter()
                    .map(|&c| dist2(&points[i].coords, &points[c].coords))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let r: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc >= r && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining points coincide with chosen centers.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
    }
    chosen.iter().map(|&i| points[i].coords.clone()).collect()
}

/// Nearest-centroid assignment, ties to the lowest cluster index.
fn assign_nearest(points: &[HullPoint], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = dist2(&p.coords, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Move the point farthest from its centroid into each empty cluster so that
/// k stays stable across Lloyd iterations.
fn repair_empty(points: &[HullPoint], centroids: &[Vec<f64>], assign: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assign.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far_i = usize::MAX;
        let mut far_d = -1.0;
        for (i, &a) in assign.iter().enumerate() {
            if sizes[a] < 2 {
                continue;
            }
            let d = dist2(&points[i].coords, &centroids[a]);
            if d > far_d {
                far_d = d;
                far_i = i;
            }
        }
        assign[far_i] = empty;
    }
}

fn assignment_to_sets(assign: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); k];
    for (i, &a) in assign.iter().enumerate() {
        sets[a].push(i);
    }
    sets
}

/// Single-point swap refinement (Hartigan-style): move a point to another
/// cluster whenever the move lowers the objective with centroids updated,
/// respecting the cluster size floor. Lloyd fixpoints are not in general
/// 1-swap optimal; this pass makes them so.
fn swap_polish(points: &[HullPoint], assign: &mut [usize], k: usize, min_size: usize, max_rounds: usize) {
    let n = points.len();
    let d = points[0].dim();
    let mut sizes = vec![0usize; k];
    for &a in assign.iter() {
        sizes[a] += 1;
    }
    let mut means = vec![vec![0.0; d]; k];
    for (i, &a) in assign.iter().enumerate() {
        for j in 0..d {
            means[a][j] += points[i].coords[j];
        }
    }
    for c in 0..k {
        for j in 0..d {
            means[c][j] /= sizes[c] as f64;
        }
    }
    let floor = min_size.max(1);
    for _ in 0..max_rounds {
        let mut improved = false;
        for i in 0..n {
            let a = assign[i];
            if sizes[a] <= floor {
                continue;
            }
            let x = &points[i].coords;
            let na = sizes[a] as f64;
            let removal_gain = na / (na - 1.0) * dist2(x, &means[a]);
            let mut best_b = a;
            let mut best_delta = -1e-12;
            for b in 0..k {
                if b == a {
                    continue;
                }
                let nb = sizes[b] as f64;
                let delta = nb / (nb + 1.0) * dist2(x, &means[b]) - removal_gain;
                if delta < best_delta {
                    best_delta = delta;
                    best_b = b;
                }
            }
            if best_b != a {
                let b = best_b;
                let (na, nb) = (sizes[a] as f64, sizes[b] as f64);
                for j in 0..d {
                    means[a][j] = (means[a][j] * na - x[j]) / (na - 1.0);
                    means[b][j] = (means[b][j] * nb + x[j]) / (nb + 1.0);
                }
                sizes[a] -= 1;
                sizes[b] += 1;
                assign[i] = b;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}

/// Shared Lloyd loop: k-means++ start, alternate assignment and centroid
/// steps to a fixpoint or `max_iterations`, then single-point swap
/// refinement. `min_size = 0` selects plain nearest-centroid assignment
/// (with empty-cluster repair); a positive floor selects the min-cost-flow
/// assignment. The trace records the objective after every Lloyd iteration.
pub(crate) struct LloydRun {
    pub assign: Vec<usize>,
    /// Objective after each Lloyd iteration; observed by property tests.
    #[allow(dead_code)]
    pub trace: Vec<f64>,
}

pub(crate) fn lloyd_run(
    points: &[HullPoint],
    k: usize,
    seed: u64,
    max_iterations: usize,
    min_size: usize,
) -> LloydRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeanspp_init(points, k, &mut rng);
    let mut assign: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..max_iterations.max(1) {
        let next = if min_size == 0 {
            let mut next = assign_nearest(points, &centroids);
            repair_empty(points, &centroids, &mut next, k);
            next
        } else {
            assign_min_cost(points, &centroids, min_size)
        };
        if next == assign {
            break;
        }
        assign = next;
        let sets = assignment_to_sets(&assign, k);
        centroids = sets.iter().map(|s| mean(points, s)).collect();
        trace.push(
            sets.iter()
                .enumerate()
                .map(|(c, s)| s.iter().map(|&i| dist2(&points[i].coords, &centroids[c])).sum::<f64>())
                .sum(),
        );
    }
    swap_polish(points, &mut assign, k, min_size, max_iterations.max(1));
    LloydRun { assign, trace }
}

fn finish_assignment(points: &[HullPoint], assign: &[usize], k: usize) -> ClusterAssignment {
    let index_sets = assignment_to_sets(assign, k);
    let centroids = index_sets
        .iter()
        .map(|s| HullPoint { coords: mean(points, s) })
        .collect();
    ClusterAssignment {
        k,
        index_sets,
        noise_indices: Vec::new(),
        centroids: Some(centroids),
    }
}

/// Lloyd k-means from a k-means++ seeded start, run to an assignment
/// fixpoint or `max_iterations`, then swap-refined. Never produces noise;
/// empty clusters are repaired by donating the farthest point.
pub fn kmeans(
    points: &[HullPoint],
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<ClusterAssignment, ClusteringError> {
    if points.len() < k || k == 0 {
        return Err(ClusteringError::TooFewPoints {
            got: points.len(),
            need: k.max(1),
        });
    }
    let run = lloyd_run(points, k, seed, max_iterations, 0);
    Ok(finish_assignment(points, &run.assign, k))
}

/// k-means whose assignment step enforces a minimum cluster cardinality.
/// Each assignment is an exact minimum-cost flow over points and clusters.
pub fn kmeans_constrained(
    points: &[HullPoint],
    k: usize,
    min_cluster_size: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<ClusterAssignment, ClusteringError> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(ClusteringError::TooFewPoints { got: n, need: k.max(1) });
    }
    if n < k * min_cluster_size {
        return Err(ClusteringError::Infeasible {
            got: n,
            k,
            min_size: min_cluster_size,
        });
    }
    let run = lloyd_run(points, k, seed, max_iterations, min_cluster_size);
    Ok(finish_assignment(points, &run.assign, k))
}

/// Exact assignment of points to clusters minimizing total squared distance
/// subject to every cluster receiving at least `min_size` points. The lower
/// bounds are encoded as mandatory sink arcs with a dominating negative
/// cost, the standard reduction: shortest augmenting paths then fill every
/// floor (at the cheapest distances) before any surplus routing, and no
/// residual negative cycle can appear.
fn assign_min_cost(points: &[HullPoint], centroids: &[Vec<f64>], min_size: usize) -> Vec<usize> {
    let n = points.len();
    let k = centroids.len();
    // Normalize costs into [0, 1] so the dominating constant is scale-free.
    let mut scale: f64 = 0.0;
    for p in points {
        for c in centroids {
            scale = scale.max(dist2(&p.coords, c));
        }
    }
    if scale <= 0.0 {
        scale = 1.0;
    }
    let dominant = 2.0 * (n as f64 + 2.0);

    // Node ids: 0 = source, 1..=n points, n+1..=n+k clusters, n+k+1 sink.
    let source = 0;
    let sink = n + k + 1;
    let mut g = MinCostFlow::new(n + k + 2);
    for i in 0..n {
        g.add_edge(source, 1 + i, 1, 0.0);
    }
    for j in 0..k {
        for i in 0..n {
            g.add_edge(1 + i, n + 1 + j, 1, dist2(&points[i].coords, &centroids[j]) / scale);
        }
        if min_size > 0 {
            g.add_edge(n + 1 + j, sink, min_size as i64, -dominant);
        }
        g.add_edge(n + 1 + j, sink, (n - min_size) as i64, 0.0);
    }
    g.run(source, sink, n as i64);

    let mut assign = vec![0usize; n];
    for i in 0..n {
        for e in &g.adj[1 + i] {
            let edge = &g.edges[*e];
            if edge.to >= n + 1 && edge.to <= n + k && edge.flow > 0 {
                assign[i] = edge.to - (n + 1);
            }
        }
    }
    assign
}

struct FlowEdge {
    to: usize,
    cap: i64,
    flow: i64,
    cost: f64,
}

/// Successive-shortest-path min-cost flow. Shortest paths are found with a
/// label-correcting search (SPFA) because residual reverse arcs carry
/// negative costs; graphs here are tiny (points + clusters per timestep).
struct MinCostFlow {
    edges: Vec<FlowEdge>,
    adj: Vec<Vec<usize>>,
}

impl MinCostFlow {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    /// Returns the index of the forward edge.
    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(FlowEdge { to, cap, flow: 0, cost });
        self.adj[from].push(id);
        self.edges.push(FlowEdge { to: from, cap: 0, flow: 0, cost: -cost });
        self.adj[to].push(id + 1);
        id
    }

    /// Push up to `amount` units one shortest path at a time.
    fn run(&mut self, source: usize, sink: usize, amount: i64) -> i64 {
        let mut pushed = 0;
        while pushed < amount {
            if !self.augment(source, sink) {
                break;
            }
            pushed += 1;
        }
        pushed
    }

    fn augment(&mut self, source: usize, sink: usize) -> bool {
        use std::collections::VecDeque;
        let nodes = self.adj.len();
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev_edge = vec![usize::MAX; nodes];
        let mut queued = vec![false; nodes];
        dist[source] = 0.0;
        let mut queue = VecDeque::from([source]);
        queued[source] = true;
        while let Some(u) = queue.pop_front() {
            queued[u] = false;
            let du = dist[u];
            for &eid in &self.adj[u] {
                let e = &self.edges[eid];
                if e.cap - e.flow <= 0 {
                    continue;
                }
                let nd = du + e.cost;
                // Strict improvement guard keeps ties on the first-seen
                // (lowest cluster index) path and prevents float cycling.
                if nd < dist[e.to] - 1e-12 {
                    dist[e.to] = nd;
                    prev_edge[e.to] = eid;
                    if !queued[e.to] {
                        queue.push_back(e.to);
                        queued[e.to] = true;
                    }
                }
            }
        }
        if !dist[sink].is_finite() {
            return false;
        }
        // Unit augmentation along the recorded path.
        let mut v = sink;
        while v != source {
            let eid = prev_edge[v];
            self.edges[eid].flow += 1;
            self.edges[eid ^ 1].flow -= 1;
            v = self.edges[eid ^ 1].to;
        }
        true
    }
}

/// Density clustering over the epsilon-neighborhood graph: connected
/// components become candidate clusters, components smaller than
/// `min_cluster_size` become noise. The cluster count is inferred, not
/// configured; clusters are ordered by size descending (ties by smallest
/// member index). The seed parameter is accepted for interface uniformity
/// but the algorithm is deterministic.
pub fn density_cluster(
    points: &[HullPoint],
    min_cluster_size: usize,
    epsilon: f64,
    _seed: u64,
) -> Result<ClusterAssignment, ClusteringError> {
    let n = points.len();
    if n == 0 {
        return Err(ClusteringError::TooFewPoints { got: 0, need: 1 });
    }
    let eps2 = epsilon * epsilon;
    // Connected components by breadth-first search over the distance matrix.
    let mut component = vec![usize::MAX; n];
    let mut n_comp = 0usize;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let id = n_comp;
        n_comp += 1;
        let mut queue = std::collections::VecDeque::from([start]);
        component[start] = id;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if component[v] == usize::MAX && dist2(&points[u].coords, &points[v].coords) <= eps2 {
                    component[v] = id;
                    queue.push_back(v);
                }
            }
        }
    }
    let mut groups = vec![Vec::new(); n_comp];
    for (i, &c) in component.iter().enumerate() {
        groups[c].push(i);
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut noise: Vec<usize> = Vec::new();
    for g in groups {
        if g.len() >= min_cluster_size {
            clusters.push(g);
        } else {
            noise.extend(g);
        }
    }
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    noise.sort_unstable();
    Ok(ClusterAssignment {
        k: clusters.len(),
        index_sets: clusters,
        noise_indices: noise,
        centroids: None,
    })
}
