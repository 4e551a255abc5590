//! Naturalistic set generation: slice the dataset per timestep, map states
//! to hull states, cluster each slice, hull each cluster, and assemble the
//! time-indexed union-of-polytopes set together with per-frame metrics.
//!
//! The horizon rule follows the data: generation stops at the first frame
//! where any produced cluster falls below the minimum cluster size (or the
//! density clusterer rejects everything as noise), so the set covers the
//! maximum time for which all clusters satisfy the size condition.

use crate::clustering::{self, ClusterAlgorithm, ClustererConfig};
use crate::dynamics::Trajectory;
use crate::geometry::{self, ConvexPolytope, HullPoint};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NatsetError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("even frame 0 fails the cluster size condition: {0}")]
    HorizonZero(String),
    #[error("sampling period mismatch: expected {expected}, got {got}")]
    DtMismatch { expected: f64, got: f64 },
    #[error("invalid hull-state map: {0}")]
    InvalidMap(String),
    #[error("serialization: {0}")]
    Serialization(String),
}

/// Linear selector from state space to hull-state space. The driving
/// experiments extract planar position from `[p_x, v_x, p_y, v_y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HullStateMap {
    selector: DMatrix<f64>,
}

impl HullStateMap {
    pub fn new(selector: DMatrix<f64>) -> Result<Self, NatsetError> {
        let rank = selector.clone().svd(false, false).rank(1e-10);
        if rank != selector.nrows() {
            return Err(NatsetError::InvalidMap(
                "selector rows must be linearly independent".into(),
            ));
        }
        if selector.nrows() > selector.ncols() {
            return Err(NatsetError::InvalidMap(
                "hull-state dimension cannot exceed state dimension".into(),
            ));
        }
        Ok(Self { selector })
    }

    /// The position selector for the 4-dimensional double-integrator state.
    pub fn position() -> Self {
        let mut m = DMatrix::zeros(2, 4);
        m[(0, 0)] = 1.0;
        m[(1, 2)] = 1.0;
        Self { selector: m }
    }

    pub fn selector(&self) -> &DMatrix<f64> {
        &self.selector
    }

    pub fn hull_dim(&self) -> usize {
        self.selector.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.selector.ncols()
    }

    pub fn apply(&self, state: &DVector<f64>) -> HullPoint {
        let y = &self.selector * state;
        HullPoint {
            coords: y.iter().copied().collect(),
        }
    }
}

/// The union of `k_t` convex polytopes observed at frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalisticSubset {
    pub t: usize,
    pub polytopes: Vec<ConvexPolytope>,
    pub outlier_count: usize,
}

/// Reproducibility metadata carried by every serialized set. The creation
/// stamp honors `SOURCE_DATE_EPOCH` and otherwise stays at 0 so that reruns
/// with identical inputs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_sha256: String,
    pub clusterer: ClustererConfig,
    pub created_unix: u64,
}

impl Provenance {
    pub fn stamp(dataset_sha256: String, clusterer: ClustererConfig) -> Self {
        let created_unix = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        Self {
            dataset_sha256,
            clusterer,
            created_unix,
        }
    }
}

/// Time-indexed naturalistic set: one polytope union per frame, t = 0..=H.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalisticSet {
    pub subsets: Vec<NaturalisticSubset>,
    pub dt: f64,
    pub hull_state_dim: usize,
    pub provenance: Provenance,
}

/// Per-frame quantities behind the paper-style diagnostics plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub t: usize,
    pub k: usize,
    pub total_area: f64,
    pub point_count: usize,
    pub outlier_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SetMetrics {
    pub per_frame: Vec<FrameMetrics>,
}

impl SetMetrics {
    /// CSV with the stable header `t,k,area,points,outliers`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,k,area,points,outliers\n");
        for m in &self.per_frame {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.t, m.k, m.total_area, m.point_count, m.outlier_count
            ));
        }
        out
    }
}

impl NaturalisticSet {
    pub fn horizon(&self) -> usize {
        self.subsets.len() - 1
    }

    /// Keep every `stride`-th frame and scale dt accordingly.
    pub fn downsample(&self, stride: usize) -> NaturalisticSet {
        if stride <= 1 {
            return self.clone();
        }
        let subsets = self
            .subsets
            .iter()
            .filter(|s| s.t % stride == 0)
            .enumerate()
            .map(|(i, s)| NaturalisticSubset {
                t: i,
                polytopes: s.polytopes.clone(),
                outlier_count: s.outlier_count,
            })
            .collect();
        NaturalisticSet {
            subsets,
            dt: self.dt * stride as f64,
            hull_state_dim: self.hull_state_dim,
            provenance: self.provenance.clone(),
        }
    }

    /// Bounding box over all polytope vertices: (min, max) corners.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.hull_state_dim;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for sub in &self.subsets {
            for p in &sub.polytopes {
                let (plo, phi) = p.bounding_box();
                for j in 0..d {
                    lo[j] = lo[j].min(plo[j]);
                    hi[j] = hi[j].max(phi[j]);
                }
            }
        }
        (lo, hi)
    }

    pub fn to_json_string(&self) -> Result<String, NatsetError> {
        serde_json::to_string_pretty(&SetRepr::from(self))
            .map_err(|e| NatsetError::Serialization(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self, NatsetError> {
        let repr: SetRepr =
            serde_json::from_str(s).map_err(|e| NatsetError::Serialization(e.to_string()))?;
        repr.try_into()
    }
}

/// Wire form: `{"dt":..,"horizon":H,"hull_state_dim":2,"subsets":[...],
/// "provenance":{...}}` with stable key order.
#[derive(Serialize, Deserialize)]
struct SetRepr {
    dt: f64,
    horizon: usize,
    hull_state_dim: usize,
    subsets: Vec<SubsetRepr>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct SubsetRepr {
    t: usize,
    outliers: usize,
    polytopes: Vec<ConvexPolytope>,
}

impl From<&NaturalisticSet> for SetRepr {
    fn from(n: &NaturalisticSet) -> Self {
        SetRepr {
            dt: n.dt,
            horizon: n.horizon(),
            hull_state_dim: n.hull_state_dim,
            subsets: n
                .subsets
                .iter()
                .map(|s| SubsetRepr {
                    t: s.t,
                    outliers: s.outlier_count,
                    polytopes: s.polytopes.clone(),
                })
                .collect(),
            provenance: n.provenance.clone(),
        }
    }
}

impl TryFrom<SetRepr> for NaturalisticSet {
    type Error = NatsetError;

    fn try_from(r: SetRepr) -> Result<Self, NatsetError> {
        if r.subsets.is_empty() {
            return Err(NatsetError::Serialization("set has no subsets".into()));
        }
        if r.subsets.len() != r.horizon + 1 {
            return Err(NatsetError::Serialization(format!(
                "horizon {} does not match {} subsets",
                r.horizon,
                r.subsets.len()
            )));
        }
        for (i, s) in r.subsets.iter().enumerate() {
            if s.t != i {
                return Err(NatsetError::Serialization(format!(
                    "subset index {} found at position {}",
                    s.t, i
                )));
            }
            if s.polytopes.is_empty() {
                return Err(NatsetError::Serialization(format!("subset {} has no polytopes", i)));
            }
        }
        Ok(NaturalisticSet {
            subsets: r
                .subsets
                .into_iter()
                .map(|s| NaturalisticSubset {
                    t: s.t,
                    polytopes: s.polytopes,
                    outlier_count: s.outliers,
                })
                .collect(),
            dt: r.dt,
            hull_state_dim: r.hull_state_dim,
            provenance: r.provenance,
        })
    }
}

/// All states observed at frame `t`, in dataset order; trajectories shorter
/// than `t + 1` states are omitted.
pub fn slice_dataset(dataset: &[Trajectory], t: usize) -> Vec<DVector<f64>> {
    dataset
        .iter()
        .filter(|traj| traj.states.len() > t)
        .map(|traj| traj.states[t].clone())
        .collect()
}

/// SHA-256 over the exact bit patterns of a dataset, for provenance.
pub fn dataset_hash(dataset: &[Trajectory]) -> String {
    let mut hasher = Sha256::new();
    for traj in dataset {
        hasher.update(traj.id.as_bytes());
        hasher.update(traj.dt.to_le_bytes());
        for s in &traj.states {
            for v in s.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Build the naturalistic set and its metrics from a dataset.
pub fn generate(
    dataset: &[Trajectory],
    map: &HullStateMap,
    config: &ClustererConfig,
) -> Result<(NaturalisticSet, SetMetrics), NatsetError> {
    if dataset.is_empty() {
        return Err(NatsetError::EmptyDataset);
    }
    config.validate().map_err(NatsetError::InvalidMap)?;
    let dt = dataset[0].dt;
    for traj in dataset {
        if (traj.dt - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(NatsetError::DtMismatch {
                expected: dt,
                got: traj.dt,
            });
        }
    }

    let mut subsets = Vec::new();
    let mut metrics = SetMetrics::default();
    let mut t = 0usize;
    loop {
        match build_subset(dataset, map, config, t) {
            Ok((subset, frame_metrics)) => {
                subsets.push(subset);
                metrics.per_frame.push(frame_metrics);
                t += 1;
            }
            Err(reason) => {
                if subsets.is_empty() {
                    return Err(NatsetError::HorizonZero(reason));
                }
                break;
            }
        }
    }
    let provenance = Provenance::stamp(dataset_hash(dataset), config.clone());
    Ok((
        NaturalisticSet {
            subsets,
            dt,
            hull_state_dim: map.hull_dim(),
            provenance,
        },
        metrics,
    ))
}

/// One frame of generation; an Err carries the reason the horizon ends here.
fn build_subset(
    dataset: &[Trajectory],
    map: &HullStateMap,
    config: &ClustererConfig,
    t: usize,
) -> Result<(NaturalisticSubset, FrameMetrics), String> {
    let slice = slice_dataset(dataset, t);
    if slice.is_empty() {
        return Err(format!("frame {t}: empty slice"));
    }
    let kmeans_like = matches!(
        config.algorithm,
        ClusterAlgorithm::Kmeans | ClusterAlgorithm::KmeansConstrained
    );
    if kmeans_like && slice.len() < config.k * config.min_cluster_size {
        return Err(format!(
            "frame {t}: {} points cannot fill {} clusters of {}",
            slice.len(),
            config.k,
            config.min_cluster_size
        ));
    }
    let hull_states: Vec<HullPoint> = slice.iter().map(|s| map.apply(s)).collect();
    let assignment = clustering::cluster(&hull_states, config).map_err(|e| format!("frame {t}: {e}"))?;
    if assignment.k == 0 {
        return Err(format!("frame {t}: density clustering left no valid cluster"));
    }
    if assignment
        .index_sets
        .iter()
        .any(|s| s.len() < config.min_cluster_size)
    {
        return Err(format!("frame {t}: a cluster fell below {} points", config.min_cluster_size));
    }

    // Hull each non-noise cluster, then order polytopes by cluster size
    // descending and centroid lexicographic for reproducibility.
    let mut entries: Vec<(usize, Vec<f64>, ConvexPolytope)> = Vec::with_capacity(assignment.k);
    for set in &assignment.index_sets {
        let pts: Vec<HullPoint> = set.iter().map(|&i| hull_states[i].clone()).collect();
        let poly = geometry::convex_hull(&pts, config.min_cluster_size)
            .map_err(|e| format!("frame {t}: {e}"))?;
        let d = map.hull_dim();
        let mut centroid = vec![0.0; d];
        for p in &pts {
            for j in 0..d {
                centroid[j] += p.coords[j];
            }
        }
        for c in &mut centroid {
            *c /= pts.len() as f64;
        }
        entries.push((set.len(), centroid, poly));
    }
    entries.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
    });
    let polytopes: Vec<ConvexPolytope> = entries.into_iter().map(|e| e.2).collect();
    let total_area: f64 = polytopes.iter().map(geometry::area).sum();
    Ok((
        NaturalisticSubset {
            t,
            polytopes,
            outlier_count: assignment.noise_indices.len(),
        },
        FrameMetrics {
            t,
            k: assignment.k,
            total_area,
            point_count: slice.len(),
            outlier_count: assignment.noise_indices.len(),
        },
    ))
}

/// Per-frame membership of a trajectory in the set: entry `t` is true when
/// the mapped state lies inside at least one polytope of subset `t`.
/// Entries run from 0 through `min(H, trajectory horizon)`.
pub fn membership(
    nset: &NaturalisticSet,
    traj: &Trajectory,
    map: &HullStateMap,
    tol: f64,
) -> Result<Vec<bool>, NatsetError> {
    if (traj.dt - nset.dt).abs() > 1e-9 * nset.dt.max(1.0) {
        return Err(NatsetError::DtMismatch {
            expected: nset.dt,
            got: traj.dt,
        });
    }
    let last = nset.horizon().min(traj.horizon());
    Ok((0..=last)
        .map(|t| {
            let y = map.apply(&traj.states[t]);
            nset.subsets[t]
                .polytopes
                .iter()
                .any(|p| geometry::contains(p, &y, tol))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ClusterAlgorithm;
    use crate::geometry::HREP_TOL;

    /// Constant-velocity trajectory along +x with the given lateral offset
    /// and speed; states are [p_x, v_x, p_y, v_y].
    fn straight(id: &str, speed: f64, y_off: f64, frames: usize, dt: f64) -> Trajectory {
        let states = (0..frames)
            .map(|t| DVector::from_row_slice(&[speed * dt * t as f64, speed, y_off, 0.0]))
            .collect();
        Trajectory::new(states, dt, id).unwrap()
    }

    /// Trajectories that run straight and split into two lateral branches
    /// after `split` frames.
    fn fork_dataset(n_per_branch: usize, split: usize, frames: usize, dt: f64) -> Vec<Trajectory> {
        let mut out = Vec::new();
        for branch in 0..2 {
            let dir = if branch == 0 { 1.0 } else { -1.0 };
            for i in 0..n_per_branch {
                let jitter = 0.05 * i as f64;
                let states = (0..frames)
                    .map(|t| {
                        let x = 1.0 * dt * t as f64;
                        let y = if t <= split {
                            jitter * 0.1
                        } else {
                            dir * (0.5 * dt * (t - split) as f64) + jitter * 0.1
                        };
                        DVector::from_row_slice(&[x, 1.0, y, 0.0])
                    })
                    .collect();
                out.push(Trajectory::new(states, dt, format!("b{branch}-{i}")).unwrap());
            }
        }
        out
    }

    fn kmeans_cfg(k: usize) -> ClustererConfig {
        ClustererConfig {
            algorithm: ClusterAlgorithm::Kmeans,
            k,
            min_cluster_size: 3,
            epsilon: 1.0,
            seed: 7,
            max_iterations: 100,
        }
    }

    #[test]
    fn slice_matches_direct_indexing_oracle() {
        let d = vec![
            straight("a", 1.0, 0.0, 8, 0.1),
            straight("b", 2.0, 1.0, 3, 0.1),
            straight("c", 0.5, -1.0, 10, 0.1),
        ];
        for t in 0..12 {
            let slice = slice_dataset(&d, t);
            let oracle: Vec<DVector<f64>> = d
                .iter()
                .filter(|tr| tr.states.len() > t)
                .map(|tr| tr.states[t].clone())
                .collect();
            assert_eq!(slice, oracle);
        }
        assert_eq!(slice_dataset(&d, 4).len(), 2);
        assert_eq!(slice_dataset(&d, 5).len(), 2);
        assert_eq!(slice_dataset(&d, 9).len(), 1);
        assert_eq!(slice_dataset(&d, 10).len(), 0);
    }

    #[test]
    fn identical_trajectories_k1_inflated_hulls() {
        let d: Vec<Trajectory> = (0..6).map(|i| straight(&format!("t{i}"), 1.0, 0.0, 10, 0.1)).collect();
        let (nset, metrics) = generate(&d, &HullStateMap::position(), &kmeans_cfg(1)).unwrap();
        assert_eq!(nset.horizon(), 9);
        for sub in &nset.subsets {
            assert_eq!(sub.polytopes.len(), 1);
            assert!(geometry::area(&sub.polytopes[0]) > 0.0, "hull not full-dimensional");
        }
        for m in &metrics.per_frame {
            assert_eq!(m.k, 1);
            assert_eq!(m.point_count, 6);
            assert_eq!(m.outlier_count, 0);
        }
    }

    #[test]
    fn fork_scenario_separates_branches() {
        let dt = 0.1;
        let split = 10;
        let d = fork_dataset(5, split, 60, dt);
        let cfg = ClustererConfig {
            algorithm: ClusterAlgorithm::KmeansConstrained,
            k: 2,
            min_cluster_size: 3,
            epsilon: 1.0,
            seed: 3,
            max_iterations: 100,
        };
        let map = HullStateMap::position();
        let (nset, _) = generate(&d, &map, &cfg).unwrap();
        assert_eq!(nset.horizon(), 59);
        // Far beyond the split the two branches are disjoint: every branch
        // point lands in a polytope, and the two branch groups never share
        // one.
        let t = 50;
        let sub = &nset.subsets[t];
        assert_eq!(sub.polytopes.len(), 2);
        let slice = slice_dataset(&d, t);
        let in_poly = |y: &HullPoint| -> Vec<usize> {
            sub.polytopes
                .iter()
                .enumerate()
                .filter(|(_, p)| geometry::contains(p, y, HREP_TOL))
                .map(|(i, _)| i)
                .collect()
        };
        let mut seen = [std::collections::BTreeSet::new(), std::collections::BTreeSet::new()];
        for (i, s) in slice.iter().enumerate() {
            let y = map.apply(s);
            let members = in_poly(&y);
            assert!(!members.is_empty(), "branch point {i} outside every polytope");
            let branch = if i < 5 { 0 } else { 1 };
            for m in members {
                seen[branch].insert(m);
            }
        }
        assert_ne!(seen[0], seen[1], "branches share polytopes after the split");
    }

    #[test]
    fn multimodal_hulls_contained_in_unimodal_hull() {
        let d = fork_dataset(6, 5, 40, 0.1);
        let map = HullStateMap::position();
        let (uni, _) = generate(&d, &map, &kmeans_cfg(1)).unwrap();
        let (multi, _) = generate(&d, &map, &kmeans_cfg(3)).unwrap();
        let h = uni.horizon().min(multi.horizon());
        for t in 0..=h {
            let big = &uni.subsets[t].polytopes[0];
            for poly in &multi.subsets[t].polytopes {
                for v in poly.vertices() {
                    assert!(geometry::contains(big, v, HREP_TOL));
                }
            }
        }
    }

    #[test]
    fn training_points_are_members() {
        let d = fork_dataset(5, 8, 30, 0.1);
        let map = HullStateMap::position();
        let (nset, _) = generate(&d, &map, &kmeans_cfg(2)).unwrap();
        for traj in &d {
            let inside = membership(&nset, traj, &map, HREP_TOL).unwrap();
            assert!(inside.iter().all(|&b| b), "training trajectory left the set");
        }
        // A trajectory translated far away is never a member.
        let mut far = d[0].clone();
        for s in &mut far.states {
            s[0] += 100.0;
        }
        let inside = membership(&nset, &far, &map, HREP_TOL).unwrap();
        assert!(inside.iter().all(|&b| !b));
    }

    #[test]
    fn dt_mismatch_rejected() {
        let d = fork_dataset(5, 8, 20, 0.1);
        let (nset, _) = generate(&d, &HullStateMap::position(), &kmeans_cfg(1)).unwrap();
        let other = straight("x", 1.0, 0.0, 20, 0.04);
        assert!(matches!(
            membership(&nset, &other, &HullStateMap::position(), 1e-9),
            Err(NatsetError::DtMismatch { .. })
        ));
    }

    #[test]
    fn horizon_truncates_at_first_failure() {
        // 6 trajectories but only 4 reach frame 5: k=2 with min 3 then needs
        // 6 points, so the horizon ends at frame 4.
        let mut d: Vec<Trajectory> = (0..4)
            .map(|i| straight(&format!("long{i}"), 1.0, 0.2 * i as f64, 12, 0.1))
            .collect();
        d.push(straight("short0", 1.0, 1.0, 5, 0.1));
        d.push(straight("short1", 1.0, -1.0, 5, 0.1));
        let cfg = ClustererConfig {
            algorithm: ClusterAlgorithm::KmeansConstrained,
            k: 2,
            min_cluster_size: 3,
            epsilon: 1.0,
            seed: 0,
            max_iterations: 50,
        };
        let (nset, metrics) = generate(&d, &HullStateMap::position(), &cfg).unwrap();
        assert_eq!(nset.horizon(), 4);
        assert_eq!(metrics.per_frame.len(), 5);
    }

    #[test]
    fn horizon_zero_reported() {
        let d = vec![straight("a", 1.0, 0.0, 8, 0.1), straight("b", 1.0, 0.5, 8, 0.1)];
        // k=1 needs 3 points per cluster; only 2 trajectories exist.
        let e = generate(&d, &HullStateMap::position(), &kmeans_cfg(1)).unwrap_err();
        assert!(matches!(e, NatsetError::HorizonZero(_)));
    }

    #[test]
    fn metrics_match_subsets() {
        let d = fork_dataset(5, 6, 25, 0.1);
        let (nset, metrics) = generate(&d, &HullStateMap::position(), &kmeans_cfg(2)).unwrap();
        assert_eq!(metrics.per_frame.len(), nset.subsets.len());
        for (m, s) in metrics.per_frame.iter().zip(&nset.subsets) {
            assert_eq!(m.k, s.polytopes.len());
            assert_eq!(m.outlier_count, s.outlier_count);
            let area: f64 = s.polytopes.iter().map(geometry::area).sum();
            assert!((m.total_area - area).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_membership_agrees_on_probe_grid() {
        let d = fork_dataset(5, 6, 25, 0.1);
        let map = HullStateMap::position();
        let (nset, _) = generate(&d, &map, &kmeans_cfg(2)).unwrap();
        let js = nset.to_json_string().unwrap();
        let back = NaturalisticSet::from_json_str(&js).unwrap();
        assert_eq!(nset, back);

        let (lo, hi) = nset.bounding_box();
        let t_probe = nset.horizon() / 2;
        let contains_any = |set: &NaturalisticSet, y: &HullPoint| {
            set.subsets[t_probe]
                .polytopes
                .iter()
                .any(|p| geometry::contains(p, y, 1e-9))
        };
        for i in 0..10 {
            for j in 0..10 {
                let x = lo[0] + (hi[0] - lo[0]) * i as f64 / 9.0;
                let y = lo[1] + (hi[1] - lo[1]) * j as f64 / 9.0;
                let pt = HullPoint::xy(x, y);
                assert_eq!(contains_any(&nset, &pt), contains_any(&back, &pt));
            }
        }
    }

    #[test]
    fn deterministic_serialization() {
        let d = fork_dataset(5, 6, 25, 0.1);
        let map = HullStateMap::position();
        let (a, _) = generate(&d, &map, &kmeans_cfg(2)).unwrap();
        let (b, _) = generate(&d, &map, &kmeans_cfg(2)).unwrap();
        assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
    }

    #[test]
    fn density_generation_with_outliers() {
        // Two dense bands plus one far-away trajectory that becomes noise.
        let mut d: Vec<Trajectory> = (0..4)
            .map(|i| straight(&format!("a{i}"), 1.0, 0.05 * i as f64, 15, 0.1))
            .collect();
        for i in 0..4 {
            d.push(straight(&format!("b{i}"), 1.0, 10.0 + 0.05 * i as f64, 15, 0.1));
        }
        d.push(straight("lone", 1.0, 100.0, 15, 0.1));
        let cfg = ClustererConfig {
            algorithm: ClusterAlgorithm::Density,
            k: 1,
            min_cluster_size: 3,
            epsilon: 1.0,
            seed: 0,
            max_iterations: 10,
        };
        let (nset, metrics) = generate(&d, &HullStateMap::position(), &cfg).unwrap();
        for sub in &nset.subsets {
            assert_eq!(sub.polytopes.len(), 2);
            assert_eq!(sub.outlier_count, 1);
        }
        assert!(metrics.per_frame.iter().all(|m| m.point_count == 9));
    }

    #[test]
    fn downsample_reindexes_frames() {
        let d = fork_dataset(5, 6, 25, 0.1);
        let (nset, _) = generate(&d, &HullStateMap::position(), &kmeans_cfg(2)).unwrap();
        let ds = nset.downsample(2);
        assert_eq!(ds.dt, 0.2);
        assert_eq!(ds.horizon(), nset.horizon() / 2);
        for (i, sub) in ds.subsets.iter().enumerate() {
            assert_eq!(sub.t, i);
            assert_eq!(sub.polytopes, nset.subsets[2 * i].polytopes);
        }
    }
}
