//! Projection of a candidate trajectory into a naturalistic set.
//!
//! The projection minimizes squared distance to the candidate plus a control
//! regularizer, subject to linear dynamics and, at every enforced frame,
//! membership in at least one of that frame's polytopes. Disjunctive
//! membership is encoded with per-row big-M constraints driven by binary
//! cluster flags; the binaries are resolved with exact best-first
//! branch-and-bound where every node solves a convex QP relaxation.
//!
//! States are eliminated by substitution: with `x_t` affine in the controls,
//! the decision variables are the stacked controls plus the relaxed binary
//! flags, which keeps every node QP dense but small.

mod bnb;

pub use bnb::{enumerate_assignments, solve, solve_fixed};

use crate::dynamics::{ControlSequence, LinearDynamics, Trajectory};
use crate::natset::{HullStateMap, NaturalisticSet};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Curvature placed on relaxed binary flags so the node QPs stay strictly
/// convex; node bounds are corrected downward by `RIDGE * undecided frames`
/// to stay valid.
pub(crate) const RIDGE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProjectorError {
    #[error("sampling period mismatch after downsampling: {0}")]
    DtMismatch(String),
    #[error("no frame qualifies for naturalistic enforcement (frame skip {frame_skip}, usable horizon {usable})")]
    EmptyEnforcementSet { frame_skip: usize, usable: usize },
    #[error("projection infeasible: the naturalistic set contains no dynamically reachable tube from the initial state ({0})")]
    Infeasible(String),
    #[error("search limits reached before any feasible tube was found")]
    LimitWithoutIncumbent,
    #[error("qp failure: {0}")]
    Qp(#[from] crate::qpsolver::QpError),
    #[error("bad configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BigMMode {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryMode {
    AtLeastOne,
    ExactlyOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Control regularization weight.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Enforce naturalistic constraints every `frame_skip` frames.
    #[serde(default = "default_one")]
    pub frame_skip: usize,
    /// Keep every `downsample`-th frame of the set and trajectory.
    #[serde(default = "default_one")]
    pub downsample: usize,
    #[serde(default = "default_big_m")]
    pub big_m_mode: BigMMode,
    #[serde(default = "default_binary_mode")]
    pub binary_mode: BinaryMode,
    #[serde(default = "default_mip_gap")]
    pub mip_gap: f64,
    #[serde(default = "default_node_limit")]
    pub node_limit: usize,
    /// Wall-clock limit in seconds; `None` disables the limit.
    #[serde(default)]
    pub time_limit: Option<f64>,
}

fn default_gamma() -> f64 {
    0.1
}
fn default_one() -> usize {
    1
}
fn default_big_m() -> BigMMode {
    BigMMode::Auto
}
fn default_binary_mode() -> BinaryMode {
    BinaryMode::ExactlyOne
}
fn default_mip_gap() -> f64 {
    1e-6
}
fn default_node_limit() -> usize {
    1_000_000
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            gamma: default_gamma(),
            frame_skip: 1,
            downsample: 1,
            big_m_mode: BigMMode::Auto,
            binary_mode: BinaryMode::ExactlyOne,
            mip_gap: default_mip_gap(),
            node_limit: default_node_limit(),
            time_limit: None,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), ProjectorError> {
        if self.gamma < 0.0 {
            return Err(ProjectorError::BadConfig("gamma must be non-negative".into()));
        }
        if self.frame_skip == 0 || self.downsample == 0 {
            return Err(ProjectorError::BadConfig(
                "frame_skip and downsample must be at least 1".into(),
            ));
        }
        if self.mip_gap < 0.0 {
            return Err(ProjectorError::BadConfig("mip_gap must be non-negative".into()));
        }
        if let BigMMode::Fixed(s) = self.big_m_mode {
            if !(s > 0.0) {
                return Err(ProjectorError::BadConfig("fixed big-M must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One polytope's big-M constraint block at an enforced frame, expressed in
/// control coordinates: `g_u u <= rhs + (1 - s) big_m` row by row.
#[derive(Debug, Clone)]
pub struct Disjunct {
    pub g_u: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub big_m: DVector<f64>,
}

/// Binary block for one enforced frame: `k` candidate polytopes.
#[derive(Debug, Clone)]
pub struct FrameBlock {
    /// Frame index in the (downsampled) model.
    pub t: usize,
    pub disjuncts: Vec<Disjunct>,
}

impl FrameBlock {
    pub fn k(&self) -> usize {
        self.disjuncts.len()
    }
}

/// The assembled mixed-integer model: quadratic objective over stacked
/// controls, per-frame binary blocks, and the affine state reconstruction.
#[derive(Debug, Clone)]
pub struct MiqpModel {
    pub n_u: usize,
    pub control_dim: usize,
    pub horizon: usize,
    /// Objective: 1/2 u' P u + q' u + constant (full-state distance plus
    /// control regularization).
    pub p_u: DMatrix<f64>,
    pub q_u: DVector<f64>,
    pub obj_const: f64,
    pub frames: Vec<FrameBlock>,
    pub binary_mode: BinaryMode,
    /// x_t = state_offsets[t] + state_maps[t] * u.
    pub state_offsets: Vec<DVector<f64>>,
    pub state_maps: Vec<DMatrix<f64>>,
    pub x_init: DVector<f64>,
    pub dt: f64,
    /// Per enforced frame, the cluster whose polytope is nearest to the
    /// candidate trajectory's hull state (incumbent seeding).
    pub heuristic_assignment: Vec<usize>,
}

impl MiqpModel {
    pub fn total_binaries(&self) -> usize {
        self.frames.iter().map(FrameBlock::k).sum()
    }

    pub fn objective_at(&self, u: &DVector<f64>) -> f64 {
        0.5 * (u.transpose() * &self.p_u * u)[(0, 0)] + self.q_u.dot(u) + self.obj_const
    }

    pub fn states_at(&self, u: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..=self.horizon)
            .map(|t| &self.state_offsets[t] + &self.state_maps[t] * u)
            .collect()
    }

    pub fn controls_at(&self, u: &DVector<f64>) -> ControlSequence {
        let m = self.control_dim;
        ControlSequence {
            controls: (0..self.horizon)
                .map(|t| DVector::from_fn(m, |i, _| u[m * t + i]))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionStatus {
    Optimal,
    GapReached,
    Infeasible,
    Limit,
}

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub trajectory: Trajectory,
    pub controls: ControlSequence,
    /// Chosen cluster index per enforced frame, in frame order.
    pub active_clusters: Vec<usize>,
    pub objective: f64,
    pub bound: f64,
    pub nodes_explored: usize,
    pub wall_time: f64,
    pub status: ProjectionStatus,
    /// Echo of the configuration that produced this result.
    pub config: ProjectionConfig,
}

impl ProjectionResult {
    /// Result JSON with the stable layout
    /// `{"status","objective","bound","nodes","wall_time_s",
    ///   "active_clusters","states","controls"}`.
    /// When `SOURCE_DATE_EPOCH` is set the wall time is written as 0 so that
    /// reruns are byte-identical.
    pub fn to_json_string(&self) -> String {
        let wall = if std::env::var_os("SOURCE_DATE_EPOCH").is_some() {
            0.0
        } else {
            self.wall_time
        };
        let repr = ResultRepr {
            status: self.status,
            objective: self.objective,
            bound: self.bound,
            nodes: self.nodes_explored,
            wall_time_s: wall,
            active_clusters: self.active_clusters.clone(),
            states: self
                .trajectory
                .states
                .iter()
                .map(|s| s.iter().copied().collect())
                .collect(),
            controls: self
                .controls
                .controls
                .iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            config: self.config.clone(),
        };
        serde_json::to_string_pretty(&repr).expect("projection result serializes")
    }
}

#[derive(Serialize, Deserialize)]
pub struct ResultRepr {
    pub status: ProjectionStatus,
    pub objective: f64,
    pub bound: f64,
    pub nodes: usize,
    pub wall_time_s: f64,
    pub active_clusters: Vec<usize>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub config: ProjectionConfig,
}

/// Assemble the mixed-integer projection model. The set and candidate
/// trajectory are downsampled per the config before anything else; the
/// dynamics must match the downsampled rate.
pub fn build_model(
    nset: &NaturalisticSet,
    dyn_: &LinearDynamics,
    auto_traj: &Trajectory,
    map: &HullStateMap,
    x_init: &DVector<f64>,
    cfg: &ProjectionConfig,
) -> Result<MiqpModel, ProjectorError> {
    cfg.validate()?;
    let nset_d = nset.downsample(cfg.downsample);
    let auto_d = auto_traj.downsample(cfg.downsample);
    let dt = auto_d.dt;
    if (nset_d.dt - dt).abs() > 1e-9 * dt.max(1.0) {
        return Err(ProjectorError::DtMismatch(format!(
            "set at {} s vs trajectory at {} s",
            nset_d.dt, dt
        )));
    }
    if (dyn_.dt - dt).abs() > 1e-9 * dt.max(1.0) {
        return Err(ProjectorError::DtMismatch(format!(
            "dynamics at {} s vs model rate {} s",
            dyn_.dt, dt
        )));
    }
    let n = dyn_.state_dim();
    let m = dyn_.control_dim();
    if auto_d.state_dim() != n || x_init.len() != n {
        return Err(ProjectorError::DtMismatch(format!(
            "state dimension mismatch: dynamics {}, trajectory {}, x_init {}",
            n,
            auto_d.state_dim(),
            x_init.len()
        )));
    }
    let h_a = auto_d.horizon();
    let n_u = m * h_a;

    // x_t = offsets[t] + maps[t] u, built by forward recursion.
    let mut state_offsets = Vec::with_capacity(h_a + 1);
    let mut state_maps = Vec::with_capacity(h_a + 1);
    state_offsets.push(x_init.clone());
    state_maps.push(DMatrix::zeros(n, n_u));
    for t in 0..h_a {
        let next_off = &dyn_.a * &state_offsets[t];
        let mut next_map = &dyn_.a * &state_maps[t];
        for (r, c) in (0..n).flat_map(|r| (0..m).map(move |c| (r, c))) {
            next_map[(r, m * t + c)] += dyn_.b[(r, c)];
        }
        state_offsets.push(next_off);
        state_maps.push(next_map);
    }

    // Objective: sum_t ||x_t(u) - x^a_t||^2 + gamma ||u||^2.
    let mut p_u = DMatrix::<f64>::identity(n_u, n_u) * (2.0 * cfg.gamma);
    let mut q_u = DVector::<f64>::zeros(n_u);
    let mut obj_const = 0.0;
    for t in 0..=h_a {
        let e = &state_offsets[t] - &auto_d.states[t];
        obj_const += e.norm_squared();
        if t == 0 {
            continue; // maps[0] is zero
        }
        let mt = &state_maps[t];
        p_u += 2.0 * mt.transpose() * mt;
        q_u += 2.0 * mt.transpose() * e;
    }

    // Enforcement frames: multiples of the frame skip, frame 0 excluded
    // (it is pinned by the initial condition).
    let usable = nset_d.horizon().min(h_a);
    let enforced: Vec<usize> = (1..=usable).filter(|t| t % cfg.frame_skip == 0).collect();
    if enforced.is_empty() {
        return Err(ProjectorError::EmptyEnforcementSet {
            frame_skip: cfg.frame_skip,
            usable,
        });
    }

    // Scene bounding box for auto big-M: all set vertices plus the
    // candidate trajectory's hull states.
    let (mut lo, mut hi) = nset_d.bounding_box();
    for s in &auto_d.states {
        let y = map.apply(s);
        for j in 0..y.dim() {
            lo[j] = lo[j].min(y.coords[j]);
            hi[j] = hi[j].max(y.coords[j]);
        }
    }
    let n_y = map.hull_dim();
    let corners: Vec<Vec<f64>> = (0..(1usize << n_y))
        .map(|mask| {
            (0..n_y)
                .map(|j| if mask & (1 << j) != 0 { hi[j] } else { lo[j] })
                .collect()
        })
        .collect();

    let sel = map.selector();
    let mut frames = Vec::with_capacity(enforced.len());
    let mut heuristic_assignment = Vec::with_capacity(enforced.len());
    for &t in &enforced {
        let y_map = sel * &state_maps[t]; // n_y x n_u
        let y_off = sel * &state_offsets[t]; // n_y
        let y_auto = map.apply(&auto_d.states[t]);
        let mut disjuncts = Vec::new();
        let mut nearest = 0usize;
        let mut nearest_viol = f64::INFINITY;
        for (j, poly) in nset_d.subsets[t].polytopes.iter().enumerate() {
            let g = poly.g();
            let h = poly.h();
            let g_u = g * &y_map;
            let rhs = h - g * &y_off;
            let n_f = g.nrows();
            let big_m = DVector::from_fn(n_f, |row, _| match cfg.big_m_mode {
                BigMMode::Fixed(s) => s,
                BigMMode::Auto => {
                    let worst = corners
                        .iter()
                        .map(|c| {
                            (0..n_y).map(|j| g[(row, j)] * c[j]).sum::<f64>() - h[row]
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                    (worst * 1.1).max(1.0)
                }
            });
            // Worst-row violation of the candidate's hull state; inside the
            // polytope this is non-positive.
            let viol = (0..n_f)
                .map(|row| {
                    (0..n_y).map(|c| g[(row, c)] * y_auto.coords[c]).sum::<f64>() - h[row]
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if viol < nearest_viol - 1e-12 {
                nearest_viol = viol;
                nearest = j;
            }
            disjuncts.push(Disjunct { g_u, rhs, big_m });
        }
        frames.push(FrameBlock { t, disjuncts });
        heuristic_assignment.push(nearest);
    }

    Ok(MiqpModel {
        n_u,
        control_dim: m,
        horizon: h_a,
        p_u,
        q_u,
        obj_const,
        frames,
        binary_mode: cfg.binary_mode,
        state_offsets,
        state_maps,
        x_init: x_init.clone(),
        dt,
        heuristic_assignment,
    })
}

/// End-to-end projection: build the model with the candidate trajectory's
/// initial state and run branch-and-bound.
pub fn project(
    nset: &NaturalisticSet,
    dyn_: &LinearDynamics,
    auto_traj: &Trajectory,
    map: &HullStateMap,
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult, ProjectorError> {
    let x_init = auto_traj.states[0].clone();
    let model = build_model(nset, dyn_, auto_traj, map, &x_init, cfg)?;
    solve(&model, cfg)
}
