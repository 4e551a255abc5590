//! Best-first branch-and-bound over the binary cluster flags.
//!
//! Every node carries the set of still-allowed clusters per enforced frame.
//! Its QP relaxation keeps the flags continuous in [0, 1]; fixed flags turn
//! their big-M rows into hard rows (fixed to one) or drop them (fixed to
//! zero). Branching picks the most fractional flag of the earliest
//! fractional frame; the incumbent is seeded by rounding each frame to the
//! cluster nearest the candidate trajectory.
//!
//! Dual active-set node solves produce monotone lower bounds, so a node
//! value is a valid bound even when the iteration cap trips.

use super::*;
use crate::qpsolver::{solve_qp, QpStatus, QuadraticProgram};
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Instant;

const INT_TOL: f64 = 1e-6;
const FEAS_TOL: f64 = 1e-6;

struct Incumbent {
    obj: f64,
    u: DVector<f64>,
    assignment: Vec<usize>,
}

struct OpenNode {
    bound: f64,
    seq: usize,
    allowed: Vec<Vec<usize>>,
    s_vals: Vec<Vec<f64>>,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for OpenNode {}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenNode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.seq.cmp(&other.seq))
    }
}

enum NodeEval {
    Infeasible,
    /// All frames decided; exact objective.
    Leaf { obj: f64, u: DVector<f64> },
    /// Relaxation came out integral; refined by an exact fixed solve.
    Integral {
        bound: f64,
        obj: f64,
        u: DVector<f64>,
        assignment: Vec<usize>,
    },
    Fractional {
        bound: f64,
        s_vals: Vec<Vec<f64>>,
    },
}

/// Solve the mixed-integer projection by exact branch-and-bound.
pub fn solve(model: &MiqpModel, cfg: &ProjectionConfig) -> Result<ProjectionResult, ProjectorError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut nodes = 0usize;
    let mut incumbent: Option<Incumbent> = None;
    let mut pruned_floor = f64::INFINITY;

    let root_allowed: Vec<Vec<usize>> = model.frames.iter().map(|f| (0..f.k()).collect()).collect();
    let all_decided_at_root = root_allowed.iter().all(|a| a.len() == 1);

    // Incumbent seeding: the cluster nearest the candidate trajectory at
    // every frame, computed during model build. Skipped when the root is
    // already fully decided.
    if !all_decided_at_root {
        let seed_assignment = model.heuristic_assignment.clone();
        if let Some((obj, u)) = solve_fixed(model, &seed_assignment)? {
            update_incumbent(&mut incumbent, obj, u, seed_assignment);
        }
    }

    let mut open: BinaryHeap<Reverse<OpenNode>> = BinaryHeap::new();
    let mut seq = 0usize;

    // Root node.
    nodes += 1;
    match evaluate(model, &root_allowed)? {
        NodeEval::Infeasible => {
            return Err(ProjectorError::Infeasible(
                "root relaxation is infeasible".into(),
            ));
        }
        NodeEval::Leaf { obj, u } => {
            let assignment: Vec<usize> = root_allowed.iter().map(|a| a[0]).collect();
            update_incumbent(&mut incumbent, obj, u, assignment);
            let inc = incumbent.unwrap();
            return Ok(finish(model, cfg, inc, obj, nodes, start, ProjectionStatus::Optimal));
        }
        NodeEval::Integral {
            bound,
            obj,
            u,
            assignment,
        } => {
            update_incumbent(&mut incumbent, obj, u, assignment);
            pruned_floor = pruned_floor.min(bound);
        }
        NodeEval::Fractional { bound, s_vals } => {
            // Rounding the root relaxation often lands on the optimal tube;
            // try it before branching.
            let rounded = round_assignment(&root_allowed, &s_vals);
            if let Some((obj, u)) = solve_fixed(model, &rounded)? {
                update_incumbent(&mut incumbent, obj, u, rounded);
            }
            open.push(Reverse(OpenNode {
                bound,
                seq,
                allowed: root_allowed,
                s_vals,
            }));
            seq += 1;
        }
    }

    let mut status = ProjectionStatus::Optimal;
    let mut final_bound: f64;

    loop {
        let Some(Reverse(top)) = open.peek() else {
            final_bound = match (&incumbent, pruned_floor.is_finite()) {
                (Some(inc), true) => inc.obj.min(pruned_floor),
                (Some(inc), false) => inc.obj,
                _ => f64::NEG_INFINITY,
            };
            break;
        };
        let global_bound = top.bound;
        if let Some(inc) = &incumbent {
            if inc.obj - global_bound <= cfg.mip_gap * inc.obj.abs().max(1.0) {
                status = ProjectionStatus::GapReached;
                final_bound = global_bound;
                break;
            }
        }
        if nodes >= cfg.node_limit {
            status = ProjectionStatus::Limit;
            final_bound = global_bound;
            break;
        }
        if let Some(limit) = cfg.time_limit {
            if start.elapsed().as_secs_f64() > limit {
                status = ProjectionStatus::Limit;
                final_bound = global_bound;
                break;
            }
        }

        let Reverse(node) = open.pop().unwrap();
        if let Some(inc) = &incumbent {
            if node.bound >= inc.obj - prune_eps(inc.obj) {
                pruned_floor = pruned_floor.min(node.bound);
                continue;
            }
        }

        let (f_idx, j) = pick_branch(&node.allowed, &node.s_vals);
        for fix_one in [true, false] {
            let mut child_allowed = node.allowed.clone();
            if fix_one {
                child_allowed[f_idx] = vec![j];
            } else {
                child_allowed[f_idx].retain(|&c| c != j);
                if child_allowed[f_idx].is_empty() {
                    continue; // no cluster left at this frame
                }
            }
            nodes += 1;
            match evaluate(model, &child_allowed)? {
                NodeEval::Infeasible => {}
                NodeEval::Leaf { obj, u } => {
                    let assignment: Vec<usize> = child_allowed.iter().map(|a| a[0]).collect();
                    pruned_floor = pruned_floor.min(obj);
                    update_incumbent(&mut incumbent, obj, u, assignment);
                }
                NodeEval::Integral {
                    bound,
                    obj,
                    u,
                    assignment,
                } => {
                    pruned_floor = pruned_floor.min(bound);
                    update_incumbent(&mut incumbent, obj, u, assignment);
                }
                NodeEval::Fractional { bound, s_vals } => {
                    let prunable = incumbent
                        .as_ref()
                        .is_some_and(|inc| bound >= inc.obj - prune_eps(inc.obj));
                    if prunable {
                        pruned_floor = pruned_floor.min(bound);
                    } else {
                        open.push(Reverse(OpenNode {
                            bound,
                            seq,
                            allowed: child_allowed,
                            s_vals,
                        }));
                        seq += 1;
                    }
                }
            }
        }
    }

    match incumbent {
        Some(inc) => {
            if status == ProjectionStatus::Optimal {
                final_bound = final_bound.min(inc.obj);
            }
            Ok(finish(model, cfg, inc, final_bound, nodes, start, status))
        }
        None => {
            if status == ProjectionStatus::Limit {
                Err(ProjectorError::LimitWithoutIncumbent)
            } else {
                Err(ProjectorError::Infeasible(
                    "no binary assignment admits a dynamically feasible trajectory".into(),
                ))
            }
        }
    }
}

fn prune_eps(obj: f64) -> f64 {
    1e-9 * obj.abs().max(1.0)
}

fn update_incumbent(slot: &mut Option<Incumbent>, obj: f64, u: DVector<f64>, assignment: Vec<usize>) {
    let replace = match slot {
        None => true,
        Some(inc) => {
            let tie = 1e-12 * inc.obj.abs().max(1.0);
            obj < inc.obj - tie || ((obj - inc.obj).abs() <= tie && assignment < inc.assignment)
        }
    };
    if replace {
        *slot = Some(Incumbent { obj, u, assignment });
    }
}

fn finish(
    model: &MiqpModel,
    cfg: &ProjectionConfig,
    inc: Incumbent,
    bound: f64,
    nodes: usize,
    start: Instant,
    status: ProjectionStatus,
) -> ProjectionResult {
    let states = model.states_at(&inc.u);
    let controls = model.controls_at(&inc.u);
    let trajectory = Trajectory {
        states,
        dt: model.dt,
        id: "projected".into(),
    };
    ProjectionResult {
        trajectory,
        controls,
        active_clusters: inc.assignment,
        objective: inc.obj,
        bound,
        nodes_explored: nodes,
        wall_time: start.elapsed().as_secs_f64(),
        status,
        config: cfg.clone(),
    }
}

/// Exact QP for a fully fixed assignment (one cluster per enforced frame).
/// Returns the objective (with constant) and the control vector, or None
/// when the assignment is infeasible.
pub fn solve_fixed(model: &MiqpModel, assignment: &[usize]) -> Result<Option<(f64, DVector<f64>)>, ProjectorError> {
    let rows: usize = model
        .frames
        .iter()
        .zip(assignment)
        .map(|(f, &j)| f.disjuncts[j].g_u.nrows())
        .sum();
    let mut a_in = DMatrix::zeros(rows, model.n_u);
    let mut b_in = DVector::zeros(rows);
    let mut r = 0usize;
    for (f, &j) in model.frames.iter().zip(assignment) {
        let d = &f.disjuncts[j];
        let n_f = d.g_u.nrows();
        a_in.rows_mut(r, n_f).copy_from(&d.g_u);
        b_in.rows_mut(r, n_f).copy_from(&d.rhs);
        r += n_f;
    }
    let qp = QuadraticProgram::inequality(model.p_u.clone(), model.q_u.clone(), a_in, b_in)?;
    let iter_cap = 500 + 20 * model.n_u + 2 * rows;
    let sol = solve_qp(&qp, 1e-8, iter_cap)?;
    match sol.status {
        QpStatus::Infeasible => Ok(None),
        QpStatus::Optimal => Ok(Some((sol.objective + model.obj_const, sol.x))),
        QpStatus::IterLimit => {
            // Accept only a verified-feasible point.
            let viol = (&qp.a_in * &sol.x - &qp.b_in).max();
            if viol <= FEAS_TOL {
                Ok(Some((sol.objective + model.obj_const, sol.x)))
            } else {
                Ok(None)
            }
        }
    }
}

/// Solve one node's QP relaxation (binaries continuous in [0,1]).
fn evaluate(model: &MiqpModel, allowed: &[Vec<usize>]) -> Result<NodeEval, ProjectorError> {
    let undecided: Vec<usize> = (0..allowed.len()).filter(|&f| allowed[f].len() > 1).collect();
    if undecided.is_empty() {
        let assignment: Vec<usize> = allowed.iter().map(|a| a[0]).collect();
        return Ok(match solve_fixed(model, &assignment)? {
            Some((obj, u)) => NodeEval::Leaf { obj, u },
            None => NodeEval::Infeasible,
        });
    }

    // Variable layout: controls, then one flag per (undecided frame,
    // allowed cluster) in frame order.
    let n_u = model.n_u;
    let mut s_index = Vec::new(); // (frame idx, cluster) per s variable
    for &f in &undecided {
        for &j in &allowed[f] {
            s_index.push((f, j));
        }
    }
    let n_s = s_index.len();
    let n = n_u + n_s;

    let mut rows = 0usize;
    for (f, a) in allowed.iter().enumerate() {
        if a.len() == 1 {
            rows += model.frames[f].disjuncts[a[0]].g_u.nrows();
        } else {
            for &j in a {
                rows += model.frames[f].disjuncts[j].g_u.nrows();
            }
        }
    }
    rows += 2 * n_s; // 0 <= s <= 1
    let alo_rows = if model.binary_mode == BinaryMode::AtLeastOne {
        undecided.len()
    } else {
        0
    };
    rows += alo_rows;
    let eq_rows = if model.binary_mode == BinaryMode::ExactlyOne {
        undecided.len()
    } else {
        0
    };

    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (n_u, n_u)).copy_from(&model.p_u);
    for i in 0..n_s {
        p[(n_u + i, n_u + i)] = 2.0 * RIDGE;
    }
    let mut q = DVector::zeros(n);
    q.rows_mut(0, n_u).copy_from(&model.q_u);

    let mut a_in = DMatrix::zeros(rows, n);
    let mut b_in = DVector::zeros(rows);
    let mut r = 0usize;
    for (f, a) in allowed.iter().enumerate() {
        if a.len() == 1 {
            let d = &model.frames[f].disjuncts[a[0]];
            let n_f = d.g_u.nrows();
            a_in.view_mut((r, 0), (n_f, n_u)).copy_from(&d.g_u);
            b_in.rows_mut(r, n_f).copy_from(&d.rhs);
            r += n_f;
        } else {
            for &j in a {
                let d = &model.frames[f].disjuncts[j];
                let n_f = d.g_u.nrows();
                let sv = n_u + s_index.iter().position(|&(ff, jj)| ff == f && jj == j).unwrap();
                a_in.view_mut((r, 0), (n_f, n_u)).copy_from(&d.g_u);
                for row in 0..n_f {
                    // g_u u + S s <= rhs + S
                    a_in[(r + row, sv)] = d.big_m[row];
                    b_in[r + row] = d.rhs[row] + d.big_m[row];
                }
                r += n_f;
            }
        }
    }
    for i in 0..n_s {
        a_in[(r, n_u + i)] = 1.0;
        b_in[r] = 1.0;
        r += 1;
        a_in[(r, n_u + i)] = -1.0;
        b_in[r] = 0.0;
        r += 1;
    }
    if model.binary_mode == BinaryMode::AtLeastOne {
        for &f in &undecided {
            for (sv, &(ff, _)) in s_index.iter().enumerate() {
                if ff == f {
                    a_in[(r, n_u + sv)] = -1.0;
                }
            }
            b_in[r] = -1.0;
            r += 1;
        }
    }
    debug_assert_eq!(r, rows);

    let (a_eq, b_eq) = if model.binary_mode == BinaryMode::ExactlyOne {
        let mut a_eq = DMatrix::zeros(eq_rows, n);
        let b_eq = DVector::from_element(eq_rows, 1.0);
        for (row, &f) in undecided.iter().enumerate() {
            for (sv, &(ff, _)) in s_index.iter().enumerate() {
                if ff == f {
                    a_eq[(row, n_u + sv)] = 1.0;
                }
            }
        }
        (a_eq, b_eq)
    } else {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    };

    let qp = QuadraticProgram::new(p, q, a_eq, b_eq, a_in, b_in)?;
    let iter_cap = 500 + 20 * n + 2 * rows;
    let sol = solve_qp(&qp, 1e-8, iter_cap)?;
    if sol.status == QpStatus::Infeasible {
        return Ok(NodeEval::Infeasible);
    }
    // Dual active-set objectives increase monotonically, so even an
    // iteration-capped value is a valid lower bound.
    let bound = sol.objective + model.obj_const - RIDGE * undecided.len() as f64;

    // Collect s values per frame for branching / integrality.
    let mut s_vals: Vec<Vec<f64>> = allowed.iter().map(|a| vec![1.0; a.len()]).collect();
    for (sv, &(f, _)) in s_index.iter().enumerate() {
        let pos = allowed[f]
            .iter()
            .position(|&j| j == s_index[sv].1)
            .unwrap();
        s_vals[f][pos] = sol.x[n_u + sv];
    }

    let integral = sol.status == QpStatus::Optimal
        && s_vals
            .iter()
            .flatten()
            .all(|&v| v < INT_TOL || (v - 1.0).abs() < INT_TOL);
    if integral {
        let assignment = round_assignment(allowed, &s_vals);
        if let Some((obj, u)) = solve_fixed(model, &assignment)? {
            return Ok(NodeEval::Integral {
                bound,
                obj,
                u,
                assignment,
            });
        }
    }
    Ok(NodeEval::Fractional { bound, s_vals })
}

/// Per-frame argmax of the relaxed flags, ties to the lowest cluster index.
fn round_assignment(allowed: &[Vec<usize>], s_vals: &[Vec<f64>]) -> Vec<usize> {
    allowed
        .iter()
        .zip(s_vals)
        .map(|(a, sv)| {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (pos, &j) in a.iter().enumerate() {
                if sv[pos] > best_v + 1e-15 {
                    best_v = sv[pos];
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Enumerate the MIQP exactly: every per-frame cluster choice, each solved
/// as a fixed QP. Exposed for oracle-style comparisons and benchmarks.
pub fn enumerate_assignments(model: &MiqpModel) -> Result<Option<(f64, Vec<usize>)>, ProjectorError> {
    let ks: Vec<usize> = model.frames.iter().map(FrameBlock::k).collect();
    let mut assignment = vec![0usize; ks.len()];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if let Some((obj, _)) = solve_fixed(model, &assignment)? {
            let better = match &best {
                None => true,
                Some((b, a)) => {
                    let tie = 1e-12 * b.abs().max(1.0);
                    obj < b - tie || ((obj - b).abs() <= tie && assignment < *a)
                }
            };
            if better {
                best = Some((obj, assignment.clone()));
            }
        }
        // Odometer increment over the mixed-radix assignment vector.
        let mut pos = ks.len();
        loop {
            if pos == 0 {
                return Ok(best);
            }
            pos -= 1;
            assignment[pos] += 1;
            if assignment[pos] < ks[pos] {
                break;
            }
            assignment[pos] = 0;
        }
    }
}

/// Earliest frame with a fractional flag; within it the flag closest to 1/2
/// (ties to the lowest cluster index).
fn pick_branch(allowed: &[Vec<usize>], s_vals: &[Vec<f64>]) -> (usize, usize) {
    for (f, a) in allowed.iter().enumerate() {
        if a.len() < 2 {
            continue;
        }
        let sv = &s_vals[f];
        let frac: Vec<(usize, f64)> = a
            .iter()
            .enumerate()
            .filter(|(pos, _)| {
                let v = sv[*pos];
                v >= INT_TOL && (v - 1.0).abs() >= INT_TOL
            })
            .map(|(pos, &j)| (j, sv[pos]))
            .collect();
        if frac.is_empty() {
            continue;
        }
        let (j, _) = frac
            .iter()
            .copied()
            .min_by(|x, y| {
                (x.1 - 0.5)
                    .abs()
                    .total_cmp(&(y.1 - 0.5).abs())
                    .then(x.0.cmp(&y.0))
            })
            .unwrap();
        return (f, j);
    }
    // Fallback: first undecided frame, lowest cluster.
    for (f, a) in allowed.iter().enumerate() {
        if a.len() > 1 {
            return (f, a[0]);
        }
    }
    unreachable!("pick_branch called on a fully decided node");
}

#[cfg(test)]
mod tests {
    use super::super::testutil::fork_setup;
    use super::*;
    use crate::dynamics::{double_integrator, rollout, ControlSequence};
    use crate::geometry::{contains, convex_hull, HullPoint};
    use crate::natset::{HullStateMap, NaturalisticSet, NaturalisticSubset, Provenance};
    use crate::qpsolver;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn zero_controls(n: usize) -> ControlSequence {
        ControlSequence::new(vec![DVector::zeros(2); n]).unwrap()
    }

    /// A random but feasible small instance: hulls are boxes around a seed
    /// rollout's positions plus decoy boxes elsewhere.
    pub(crate) fn random_instance(
        seed: u64,
        max_h: usize,
        max_k: usize,
    ) -> (NaturalisticSet, crate::dynamics::LinearDynamics, crate::dynamics::Trajectory) {
        let mut rng = StdRng::seed_from_u64(seed);
        let dt = 0.25;
        let h = rng.random_range(3..=max_h);
        let dyn_ = double_integrator(dt, 1.0).unwrap();
        let x0 = DVector::from_row_slice(&[0.0, rng.random_range(0.5..2.0), 0.0, rng.random_range(-0.5..0.5)]);
        let seed_u = ControlSequence::new(
            (0..h)
                .map(|_| DVector::from_row_slice(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
                .collect(),
        )
        .unwrap();
        let seed_traj = rollout(&dyn_, &x0, &seed_u, "seed").unwrap();

        let map = HullStateMap::position();
        let box_at = |cx: f64, cy: f64, r: f64| -> crate::geometry::ConvexPolytope {
            convex_hull(
                &[
                    HullPoint::xy(cx - r, cy - r),
                    HullPoint::xy(cx + r, cy - r),
                    HullPoint::xy(cx + r, cy + r),
                    HullPoint::xy(cx - r, cy + r),
                ],
                3,
            )
            .unwrap()
        };
        let mut subsets = Vec::new();
        for t in 0..=h {
            let y = map.apply(&seed_traj.states[t]);
            let k = rng.random_range(1..=max_k);
            let mut polys = vec![box_at(
                y.x() + rng.random_range(-0.3..0.3),
                y.y() + rng.random_range(-0.3..0.3),
                rng.random_range(0.8..2.0),
            )];
            for _ in 1..k {
                polys.push(box_at(
                    y.x() + rng.random_range(-4.0..4.0),
                    y.y() + rng.random_range(-4.0..4.0),
                    rng.random_range(0.5..1.5),
                ));
            }
            subsets.push(NaturalisticSubset {
                t,
                polytopes: polys,
                outlier_count: 0,
            });
        }
        let nset = NaturalisticSet {
            subsets,
            dt,
            hull_state_dim: 2,
            provenance: Provenance {
                dataset_sha256: "test".into(),
                clusterer: crate::clustering::ClustererConfig {
                    algorithm: crate::clustering::ClusterAlgorithm::Kmeans,
                    k: 1,
                    min_cluster_size: 3,
                    epsilon: 1.0,
                    seed,
                    max_iterations: 1,
                },
                created_unix: 0,
            },
        };

        // Candidate trajectory: a perturbed rollout from the same start.
        let auto_u = ControlSequence::new(
            seed_u
                .controls
                .iter()
                .map(|u| u + DVector::from_row_slice(&[rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]))
                .collect(),
        )
        .unwrap();
        let auto = rollout(&dyn_, &x0, &auto_u, "auto").unwrap();
        (nset, dyn_, auto)
    }

    fn default_cfg() -> ProjectionConfig {
        ProjectionConfig::default()
    }

    #[test]
    fn trajectory_inside_tube_projects_to_itself() {
        // Candidate rides the center of a unimodal tube; with gamma = 0 the
        // projection is a fixed point.
        let (_, nset, dyn_) = fork_setup(5, 12, 4, 0.2, 1);
        let auto = {
            let x0 = DVector::from_row_slice(&[0.0, 1.06, 0.16, 0.0]);
            rollout(&dyn_, &x0, &zero_controls(11), "auto").unwrap()
        };
        let cfg = ProjectionConfig {
            gamma: 0.0,
            ..default_cfg()
        };
        let map = HullStateMap::position();
        let inside = crate::natset::membership(&nset, &auto, &map, 1e-9).unwrap();
        assert!(inside.iter().all(|&b| b), "fixture: candidate must start inside");
        let res = project(&nset, &dyn_, &auto, &map, &cfg).unwrap();
        assert!(res.objective.abs() <= 1e-6, "objective {}", res.objective);
        for (a, b) in res.trajectory.states.iter().zip(&auto.states) {
            assert!((a - b).amax() <= 1e-5);
        }
    }

    #[test]
    fn unimodal_reduction_single_node() {
        let (_, nset, dyn_) = fork_setup(5, 12, 4, 0.2, 1);
        let auto = {
            let x0 = DVector::from_row_slice(&[0.0, 1.1, 0.2, 0.0]);
            rollout(&dyn_, &x0, &zero_controls(11), "auto").unwrap()
        };
        let map = HullStateMap::position();
        let res = project(&nset, &dyn_, &auto, &map, &default_cfg()).unwrap();
        assert_eq!(res.nodes_explored, 1);
        assert_eq!(res.status, ProjectionStatus::Optimal);

        // Directly formulated convex QP over the same hard rows.
        let model = build_model(&nset, &dyn_, &auto, &map, &auto.states[0], &default_cfg()).unwrap();
        let assignment = vec![0usize; model.frames.len()];
        let (direct_obj, _) = solve_fixed(&model, &assignment).unwrap().unwrap();
        assert!((res.objective - direct_obj).abs() <= 1e-9 * direct_obj.abs().max(1.0));
    }

    #[test]
    fn fork_projection_selects_nearer_branch() {
        let (data, nset, dyn_) = fork_setup(5, 30, 8, 0.2, 2);
        // Straight candidate biased to the straight branch: it shares a
        // branch-0 trajectory's start, which also guarantees feasibility.
        let auto = {
            let x0 = data[2].states[0].clone();
            rollout(&dyn_, &x0, &zero_controls(29), "auto").unwrap()
        };
        let map = HullStateMap::position();
        let res = project(&nset, &dyn_, &auto, &map, &default_cfg()).unwrap();
        assert!(matches!(res.status, ProjectionStatus::Optimal | ProjectionStatus::GapReached));

        // The projected trajectory must stay in the chosen polytopes and
        // stay near the straight branch (small |y|).
        let model = build_model(&nset, &dyn_, &auto, &map, &auto.states[0], &default_cfg()).unwrap();
        for (frame, &c) in model.frames.iter().zip(&res.active_clusters) {
            let y = map.apply(&res.trajectory.states[frame.t]);
            let poly = &nset.subsets[frame.t].polytopes[c];
            assert!(contains(poly, &y, 1e-6));
        }
        let y_end = res.trajectory.states.last().unwrap()[2].abs();
        assert!(y_end < 1.0, "projection drifted to the turning branch: y = {y_end}");

        // Forcing the complementary assignment is strictly worse.
        let flipped: Vec<usize> = res
            .active_clusters
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let k = model.frames[i].k();
                (c + 1) % k
            })
            .collect();
        if let Some((forced_obj, _)) = solve_fixed(&model, &flipped).unwrap() {
            assert!(
                forced_obj > res.objective + 1e-6,
                "flipped assignment should cost more: {} vs {}",
                forced_obj,
                res.objective
            );
        }
    }

    #[test]
    fn exhaustive_enumeration_matches_bnb() {
        let mut tested = 0;
        for seed in 0..12u64 {
            let (nset, dyn_, auto) = random_instance(seed, 6, 3);
            let map = HullStateMap::position();
            for mode in [BinaryMode::ExactlyOne, BinaryMode::AtLeastOne] {
                let cfg = ProjectionConfig {
                    binary_mode: mode,
                    ..default_cfg()
                };
                let model = build_model(&nset, &dyn_, &auto, &map, &auto.states[0], &cfg).unwrap();
                let brute = enumerate_assignments(&model).unwrap();
                let got = solve(&model, &cfg);
                match (brute, got) {
                    (Some((b_obj, _)), Ok(res)) => {
                        tested += 1;
                        assert!(
                            (res.objective - b_obj).abs() <= 1e-6 * b_obj.abs().max(1.0),
                            "seed {seed} mode {mode:?}: bnb {} vs enumeration {}",
                            res.objective,
                            b_obj
                        );
                        assert!(res.objective + 1e-9 >= res.bound);
                    }
                    (None, Err(ProjectorError::Infeasible(_))) => {}
                    (b, g) => panic!("seed {seed}: enumeration {b:?} vs bnb {g:?}"),
                }
            }
        }
        assert!(tested >= 8, "too few feasible instances exercised: {tested}");
    }

    #[test]
    fn feasibility_contract_on_random_instances() {
        for seed in 100..110u64 {
            let (nset, dyn_, auto) = random_instance(seed, 6, 3);
            let map = HullStateMap::position();
            let Ok(res) = project(&nset, &dyn_, &auto, &map, &default_cfg()) else {
                continue;
            };
            // Dynamics rollout reproduces the reported states.
            let re = rollout(&dyn_, &res.trajectory.states[0], &res.controls, "re").unwrap();
            for (a, b) in re.states.iter().zip(&res.trajectory.states) {
                assert!((a - b).amax() <= 1e-8);
            }
            // Membership at every enforced frame.
            let model = build_model(&nset, &dyn_, &auto, &map, &auto.states[0], &default_cfg()).unwrap();
            for (frame, &c) in model.frames.iter().zip(&res.active_clusters) {
                let y = map.apply(&res.trajectory.states[frame.t]);
                assert!(contains(&nset.subsets[frame.t].polytopes[c], &y, 1e-6));
            }
            // Big-M validity: rows of non-chosen clusters hold once relaxed.
            let u = controls_to_vec(&res);
            for (frame, &c) in model.frames.iter().zip(&res.active_clusters) {
                for (j, d) in frame.disjuncts.iter().enumerate() {
                    if j == c {
                        continue;
                    }
                    let lhs = &d.g_u * &u;
                    for row in 0..lhs.len() {
                        assert!(
                            lhs[row] <= d.rhs[row] + d.big_m[row] + 1e-6,
                            "big-M clipped a relaxed row"
                        );
                    }
                }
            }
        }
    }

    fn controls_to_vec(res: &ProjectionResult) -> DVector<f64> {
        let m = res.controls.controls[0].len();
        let mut u = DVector::zeros(m * res.controls.len());
        for (t, c) in res.controls.controls.iter().enumerate() {
            for i in 0..m {
                u[m * t + i] = c[i];
            }
        }
        u
    }

    #[test]
    fn frame_skip_objective_monotone() {
        let (data, nset, dyn_) = fork_setup(5, 25, 8, 0.2, 2);
        let auto = {
            let x0 = data[1].states[0].clone();
            rollout(&dyn_, &x0, &zero_controls(24), "auto").unwrap()
        };
        let map = HullStateMap::position();
        let mut last = f64::INFINITY;
        for skip in [1usize, 2, 4, 8] {
            let cfg = ProjectionConfig {
                frame_skip: skip,
                ..default_cfg()
            };
            let res = project(&nset, &dyn_, &auto, &map, &cfg).unwrap();
            assert!(
                res.objective <= last + 1e-6,
                "objective rose from {last} to {} at frame skip {skip}",
                res.objective
            );
            last = res.objective;
        }
    }

    #[test]
    fn unimodal_vs_multimodal_coincident_sets_agree() {
        // Identical slice data clustered with k = 1 gives the same feasible
        // tube as the direct unimodal set; objectives must agree.
        let (_, nset, dyn_) = fork_setup(6, 14, 5, 0.2, 1);
        let auto = {
            let x0 = DVector::from_row_slice(&[0.0, 1.06, 0.25, 0.0]);
            rollout(&dyn_, &x0, &zero_controls(13), "auto").unwrap()
        };
        let map = HullStateMap::position();
        let res_direct = project(&nset, &dyn_, &auto, &map, &default_cfg()).unwrap();

        // Re-wrap every subset as a "multimodal" set that lists the same
        // polytope twice: the projector must still find the same optimum.
        let doubled = NaturalisticSet {
            subsets: nset
                .subsets
                .iter()
                .map(|s| NaturalisticSubset {
                    t: s.t,
                    polytopes: vec![s.polytopes[0].clone(), s.polytopes[0].clone()],
                    outlier_count: s.outlier_count,
                })
                .collect(),
            dt: nset.dt,
            hull_state_dim: nset.hull_state_dim,
            provenance: nset.provenance.clone(),
        };
        let res_multi = project(&doubled, &dyn_, &auto, &map, &default_cfg()).unwrap();
        assert!(
            (res_direct.objective - res_multi.objective).abs()
                <= 1e-6 * res_direct.objective.abs().max(1.0)
        );
    }

    #[test]
    fn deterministic_solves() {
        let (data, nset, dyn_) = fork_setup(5, 20, 7, 0.2, 2);
        let auto = {
            let x0 = data[3].states[0].clone();
            rollout(&dyn_, &x0, &zero_controls(19), "auto").unwrap()
        };
        let map = HullStateMap::position();
        let a = project(&nset, &dyn_, &auto, &map, &default_cfg()).unwrap();
        let b = project(&nset, &dyn_, &auto, &map, &default_cfg()).unwrap();
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.active_clusters, b.active_clusters);
        assert_eq!(a.nodes_explored, b.nodes_explored);
    }

    #[test]
    fn infeasible_when_tube_unreachable() {
        // A set far from the initial state with tight dynamics cannot be
        // reached in one step.
        let dt = 0.1;
        let dyn_ = double_integrator(dt, 1.0).unwrap();
        let box_far = convex_hull(
            &[
                HullPoint::xy(100.0, 100.0),
                HullPoint::xy(101.0, 100.0),
                HullPoint::xy(101.0, 101.0),
                HullPoint::xy(100.0, 101.0),
            ],
            3,
        )
        .unwrap();
        let subsets = (0..=2)
            .map(|t| NaturalisticSubset {
                t,
                polytopes: vec![box_far.clone()],
                outlier_count: 0,
            })
            .collect();
        let nset = NaturalisticSet {
            subsets,
            dt,
            hull_state_dim: 2,
            provenance: Provenance {
                dataset_sha256: "test".into(),
                clusterer: crate::clustering::ClustererConfig {
                    algorithm: crate::clustering::ClusterAlgorithm::Kmeans,
                    k: 1,
                    min_cluster_size: 3,
                    epsilon: 1.0,
                    seed: 0,
                    max_iterations: 1,
                },
                created_unix: 0,
            },
        };
        let auto = rollout(&dyn_, &DVector::from_row_slice(&[0.0, 1.0, 0.0, 0.0]), &zero_controls(2), "auto").unwrap();
        let map = HullStateMap::position();
        // Fixed big-M keeps the relaxation bounded enough to certify.
        let cfg = ProjectionConfig {
            big_m_mode: BigMMode::Fixed(500.0),
            ..default_cfg()
        };
        match project(&nset, &dyn_, &auto, &map, &cfg) {
            Err(ProjectorError::Infeasible(_)) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn model_rows_agree_with_polytope_geometry() {
        // The u-space row value g_u . u must equal G y(x_t(u)) - G y(offset)
        // for any u, tying the substituted rows back to the polytopes.
        let (nset, dyn_, auto) = random_instance(42, 5, 2);
        let map = HullStateMap::position();
        let model = build_model(&nset, &dyn_, &auto, &map, &auto.states[0], &default_cfg()).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        let u = DVector::from_fn(model.n_u, |_, _| rng.random_range(-1.0..1.0));
        let states = model.states_at(&u);
        let sel = map.selector();
        for frame in &model.frames {
            for (j, d) in frame.disjuncts.iter().enumerate() {
                let lhs = &d.g_u * &u;
                let poly = &nset.subsets[frame.t].polytopes[j];
                let direct = poly.g() * (sel * &states[frame.t]) - poly.g() * (sel * &model.state_offsets[frame.t]);
                assert!((lhs - direct).amax() < 1e-8);
            }
        }
    }
}
