//! Dataset ingestion: CSV loading for recorded driving data, start/end-set
//! task filtering, and seeded synthetic scenario generators (curved road,
//! stop-and-go lane, multi-exit fork) for desk-scale experiments.
//!
//! CSV schema (header, exact order):
//! `actor_id,frame,x,y,vx,vy,ax,ay,heading,class` with dot-decimal numbers
//! and UTF-8 text. One trajectory per actor; frames must be contiguous and
//! increasing. States map to `[p_x, v_x, p_y, v_y]` at 25 Hz unless a
//! different sampling period is given.
//!
//! Synthetic trajectories are produced by rolling piecewise control profiles
//! through the exact double-integrator dynamics, so every generated
//! trajectory is dynamically feasible by construction (which in turn
//! guarantees the projection problem built on them is feasible).

use crate::dynamics::{double_integrator, rollout, ControlSequence, Trajectory};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const CSV_HEADER: [&str; 10] = [
    "actor_id", "frame", "x", "y", "vx", "vy", "ax", "ay", "heading", "class",
];

/// Default sampling period for recorded data (25 frames per second).
pub const DEFAULT_DT: f64 = 0.04;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("actor {actor} has non-contiguous frames")]
    NonContiguousFrames { actor: String },
    #[error("actor {actor} has fewer than 2 frames")]
    ActorTooShort { actor: String },
    #[error("bad branch proportions: {0}")]
    BadProportion(String),
    #[error("synthetic scenarios need at least 6 trajectories, got {0}")]
    TooFewTrajectories(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorClass {
    Car,
    Truck,
    Bicycle,
    Pedestrian,
    Other,
}

impl ActorClass {
    fn parse(s: &str) -> ActorClass {
        match s {
            "car" => ActorClass::Car,
            "truck" => ActorClass::Truck,
            "bicycle" => ActorClass::Bicycle,
            "pedestrian" => ActorClass::Pedestrian,
            _ => ActorClass::Other,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            ActorClass::Car => "car",
            ActorClass::Truck => "truck",
            ActorClass::Bicycle => "bicycle",
            ActorClass::Pedestrian => "pedestrian",
            ActorClass::Other => "other",
        }
    }
}

/// One annotated row of recorded data.
#[derive(Debug, Clone, PartialEq)]
pub struct RawActorState {
    pub actor_id: String,
    pub frame: i64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
    pub heading: f64,
    pub actor_class: ActorClass,
}

/// A loaded trajectory together with its actor class (the class drives the
/// moving-vehicle filter but is not part of the dynamic state).
#[derive(Debug, Clone, PartialEq)]
pub struct ActorTrajectory {
    pub trajectory: Trajectory,
    pub class: ActorClass,
}

impl ActorTrajectory {
    pub fn car(trajectory: Trajectory) -> Self {
        Self {
            trajectory,
            class: ActorClass::Car,
        }
    }
}

/// Start/end regions for task filtering, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RegionSpec {
    Circle { center: [f64; 2], radius: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl RegionSpec {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            RegionSpec::Circle { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                dx * dx + dy * dy <= radius * radius
            }
            RegionSpec::Polygon { vertices } => {
                // Even-odd ray casting.
                let n = vertices.len();
                let mut inside = false;
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    if (a[1] > p[1]) != (b[1] > p[1]) {
                        let x_cross = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                        if p[0] < x_cross {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }
}

/// Indicator-style task filter: moving vehicles that begin in the start set
/// and (when given) end in the end set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub start: RegionSpec,
    #[serde(default)]
    pub end: Option<RegionSpec>,
    #[serde(default = "default_true")]
    pub moving_only: bool,
    #[serde(default = "default_min_speed")]
    pub min_speed: f64,
}

fn default_true() -> bool {
    true
}
fn default_min_speed() -> f64 {
    0.5
}

/// Load recorded trajectories at the default 25 Hz.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<ActorTrajectory>, IngestError> {
    load_csv_with_dt(path, DEFAULT_DT)
}

pub fn load_csv_with_dt(path: impl AsRef<Path>, dt: f64) -> Result<Vec<ActorTrajectory>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != CSV_HEADER {
            return Err(IngestError::Parse {
                line: 1,
                message: format!("header {:?} does not match {:?}", got.join(","), CSV_HEADER.join(",")),
            });
        }
    }

    // Group rows per actor in first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut rows: std::collections::HashMap<String, Vec<RawActorState>> = std::collections::HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| -> Result<&str, IngestError> {
            record.get(idx).ok_or(IngestError::Parse {
                line,
                message: format!("missing column {}", CSV_HEADER[idx]),
            })
        };
        let num = |idx: usize| -> Result<f64, IngestError> {
            let raw = field(idx)?;
            raw.parse().map_err(|_| IngestError::Parse {
                line,
                message: format!("column {} is not a number: {raw:?}", CSV_HEADER[idx]),
            })
        };
        let actor_id = field(0)?.to_string();
        let frame: i64 = field(1)?.parse().map_err(|_| IngestError::Parse {
            line,
            message: format!("column frame is not an integer: {:?}", field(1).unwrap_or("")),
        })?;
        let state = RawActorState {
            actor_id: actor_id.clone(),
            frame,
            position: [num(2)?, num(3)?],
            velocity: [num(4)?, num(5)?],
            acceleration: [num(6)?, num(7)?],
            heading: num(8)?,
            actor_class: ActorClass::parse(field(9)?),
        };
        if !rows.contains_key(&actor_id) {
            order.push(actor_id.clone());
        }
        rows.entry(actor_id).or_default().push(state);
    }

    let mut out = Vec::with_capacity(order.len());
    for actor in order {
        let states_raw = rows.remove(&actor).unwrap();
        for pair in states_raw.windows(2) {
            if pair[1].frame != pair[0].frame + 1 {
                return Err(IngestError::NonContiguousFrames { actor });
            }
        }
        if states_raw.len() < 2 {
            return Err(IngestError::ActorTooShort { actor });
        }
        let states: Vec<DVector<f64>> = states_raw
            .iter()
            .map(|r| DVector::from_row_slice(&[r.position[0], r.velocity[0], r.position[1], r.velocity[1]]))
            .collect();
        let class = states_raw[0].actor_class.clone();
        let trajectory = Trajectory::new(states, dt, actor).map_err(|e| IngestError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        out.push(ActorTrajectory { trajectory, class });
    }
    Ok(out)
}

/// Write trajectories back out in the documented schema. Accelerations and
/// headings are not part of the in-memory state and are written as zeros.
pub fn write_csv(path: impl AsRef<Path>, actors: &[ActorTrajectory]) -> Result<(), IngestError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{}", CSV_HEADER.join(","))?;
    for actor in actors {
        for (frame, s) in actor.trajectory.states.iter().enumerate() {
            writeln!(
                file,
                "{},{},{},{},{},{},0,0,0,{}",
                actor.trajectory.id,
                frame,
                s[0],
                s[2],
                s[1],
                s[3],
                actor.class.label()
            )?;
        }
    }
    Ok(())
}

/// Keep trajectories that satisfy the task filter. Each kept trajectory is
/// re-indexed so that its first frame inside the start set becomes t = 0;
/// with no end set given the end clause is vacuously true. Order is
/// preserved.
pub fn filter_tasks(actors: &[ActorTrajectory], spec: &FilterSpec) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for actor in actors {
        if spec.moving_only {
            if actor.class != ActorClass::Car {
                continue;
            }
            let mean_speed: f64 = actor
                .trajectory
                .states
                .iter()
                .map(|s| (s[1] * s[1] + s[3] * s[3]).sqrt())
                .sum::<f64>()
                / actor.trajectory.states.len() as f64;
            if mean_speed < spec.min_speed {
                continue;
            }
        }
        let pos = |s: &DVector<f64>| [s[0], s[2]];
        let Some(first_in) = actor
            .trajectory
            .states
            .iter()
            .position(|s| spec.start.contains(pos(s)))
        else {
            continue;
        };
        let states: Vec<DVector<f64>> = actor.trajectory.states[first_in..].to_vec();
        if states.len() < 2 {
            continue;
        }
        if let Some(end) = &spec.end {
            if !end.contains(pos(states.last().unwrap())) {
                continue;
            }
        }
        out.push(Trajectory {
            states,
            dt: actor.trajectory.dt,
            id: actor.trajectory.id.clone(),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    CurvedRoad,
    StopGoLane,
    Fork { branches: usize },
}

/// Full synthetic scenario description; the JSON form feeds the pipeline
/// config (`{"kind":"fork","branches":3,"n_trajectories":63,...}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub kind: ScenarioKind,
    pub n_trajectories: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_split_frame")]
    pub split_frame: usize,
    /// Fork branch proportions; uniform when omitted. Must sum to 1.
    #[serde(default)]
    pub proportions: Option<Vec<f64>>,
}

fn default_horizon() -> usize {
    300
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_split_frame() -> usize {
    100
}

/// Convenience constructor with the documented defaults (300 frames at
/// 25 Hz, fork split at frame 100, uniform proportions).
pub fn synth_scenario(
    kind: ScenarioKind,
    n_trajectories: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<Trajectory>, IngestError> {
    synth_scenario_with(&SynthSpec {
        kind,
        n_trajectories,
        noise_sigma,
        seed,
        horizon: default_horizon(),
        dt: default_dt(),
        split_frame: default_split_frame(),
        proportions: None,
    })
}

pub fn synth_scenario_with(spec: &SynthSpec) -> Result<Vec<Trajectory>, IngestError> {
    if spec.n_trajectories < 6 {
        return Err(IngestError::TooFewTrajectories(spec.n_trajectories));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match &spec.kind {
        ScenarioKind::CurvedRoad => Ok(curved_road(spec, &mut rng)),
        ScenarioKind::StopGoLane => Ok(stop_go_lane(spec, &mut rng)),
        ScenarioKind::Fork { branches } => fork(spec, *branches, &mut rng),
    }
}

fn jitter(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    // Box-Muller keeps the dependency surface small and the stream stable.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Proportional (largest-remainder) branch counts, then a seeded shuffle of
/// the branch labels so datasets interleave branches.
fn branch_labels(n: usize, proportions: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut counts: Vec<usize> = proportions.iter().map(|p| (p * n as f64).floor() as usize).collect();
    let mut remainders: Vec<(usize, f64)> = proportions
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p * n as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut short = n - counts.iter().sum::<usize>();
    for (i, _) in remainders {
        if short == 0 {
            break;
        }
        counts[i] += 1;
        short -= 1;
    }
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(b, &c)| std::iter::repeat(b).take(c))
        .collect();
    // Fisher-Yates with the scenario RNG.
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    labels
}

fn roll(spec: &SynthSpec, x0: DVector<f64>, controls: Vec<DVector<f64>>, id: String) -> Trajectory {
    let dyn_ = double_integrator(spec.dt, 1.0).expect("positive dt");
    let u = ControlSequence::new(controls).expect("consistent controls");
    rollout(&dyn_, &x0, &u, id).expect("rollout dimensions")
}

/// Vehicles following a leftward-curving lane: constant-ish speed with a
/// centripetal lateral force, plus per-vehicle speed/offset jitter.
fn curved_road(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Trajectory> {
    let omega = 0.08; // rad/s of heading change
    (0..spec.n_trajectories)
        .map(|i| {
            let speed = 8.0 + jitter(rng, 0.4 * spec.noise_sigma);
            let y_off = jitter(rng, spec.noise_sigma);
            let x0 = DVector::from_row_slice(&[0.0, speed, y_off, 0.0]);
            let mut v = [speed, 0.0];
            let controls: Vec<DVector<f64>> = (0..spec.horizon)
                .map(|_| {
                    // Rotate the velocity estimate by omega*dt and supply the
                    // force that realizes the turn under unit mass.
                    let f = [-omega * v[1], omega * v[0]];
                    v = [v[0] + spec.dt * f[0], v[1] + spec.dt * f[1]];
                    DVector::from_row_slice(&f)
                })
                .collect();
            roll(spec, x0, controls, format!("curve-{i}"))
        })
        .collect()
}

/// A straight lane where a stop zone splits behavior into two modes: some
/// vehicles barely slow, others nearly stop before resuming. The bimodal
/// speed profile is what multimodal clustering is meant to expose.
fn stop_go_lane(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Trajectory> {
    let v_cruise = 8.0;
    let stop_x = 40.0;
    (0..spec.n_trajectories)
        .map(|i| {
            let stops = i % 2 == 0;
            let v_slow = if stops { 0.4 } else { 6.0 } + jitter(rng, 0.1 * spec.noise_sigma).abs();
            let speed0 = v_cruise + jitter(rng, 0.3 * spec.noise_sigma);
            let y_off = jitter(rng, spec.noise_sigma);
            let x0 = DVector::from_row_slice(&[0.0, speed0, y_off, 0.0]);
            let mut state = x0.clone();
            let dyn_ = double_integrator(spec.dt, 1.0).unwrap();
            let mut controls = Vec::with_capacity(spec.horizon);
            for _ in 0..spec.horizon {
                // Target speed depends on distance to the stop zone.
                let x = state[0];
                let v_target = if (stop_x - 12.0..stop_x).contains(&x) {
                    v_slow
                } else {
                    v_cruise
                };
                let fx = (2.0 * (v_target - state[1])).clamp(-6.0, 4.0);
                // Lateral spring keeps vehicles near their lane offset.
                let fy = -1.5 * (state[2] - y_off) - 2.0 * state[3];
                let u = DVector::from_row_slice(&[fx, fy]);
                state = dyn_.step(&state, &u);
                controls.push(u);
            }
            roll(spec, x0, controls, format!("stopgo-{i}"))
        })
        .collect()
}

/// Straight approach that splits into `branches` exits at the split frame.
fn fork(spec: &SynthSpec, branches: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Trajectory>, IngestError> {
    if branches == 0 {
        return Err(IngestError::BadProportion("fork needs at least one branch".into()));
    }
    let proportions: Vec<f64> = match &spec.proportions {
        Some(p) => {
            if p.len() != branches {
                return Err(IngestError::BadProportion(format!(
                    "{} proportions given for {} branches",
                    p.len(),
                    branches
                )));
            }
            if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 || p.iter().any(|&v| v < 0.0) {
                return Err(IngestError::BadProportion("proportions must be non-negative and sum to 1".into()));
            }
            p.clone()
        }
        None => vec![1.0 / branches as f64; branches],
    };
    let labels = branch_labels(spec.n_trajectories, &proportions, rng);
    let split = spec.split_frame.min(spec.horizon.saturating_sub(1));
    let turn_frames = (1.2 / spec.dt) as usize; // ~1.2 s of turning
    let speed_base = 8.0;

    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            // Branch 0 continues straight; others alternate +y / -y with
            // increasing turn strength.
            let turn_dir = match b {
                0 => 0.0,
                b if b % 2 == 1 => 1.0 + ((b - 1) / 2) as f64 * 0.5,
                b => -(1.0 + (b / 2 - 1) as f64 * 0.5),
            };
            let speed = speed_base + jitter(rng, 0.3 * spec.noise_sigma);
            let y_off = jitter(rng, spec.noise_sigma);
            let x0 = DVector::from_row_slice(&[0.0, speed, y_off, 0.0]);
            let controls: Vec<DVector<f64>> = (0..spec.horizon)
                .map(|t| {
                    let fy = if t >= split && t < split + turn_frames {
                        2.0 * turn_dir
                    } else {
                        0.0
                    };
                    DVector::from_row_slice(&[0.0, fy])
                })
                .collect();
            roll(spec, x0, controls, format!("fork-{b}-{i}"))
        })
        .collect())
}
