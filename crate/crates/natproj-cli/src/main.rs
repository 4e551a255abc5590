//! Command-line front end for the naturalistic projection pipeline:
//! set generation, trajectory projection, plot-ready exports, and runtime
//! sweeps.
//!
//! Exit codes are a stable contract: 0 success, 2 usage/config error,
//! 3 generation error, 4 infeasible projection, 5 search limits hit (an
//! incumbent, when found, is still written).
//!
//! Outputs are byte-identical across reruns with the same inputs and seed;
//! set `SOURCE_DATE_EPOCH` to also pin embedded timestamps and zero out
//! wall-time fields.

use clap::{Parser, Subcommand};
use natproj::clustering::ClustererConfig;
use natproj::dynamics::{double_integrator, Trajectory};
use natproj::geometry::ConvexPolytope;
use natproj::ingest::{self, ActorTrajectory, FilterSpec, SynthSpec};
use natproj::natset::{self, HullStateMap, NaturalisticSet};
use natproj::projector::{self, ProjectionConfig, ProjectionStatus, ProjectorError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_GENERATION: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_LIMIT: u8 = 5;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn generation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_GENERATION,
            message: message.into(),
        }
    }
}

#[derive(Parser)]
#[command(name = "natproj", version, about = "Learn multimodal naturalistic sets from trajectory data and project trajectories into them")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a naturalistic set and per-frame metrics from a dataset.
    GenNatset {
        /// Pipeline config JSON (dataset source, filter, clusterer).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for natset.json and metrics.csv.
        #[arg(long)]
        out: PathBuf,
        /// Override every seed in the config (clusterer and synthesis).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Project a trajectory into a naturalistic set.
    Project {
        #[arg(long)]
        natset: PathBuf,
        /// Trajectory CSV source (schema actor_id,frame,x,y,vx,vy,ax,ay,heading,class).
        #[arg(long, conflicts_with = "synth")]
        traj: Option<PathBuf>,
        /// Synthetic scenario spec JSON as the trajectory source.
        #[arg(long)]
        synth: Option<PathBuf>,
        /// Actor id to project (default: the first trajectory in the source).
        #[arg(long)]
        traj_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, default_value_t = 1)]
        frame_skip: usize,
        #[arg(long, default_value_t = 1)]
        downsample: usize,
        #[arg(long, default_value_t = 1e-6)]
        mip_gap: f64,
        /// Wall-clock limit in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        node_limit: usize,
        /// Binary sum mode: exactly_one (default) or at_least_one.
        #[arg(long, default_value = "exactly_one")]
        binary_mode: String,
        /// Point mass in kilograms for the double-integrator dynamics.
        #[arg(long, default_value_t = 1.0)]
        mass: f64,
    },
    /// Export per-frame polygons and projected trajectory polylines.
    ExportPlot {
        #[arg(long)]
        natset: PathBuf,
        /// Comma-separated frame indices (empty writes nothing).
        #[arg(long, default_value = "")]
        frames: String,
        /// Comma-separated projection result JSON paths.
        #[arg(long, default_value = "")]
        results: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep frame-skip and downsample rates, reporting runtime and quality.
    Benchmark {
        #[arg(long)]
        natset: PathBuf,
        /// Trajectory CSV source.
        #[arg(long, conflicts_with = "synth")]
        trajs: Option<PathBuf>,
        /// Synthetic scenario spec JSON as the trajectory source.
        #[arg(long)]
        synth: Option<PathBuf>,
        /// Comma-separated actor ids (default: the first three).
        #[arg(long)]
        traj_ids: Option<String>,
        #[arg(long, default_value = "1,2,4,8")]
        frame_skips: String,
        #[arg(long, default_value = "1")]
        downsamples: String,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        mass: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Pipeline configuration consumed by gen-natset. Exactly one dataset
/// source; the hull-state map id currently admits only "position".
#[derive(Debug, Deserialize)]
struct PipelineConfig {
    dataset: DatasetSource,
    #[serde(default)]
    filter: Option<FilterSpec>,
    clusterer: ClustererConfig,
    #[serde(default = "default_map_id")]
    hull_state_map: String,
}

fn default_map_id() -> String {
    "position".into()
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DatasetSource {
    Csv(PathBuf),
    Synth(SynthSpec),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::GenNatset { config, out, seed } => cmd_gen_natset(&config, &out, seed),
        Cmd::Project {
            natset,
            traj,
            synth,
            traj_id,
            out,
            gamma,
            frame_skip,
            downsample,
            mip_gap,
            time_limit,
            node_limit,
            binary_mode,
            mass,
        } => {
            let cfg = ProjectionConfig {
                gamma,
                frame_skip,
                downsample,
                big_m_mode: projector::BigMMode::Auto,
                binary_mode: parse_binary_mode(&binary_mode)?,
                mip_gap,
                node_limit,
                time_limit,
            };
            cmd_project(&natset, traj.as_deref(), synth.as_deref(), traj_id.as_deref(), &out, &cfg, mass)
        }
        Cmd::ExportPlot {
            natset,
            frames,
            results,
            out,
        } => cmd_export_plot(&natset, &frames, &results, &out),
        Cmd::Benchmark {
            natset,
            trajs,
            synth,
            traj_ids,
            frame_skips,
            downsamples,
            gamma,
            mass,
            out,
        } => cmd_benchmark(
            &natset,
            trajs.as_deref(),
            synth.as_deref(),
            traj_ids.as_deref(),
            &frame_skips,
            &downsamples,
            gamma,
            mass,
            &out,
        ),
    }
}

fn parse_binary_mode(s: &str) -> Result<projector::BinaryMode, CliError> {
    match s {
        "exactly_one" => Ok(projector::BinaryMode::ExactlyOne),
        "at_least_one" => Ok(projector::BinaryMode::AtLeastOne),
        other => Err(CliError::config(format!(
            "unknown binary mode {other:?}; expected exactly_one or at_least_one"
        ))),
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::config(format!("cannot create output directory {}: {e}", out.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::generation(format!("cannot write {}: {e}", path.display())))
}

fn load_natset(path: &Path) -> Result<NaturalisticSet, CliError> {
    let text = read_to_string(path)?;
    NaturalisticSet::from_json_str(&text)
        .map_err(|e| CliError::config(format!("invalid naturalistic set {}: {e}", path.display())))
}

/// Load the dataset named by a pipeline config; synthetic trajectories are
/// wrapped as car actors so the task filter applies uniformly.
fn load_dataset(source: &DatasetSource, seed: Option<u64>) -> Result<Vec<ActorTrajectory>, CliError> {
    match source {
        DatasetSource::Csv(path) => {
            ingest::load_csv(path).map_err(|e| CliError::generation(format!("dataset load: {e}")))
        }
        DatasetSource::Synth(spec) => {
            let mut spec = spec.clone();
            if let Some(s) = seed {
                spec.seed = s;
            }
            let trajs = ingest::synth_scenario_with(&spec)
                .map_err(|e| CliError::generation(format!("scenario synthesis: {e}")))?;
            Ok(trajs.into_iter().map(ActorTrajectory::car).collect())
        }
    }
}

fn cmd_gen_natset(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let text = read_to_string(config_path)?;
    let mut config: PipelineConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("invalid pipeline config {}: {e}", config_path.display())))?;
    if config.hull_state_map != "position" {
        return Err(CliError::config(format!(
            "unknown hull_state_map {:?}; v1 ships \"position\"",
            config.hull_state_map
        )));
    }
    if let Some(s) = seed {
        config.clusterer.seed = s;
    }
    config
        .clusterer
        .validate()
        .map_err(|e| CliError::config(format!("clusterer config: {e}")))?;

    let actors = load_dataset(&config.dataset, seed)?;
    let dataset: Vec<Trajectory> = match &config.filter {
        Some(filter) => ingest::filter_tasks(&actors, filter),
        None => actors.into_iter().map(|a| a.trajectory).collect(),
    };
    if dataset.is_empty() {
        return Err(CliError::generation(
            "task filtering left no trajectories in the dataset",
        ));
    }

    let map = HullStateMap::position();
    let (nset, metrics) = natset::generate(&dataset, &map, &config.clusterer)
        .map_err(|e| CliError::generation(format!("set generation: {e}")))?;

    ensure_out_dir(out)?;
    let json = nset
        .to_json_string()
        .map_err(|e| CliError::generation(format!("serialization: {e}")))?;
    write_file(&out.join("natset.json"), &json)?;
    write_file(&out.join("metrics.csv"), &metrics.to_csv_string())?;
    println!(
        "wrote naturalistic set: horizon {}, {} frames, dt {} s",
        nset.horizon(),
        nset.subsets.len(),
        nset.dt
    );
    Ok(())
}

/// Trajectories for projection/benchmarking, at the set's sampling period.
fn load_candidates(
    traj: Option<&Path>,
    synth: Option<&Path>,
    dt: f64,
) -> Result<Vec<Trajectory>, CliError> {
    match (traj, synth) {
        (Some(path), None) => {
            let actors = ingest::load_csv_with_dt(path, dt)
                .map_err(|e| CliError::config(format!("trajectory source: {e}")))?;
            Ok(actors.into_iter().map(|a| a.trajectory).collect())
        }
        (None, Some(path)) => {
            let text = read_to_string(path)?;
            let spec: SynthSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("invalid synth spec {}: {e}", path.display())))?;
            if (spec.dt - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(CliError::config(format!(
                    "synth spec dt {} does not match the set's dt {}",
                    spec.dt, dt
                )));
            }
            ingest::synth_scenario_with(&spec)
                .map_err(|e| CliError::generation(format!("scenario synthesis: {e}")))
        }
        _ => Err(CliError::config(
            "exactly one trajectory source (--traj or --synth) is required",
        )),
    }
}

fn pick_trajectory(trajs: Vec<Trajectory>, id: Option<&str>) -> Result<Trajectory, CliError> {
    match id {
        None => trajs
            .into_iter()
            .next()
            .ok_or_else(|| CliError::config("trajectory source is empty")),
        Some(want) => trajs
            .into_iter()
            .find(|t| t.id == want)
            .ok_or_else(|| CliError::config(format!("trajectory id {want:?} not found in source"))),
    }
}

/// Per-frame Euclidean distance between the candidate and the projection.
fn distance_csv(auto: &Trajectory, projected: &Trajectory) -> String {
    let mut out = String::from("t,distance\n");
    for (t, (a, b)) in auto.states.iter().zip(&projected.states).enumerate() {
        out.push_str(&format!("{},{}\n", t, (a - b).norm()));
    }
    out
}

fn cmd_project(
    natset_path: &Path,
    traj: Option<&Path>,
    synth: Option<&Path>,
    traj_id: Option<&str>,
    out: &Path,
    cfg: &ProjectionConfig,
    mass: f64,
) -> Result<(), CliError> {
    let nset = load_natset(natset_path)?;
    let candidates = load_candidates(traj, synth, nset.dt)?;
    let auto = pick_trajectory(candidates, traj_id)?;
    let dyn_ = double_integrator(nset.dt * cfg.downsample as f64, mass)
        .map_err(|e| CliError::config(format!("dynamics: {e}")))?;
    let map = HullStateMap::position();

    ensure_out_dir(out)?;
    match projector::project(&nset, &dyn_, &auto, &map, cfg) {
        Ok(result) => {
            write_file(&out.join("projection.json"), &result.to_json_string())?;
            let auto_model = auto.downsample(cfg.downsample);
            write_file(
                &out.join("distances.csv"),
                &distance_csv(&auto_model, &result.trajectory),
            )?;
            println!(
                "projection {:?}: objective {:.6}, bound {:.6}, {} nodes",
                result.status, result.objective, result.bound, result.nodes_explored
            );
            if result.status == ProjectionStatus::Limit {
                return Err(CliError {
                    code: EXIT_LIMIT,
                    message: "search limits reached; incumbent written".into(),
                });
            }
            Ok(())
        }
        Err(ProjectorError::Infeasible(detail)) => {
            write_file(
                &out.join("projection.json"),
                "{\n  \"status\": \"Infeasible\"\n}",
            )?;
            Err(CliError {
                code: EXIT_INFEASIBLE,
                message: format!(
                    "projection infeasible: the set admits no dynamically feasible trajectory from this initial state ({detail})"
                ),
            })
        }
        Err(ProjectorError::LimitWithoutIncumbent) => Err(CliError {
            code: EXIT_LIMIT,
            message: "search limits reached before any feasible tube was found".into(),
        }),
        Err(e @ (ProjectorError::DtMismatch(_) | ProjectorError::EmptyEnforcementSet { .. } | ProjectorError::BadConfig(_))) => {
            Err(CliError::config(e.to_string()))
        }
        Err(e) => Err(CliError::generation(e.to_string())),
    }
}

#[derive(Serialize)]
struct FramePolygons<'a> {
    t: usize,
    dt: f64,
    polytopes: &'a [ConvexPolytope],
}

#[derive(Serialize)]
struct Polyline {
    id: String,
    states: Vec<Vec<f64>>,
    positions: Vec<[f64; 2]>,
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::config(format!("invalid {what} entry {s:?}")))
        })
        .collect()
}

fn cmd_export_plot(natset_path: &Path, frames: &str, results: &str, out: &Path) -> Result<(), CliError> {
    let nset = load_natset(natset_path)?;
    let frames: Vec<usize> = parse_list(frames, "frame")?;
    if frames.is_empty() {
        return Ok(());
    }
    for &f in &frames {
        if f > nset.horizon() {
            return Err(CliError::config(format!(
                "frame {f} out of range; the set's horizon is {}",
                nset.horizon()
            )));
        }
    }
    ensure_out_dir(out)?;
    for &f in &frames {
        let payload = FramePolygons {
            t: f,
            dt: nset.dt,
            polytopes: &nset.subsets[f].polytopes,
        };
        let json = serde_json::to_string_pretty(&payload)
            .map_err(|e| CliError::generation(format!("serialization: {e}")))?;
        write_file(&out.join(format!("polygons_f{f}.json")), &json)?;
    }

    let result_paths: Vec<String> = results
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().to_string())
        .collect();
    if !result_paths.is_empty() {
        let mut lines = Vec::new();
        for path in &result_paths {
            let text = read_to_string(Path::new(path))?;
            let repr: projector::ResultRepr = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("invalid projection result {path}: {e}")))?;
            let positions = repr.states.iter().map(|s| [s[0], s[2]]).collect();
            lines.push(Polyline {
                id: Path::new(path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.clone()),
                states: repr.states,
                positions,
            });
        }
        let json = serde_json::to_string_pretty(&lines)
            .map_err(|e| CliError::generation(format!("serialization: {e}")))?;
        write_file(&out.join("trajectories.json"), &json)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_benchmark(
    natset_path: &Path,
    trajs: Option<&Path>,
    synth: Option<&Path>,
    traj_ids: Option<&str>,
    frame_skips: &str,
    downsamples: &str,
    gamma: f64,
    mass: f64,
    out: &Path,
) -> Result<(), CliError> {
    let nset = load_natset(natset_path)?;
    let skips: Vec<usize> = parse_list(frame_skips, "frame skip")?;
    let downs: Vec<usize> = parse_list(downsamples, "downsample")?;
    if skips.is_empty() || downs.is_empty() {
        return Err(CliError::config("frame-skip and downsample sweeps must be non-empty"));
    }
    let all = load_candidates(trajs, synth, nset.dt)?;
    let selected: Vec<Trajectory> = match traj_ids {
        Some(ids) => {
            let wanted: Vec<&str> = ids.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            all.into_iter().filter(|t| wanted.contains(&t.id.as_str())).collect()
        }
        None => all.into_iter().take(3).collect(),
    };
    if selected.is_empty() {
        return Err(CliError::config("no trajectories selected for benchmarking"));
    }

    let clusterer_label = {
        let c = &nset.provenance.clusterer;
        match c.algorithm {
            natproj::clustering::ClusterAlgorithm::Kmeans => format!("{}-means", c.k),
            natproj::clustering::ClusterAlgorithm::KmeansConstrained => {
                format!("{}-means-constrained", c.k)
            }
            natproj::clustering::ClusterAlgorithm::Density => "density".into(),
        }
    };
    let map = HullStateMap::position();
    let zero_timing = std::env::var_os("SOURCE_DATE_EPOCH").is_some();

    let mut table = String::from("clusterer,downsample,frame_skip,trajectory,runtime_s,objective\n");
    let mut md = String::from(
        "| Clusterer | Downsample | Frame skip | Trajectory | Runtime (s) | Objective |\n|---|---|---|---|---|---|\n",
    );
    let mut quality = String::from("trajectory,downsample,frame_skip,t,distance\n");

    for &down in &downs {
        let dyn_ = double_integrator(nset.dt * down as f64, mass)
            .map_err(|e| CliError::config(format!("dynamics: {e}")))?;
        for traj in &selected {
            let mut reference: Option<Trajectory> = None;
            for &skip in &skips {
                let cfg = ProjectionConfig {
                    gamma,
                    frame_skip: skip,
                    downsample: down,
                    ..ProjectionConfig::default()
                };
                let result = match projector::project(&nset, &dyn_, traj, &map, &cfg) {
                    Ok(r) => r,
                    Err(ProjectorError::Infeasible(detail)) => {
                        return Err(CliError {
                            code: EXIT_INFEASIBLE,
                            message: format!(
                                "projection of {} infeasible at frame skip {skip}: {detail}",
                                traj.id
                            ),
                        });
                    }
                    Err(ProjectorError::LimitWithoutIncumbent) => {
                        return Err(CliError {
                            code: EXIT_LIMIT,
                            message: format!("limits hit without incumbent for {}", traj.id),
                        });
                    }
                    Err(e) => return Err(CliError::generation(e.to_string())),
                };
                let runtime = if zero_timing { 0.0 } else { result.wall_time };
                table.push_str(&format!(
                    "{clusterer_label},{down},{skip},{},{},{}\n",
                    traj.id, runtime, result.objective
                ));
                md.push_str(&format!(
                    "| {clusterer_label} | {down} | {skip} | {} | {:.4} | {:.6} |\n",
                    traj.id, runtime, result.objective
                ));
                match &reference {
                    None => reference = Some(result.trajectory.clone()),
                    Some(high_fidelity) => {
                        for (t, (a, b)) in high_fidelity
                            .states
                            .iter()
                            .zip(&result.trajectory.states)
                            .enumerate()
                        {
                            quality.push_str(&format!(
                                "{},{down},{skip},{t},{}\n",
                                traj.id,
                                (a - b).norm()
                            ));
                        }
                    }
                }
            }
        }
    }

    ensure_out_dir(out)?;
    write_file(&out.join("benchmark.csv"), &table)?;
    write_file(&out.join("benchmark.md"), &md)?;
    write_file(&out.join("quality.csv"), &quality)?;
    println!("benchmark complete: {} trajectories x {} frame skips x {} downsamples", selected.len(), skips.len(), downs.len());
    Ok(())
}
