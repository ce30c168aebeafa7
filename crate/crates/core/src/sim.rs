//! Closed-loop replay: a robot driven by the replanner among recorded
//! pedestrians, with per-step traces and aggregate metrics.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::danger::{DangerError, DangerModel, DangerParams, HumanContext, Predictor};
use crate::data_io::{load_model, load_tracks, resample_track, write_atomic, ColumnMap, DataError, RawTrack};
use crate::geometry::{
    normalize_angle, Bounds, Configuration, ConvexRegion, DynamicObstacles, HumanPose, ObstacleSet, PathSegment,
    State,
};
use crate::motion::{GmmModel, SmParams};
use crate::planner::{Planner, PlannerConfig, PlannerError, PlannerStats};

/// Shoulder width of a pedestrian footprint, meters.
pub const HUMAN_WIDTH: f64 = 0.5;
/// Front-to-back depth of a pedestrian footprint, meters.
pub const HUMAN_DEPTH: f64 = 0.3;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario file")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Danger(#[from] DangerError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Length,
    Sm,
    Gmr,
    Gmm,
}

impl PredictorKind {
    pub fn needs_model(self) -> bool {
        matches!(self, PredictorKind::Gmr | PredictorKind::Gmm)
    }

    pub fn label(self) -> &'static str {
        match self {
            PredictorKind::Length => "length",
            PredictorKind::Sm => "sm",
            PredictorKind::Gmr => "gmr",
            PredictorKind::Gmm => "gmm",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PredictorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "length" => Ok(PredictorKind::Length),
            "sm" => Ok(PredictorKind::Sm),
            "gmr" => Ok(PredictorKind::Gmr),
            "gmm" => Ok(PredictorKind::Gmm),
            other => Err(format!("unknown predictor {other:?} (expected length, sm, gmr or gmm)")),
        }
    }
}

/// A convex obstacle, optionally present only during `[appear_at, vanish_at)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticObstacle {
    pub vertices: ConvexRegion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appear_at: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vanish_at: Option<f64>,
}

impl StaticObstacle {
    pub fn new(region: ConvexRegion) -> Self {
        Self {
            vertices: region,
            appear_at: None,
            vanish_at: None,
        }
    }

    pub fn active_at(&self, t: f64) -> bool {
        self.appear_at.is_none_or(|a| t >= a) && self.vanish_at.is_none_or(|v| t < v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub bounds: Bounds,
    #[serde(default)]
    pub obstacles: Vec<StaticObstacle>,
}

impl Environment {
    pub fn active_at(&self, t: f64) -> Vec<ConvexRegion> {
        self.obstacles
            .iter()
            .filter(|o| o.active_at(t))
            .map(|o| o.vertices.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub start: Configuration,
    pub goal: Configuration,
    #[serde(default = "default_robot_radius")]
    pub radius: f64,
    #[serde(default = "default_sensor_radius")]
    pub sensor_radius: f64,
}

fn default_robot_radius() -> f64 {
    0.3
}

fn default_sensor_radius() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub predictor: PredictorKind,
    /// Trained mixture file, required by `gmr` and `gmm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub sm: SmParams,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            predictor: PredictorKind::Sm,
            path: None,
            sm: SmParams::default(),
        }
    }
}

/// A pedestrian written directly in the scenario as `[x, y, t]` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineTrack {
    pub id: i64,
    pub samples: Vec<[f64; 3]>,
}

impl From<&InlineTrack> for RawTrack {
    fn from(t: &InlineTrack) -> Self {
        RawTrack {
            id: t.id,
            samples: t.samples.iter().map(|s| State::at(s[0], s[1], s[2])).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub columns: ColumnMap,
    /// Added to every recorded time.
    pub time_offset: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample_dt: Option<f64>,
    pub tracks: Vec<InlineTrack>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub dt: f64,
    pub steps_max: usize,
    /// Time allowed after the last pedestrian leaves before giving up, seconds.
    pub grace: f64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            dt: 0.1,
            steps_max: 3000,
            grace: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub environment: Environment,
    pub robot: RobotSpec,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub danger: DangerParams,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    /// Reads a scenario and resolves its relative file paths against the
    /// scenario's directory.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut s = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut s.dataset.path);
        resolve(&mut s.model.path);
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Checks parameters and that start and goal are free at `t = 0`.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scenario(m));
        let env = &self.environment;
        if !env.bounds.is_valid() {
            return bad(format!("invalid bounds {:?}", env.bounds));
        }
        let r = &self.robot;
        if !(r.radius >= 0.0 && r.sensor_radius > 0.0) {
            return bad("robot radius must be non-negative and sensor radius positive".into());
        }
        let sim = &self.simulation;
        if !(sim.dt > 0.0 && sim.grace >= 0.0) || sim.steps_max == 0 {
            return bad("simulation needs dt > 0, grace >= 0 and steps_max >= 1".into());
        }
        self.planner.validate()?;
        self.danger.validate()?;
        let statics = ObstacleSet::new(env.active_at(0.0));
        for (name, q) in [("start", r.start), ("goal", r.goal)] {
            if !env.bounds.contains(q) {
                return bad(format!("{name} {q} lies outside the environment"));
            }
            if statics.point_collides(q, 0.0, r.radius) {
                return bad(format!("{name} {q} is in collision at t = 0"));
            }
        }
        if self.model.predictor.needs_model() && self.model.path.is_none() {
            return bad(format!("predictor {} needs a model path", self.model.predictor));
        }
        Ok(())
    }

    /// Tracks from the dataset file and the inline list, time-shifted and
    /// optionally resampled, ordered by id.
    pub fn load_tracks(&self) -> Result<Vec<RawTrack>, SimError> {
        let ds = &self.dataset;
        let mut tracks = match &ds.path {
            Some(p) => load_tracks(p, &ds.columns)?,
            None => Vec::new(),
        };
        tracks.extend(ds.tracks.iter().map(RawTrack::from));
        for t in &mut tracks {
            if t.samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(SimError::Scenario(format!("track {} is not strictly time-ordered", t.id)));
            }
            for s in &mut t.samples {
                s.t += ds.time_offset;
            }
        }
        if let Some(dt) = ds.resample_dt {
            tracks = tracks
                .iter()
                .map(|t| {
                    if t.duration() >= dt {
                        resample_track(t, dt)
                    } else {
                        Ok(t.clone())
                    }
                })
                .collect::<Result<_, _>>()?;
        }
        tracks.sort_by_key(|t| t.id);
        Ok(tracks)
    }

    pub fn danger_model(&self, mixture: Option<Arc<GmmModel>>) -> Result<DangerModel, SimError> {
        let need = || SimError::Scenario(format!("predictor {} needs a trained model", self.model.predictor));
        let predictor = match self.model.predictor {
            PredictorKind::Length => return Ok(DangerModel::length_only()),
            PredictorKind::Sm => Predictor::Sm,
            PredictorKind::Gmr => Predictor::Gmr(mixture.ok_or_else(need)?),
            PredictorKind::Gmm => Predictor::Gmm(mixture.ok_or_else(need)?),
        };
        Ok(DangerModel::new(predictor, self.model.sm, self.danger)?)
    }
}

/// Footprint of a pedestrian: [`HUMAN_DEPTH`] along the heading, [`HUMAN_WIDTH`] across.
pub fn human_footprint(pose: &HumanPose) -> ConvexRegion {
    ConvexRegion::rectangle(pose.position, pose.heading, HUMAN_DEPTH, HUMAN_WIDTH)
}

/// Interpolated pose of a track at `t`, `None` outside its recorded span.
/// The heading follows the local velocity, falling back to the nearest
/// moving stretch when the pedestrian stands still.
pub fn track_pose(track: &RawTrack, t: f64) -> Option<HumanPose> {
    let s = &track.samples;
    let (first, last) = (s.first()?, s.last()?);
    if t < first.t || t > last.t {
        return None;
    }
    if s.len() == 1 {
        return Some(HumanPose::new(first.config, 0.0));
    }
    let i = s.partition_point(|x| x.t <= t).clamp(1, s.len() - 1);
    let (a, b) = (s[i - 1], s[i]);
    let position = a.config.lerp(b.config, (t - a.t) / (b.t - a.t));
    let moving = |j: usize| {
        let d = s[j + 1].config - s[j].config;
        (d.norm() > 1e-12).then(|| d.y.atan2(d.x))
    };
    let heading = (0..s.len() - 1)
        .filter_map(|j| moving(j).map(|h| (j.abs_diff(i - 1), h)))
        .min_by_key(|&(dist, _)| dist)
        .map_or(0.0, |(_, h)| h);
    Some(HumanPose::new(position, normalize_angle(heading)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibleHuman {
    pub id: i64,
    pub pose: HumanPose,
}

/// Pedestrians whose position at `t` is within `radius` of the robot.
pub fn sense_humans(tracks: &[RawTrack], robot: Configuration, t: f64, radius: f64) -> Vec<VisibleHuman> {
    tracks
        .iter()
        .filter_map(|tr| track_pose(tr, t).map(|pose| VisibleHuman { id: tr.id, pose }))
        .filter(|h| h.pose.position.distance(robot) <= radius)
        .collect()
}

/// Ground-truth pedestrian footprints over time.
#[derive(Debug, Clone)]
pub struct TrackReplay {
    pub tracks: Vec<RawTrack>,
}

impl DynamicObstacles for TrackReplay {
    fn shapes_at(&self, t: f64) -> Vec<ConvexRegion> {
        self.tracks
            .iter()
            .filter_map(|tr| track_pose(tr, t))
            .map(|p| human_footprint(&p))
            .collect()
    }
}

/// Gap between the robot disc and the nearest footprint, zero on contact.
pub fn clearance(robot: Configuration, radius: f64, footprints: &[ConvexRegion]) -> Option<f64> {
    footprints
        .iter()
        .map(|f| (f.distance(robot) - radius).max(0.0))
        .min_by(f64::total_cmp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub t: f64,
    pub robot: Configuration,
    /// Planned polyline from the robot to the goal; empty when stopped.
    pub path: Vec<Configuration>,
    pub humans: Vec<VisibleHuman>,
    /// Distance to the nearest pedestrian present, visible or not.
    pub clearance: Option<f64>,
    /// Cost-to-goal of the plan, absent when there is none.
    pub lmc: Option<f64>,
    /// 1 when the plan no longer continues the previous one.
    pub replans: usize,
    pub stop: bool,
    pub collision: bool,
    /// Cost of the motion executed during this step.
    pub step_cost: f64,
    pub planner: PlannerStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Arrived,
    /// Pedestrians exhausted and the grace period elapsed without arrival.
    Blocked,
    StepCap,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Arrived => 0,
            Outcome::Blocked | Outcome::StepCap => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WallTimeStats {
    pub mean_ms: f64,
    pub max_ms: f64,
    pub p95_ms: f64,
}

impl WallTimeStats {
    pub fn from_samples(ms: &[f64]) -> Option<Self> {
        if ms.is_empty() {
            return None;
        }
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let idx = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
        Some(Self {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            max_ms: sorted[sorted.len() - 1],
            p95_ms: sorted[idx],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: usize,
    pub duration: f64,
    /// False when no pedestrian was ever present; clearances are then absent.
    pub clearance_applicable: bool,
    pub min_clearance: Option<f64>,
    pub mean_clearance: Option<f64>,
    pub path_length: f64,
    pub total_cost: f64,
    pub stops: usize,
    pub replans: usize,
    pub collisions: usize,
    pub wall_time: Option<WallTimeStats>,
}

/// Aggregates a trace. `wall_ms` holds per-step timings, possibly empty.
pub fn compute_metrics(trace: &[TraceRecord], wall_ms: &[f64]) -> Metrics {
    let series: Vec<f64> = trace.iter().filter_map(|r| r.clearance).collect();
    let min_clearance = series.iter().copied().min_by(f64::total_cmp);
    let mean_clearance = (!series.is_empty()).then(|| series.iter().sum::<f64>() / series.len() as f64);
    let path_length = trace.windows(2).map(|w| w[0].robot.distance(w[1].robot)).sum();
    Metrics {
        steps: trace.len(),
        duration: match (trace.first(), trace.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        },
        clearance_applicable: !series.is_empty(),
        min_clearance,
        mean_clearance,
        path_length,
        total_cost: trace.iter().map(|r| r.step_cost).sum(),
        stops: trace.iter().filter(|r| r.stop).count(),
        replans: trace.iter().map(|r| r.replans).sum(),
        collisions: trace.iter().filter(|r| r.collision).count(),
        wall_time: WallTimeStats::from_samples(wall_ms),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub predictor: PredictorKind,
    pub scenario: Scenario,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    pub metrics: Metrics,
    pub outcome: Outcome,
    pub setup_ms: f64,
}

impl SimOutput {
    /// Header line followed by one line per record.
    pub fn trace_jsonl(&self) -> Result<String, SimError> {
        let mut out = serde_json::to_string(&serde_json::json!({ "header": &self.header }))?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_trace(&self, path: &Path) -> Result<(), SimError> {
        write_atomic(path, self.trace_jsonl()?.as_bytes())?;
        Ok(())
    }
}

fn continues(prev: &[Configuration], path: &[Configuration]) -> bool {
    let (prev, cur) = (prev.get(1..).unwrap_or(&[]), path.get(1..).unwrap_or(&[]));
    !cur.is_empty() && prev.ends_with(cur)
}

/// Loads tracks and the mixture named by the scenario, then simulates.
pub fn run_simulation(scenario: &Scenario) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let tracks = scenario.load_tracks()?;
    let mixture = match (&scenario.model.path, scenario.model.predictor.needs_model()) {
        (Some(p), true) => Some(Arc::new(load_model(p)?.model)),
        _ => None,
    };
    let danger = scenario.danger_model(mixture)?;
    simulate(scenario, tracks, danger)
}

/// Runs the sense, update, grow, repair and advance loop at a fixed step.
pub fn simulate(scenario: &Scenario, tracks: Vec<RawTrack>, danger: DangerModel) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let env = &scenario.environment;
    let spec = &scenario.robot;
    let sim = scenario.simulation;
    let config = PlannerConfig {
        seed: scenario.seed,
        ..scenario.planner
    };
    let setup = Instant::now();
    let mut planner = Planner::new(config, env.bounds, spec.goal, spec.radius, danger.clone())?;
    let tracks_end = tracks.iter().map(RawTrack::end_time).fold(0.0, f64::max);
    let truth = ObstacleSet::new(Vec::new()).with_dynamic(Arc::new(TrackReplay { tracks: tracks.clone() }));

    let mut robot = State::new(spec.start, 0.0);
    let mut records = Vec::new();
    let mut wall_ms = Vec::new();
    let mut prev_path: Vec<Configuration> = Vec::new();
    let mut setup_ms = 0.0;
    let mut outcome = Outcome::StepCap;
    for k in 0..sim.steps_max {
        let t = k as f64 * sim.dt;
        robot.t = t;
        let clock = Instant::now();
        planner.set_time(t);
        let visible = sense_humans(&tracks, robot.config, t, spec.sensor_radius);
        let contexts: Vec<HumanContext> = visible.iter().map(|h| danger.context(h.pose, t)).collect();
        let mut obstacles = env.active_at(t);
        obstacles.extend(visible.iter().map(|h| human_footprint(&h.pose)));
        planner.update_environment(obstacles, contexts.clone());
        if k == 0 {
            planner.grow(config.initial_samples, Some(&robot));
        } else {
            planner.grow(config.samples_per_step, Some(&robot));
        }
        planner.reduce_inconsistency(Some(&robot));
        let step = planner.plan_step(&robot, sim.dt);
        let elapsed = clock.elapsed().as_secs_f64() * 1e3;
        if k == 0 {
            setup_ms = setup.elapsed().as_secs_f64() * 1e3;
        } else {
            wall_ms.push(elapsed);
        }

        let present = truth.shapes_at(t);
        let static_now = ObstacleSet::new(env.active_at(t));
        let collision = static_now.point_collides(robot.config, t, spec.radius)
            || truth.point_collides(robot.config, t, spec.radius);
        let arrived = robot.config.distance(spec.goal) <= spec.radius;
        let moved = !arrived && !step.stop;
        let step_cost = if moved {
            let seg = PathSegment {
                start: robot,
                end: step.state,
            };
            danger.edge_cost(&seg, &contexts).total
        } else {
            0.0
        };
        let replans = usize::from(moved && !prev_path.is_empty() && !continues(&prev_path, &step.path));
        records.push(TraceRecord {
            step: k,
            t,
            robot: robot.config,
            path: step.path.clone(),
            humans: visible,
            clearance: clearance(robot.config, spec.radius, &present),
            lmc: step.lmc.is_finite().then_some(step.lmc),
            replans,
            stop: step.stop && !arrived,
            collision,
            step_cost,
            planner: planner.take_stats(),
        });
        if arrived {
            outcome = Outcome::Arrived;
            break;
        }
        if t >= tracks_end + sim.grace {
            outcome = Outcome::Blocked;
            break;
        }
        if moved {
            prev_path = step.path;
        }
        robot = step.state;
    }
    let metrics = compute_metrics(&records, &wall_ms);
    Ok(SimOutput {
        header: TraceHeader {
            format: "harp-trace".into(),
            version: TRACE_VERSION,
            predictor: match danger.predictor {
                Predictor::LengthOnly => PredictorKind::Length,
                Predictor::Sm => PredictorKind::Sm,
                Predictor::Gmr(_) => PredictorKind::Gmr,
                Predictor::Gmm(_) => PredictorKind::Gmm,
            },
            scenario: Scenario {
                planner: config,
                ..scenario.clone()
            },
        },
        records,
        metrics,
        outcome,
        setup_ms,
    })
}

/// Rollout paths as CSV: columns `ln_i,lt_i` per path, one row per stage.
pub fn rollout_csv(paths: &[Vec<(f64, f64)>]) -> String {
    let rows = paths.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = (0..paths.len())
        .map(|i| format!("ln_{i},lt_{i}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for r in 0..rows {
        let cells: Vec<String> = paths
            .iter()
            .map(|p| match p.get(r) {
                Some((ln, lt)) => format!("{ln},{lt}"),
                None => ",".into(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
