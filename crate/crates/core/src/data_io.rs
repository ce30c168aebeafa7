//! Pedestrian track ingestion and preprocessing, mixture training from
//! tracks, and model persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{to_human_frame, Configuration, HumanPose, State};
use crate::motion::{combine_class_models, fit_mixture, EmOptions, GaussianComponent, GmmModel, MotionError, TrendClass};

pub const MODEL_FORMAT: &str = "harp-gmm";
pub const MODEL_VERSION: u32 = 1;

/// Minimum start displacement used to fix a path's initial heading, meters.
pub const HEADING_MIN_DISPLACEMENT: f64 = 0.05;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: frame {frame} of track {id} does not advance past the previous frame")]
    NonMonotone { line: usize, id: i64, frame: f64 },
    #[error("{0}")]
    Invalid(String),
    #[error("malformed model file")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Column layout of a track table. The default matches BIWI `obsmat` files:
/// frame, id, x, (z,) y at 2.5 frames per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub frame: usize,
    pub id: usize,
    pub x: usize,
    pub y: usize,
    pub frame_rate: f64,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            frame: 0,
            id: 1,
            x: 2,
            y: 4,
            frame_rate: 2.5,
        }
    }
}

/// One pedestrian's recorded positions, time-ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTrack {
    pub id: i64,
    pub samples: Vec<State>,
}

impl RawTrack {
    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn start_time(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

/// Reads a whitespace- or comma-separated numeric table into tracks grouped
/// by id (ascending) with `t = frame / frame_rate`.
pub fn load_tracks(path: &Path, map: &ColumnMap) -> Result<Vec<RawTrack>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_tracks(&text, map)
}

pub fn parse_tracks(text: &str, map: &ColumnMap) -> Result<Vec<RawTrack>, DataError> {
    if !(map.frame_rate > 0.0) {
        return Err(DataError::Invalid(format!("frame rate must be positive, got {}", map.frame_rate)));
    }
    let needed = map.frame.max(map.id).max(map.x).max(map.y) + 1;
    let mut tracks: BTreeMap<i64, (Vec<State>, f64)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<f64> = body
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<f64>().map_err(|_| DataError::Parse {
                    line,
                    message: format!("not a number: {f:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if fields.len() < needed {
            return Err(DataError::Parse {
                line,
                message: format!("expected at least {needed} columns, found {}", fields.len()),
            });
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Parse {
                line,
                message: "non-finite value".into(),
            });
        }
        let id_f = fields[map.id];
        if id_f.fract() != 0.0 {
            return Err(DataError::Parse {
                line,
                message: format!("track id {id_f} is not an integer"),
            });
        }
        let id = id_f as i64;
        let frame = fields[map.frame];
        let entry = tracks.entry(id).or_insert_with(|| (Vec::new(), f64::NEG_INFINITY));
        if frame <= entry.1 {
            return Err(DataError::NonMonotone { line, id, frame });
        }
        entry.1 = frame;
        entry.0.push(State::at(fields[map.x], fields[map.y], frame / map.frame_rate));
    }
    Ok(tracks
        .into_iter()
        .map(|(id, (samples, _))| RawTrack { id, samples })
        .collect())
}

/// Natural cubic spline through `(t_i, y_i)`.
#[derive(Debug, Clone)]
struct Spline {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    fn new(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives (Thomas algorithm)
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                let h0 = t[i + 1] - t[i];
                let h1 = t[i + 2] - t[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = t[i + 1] - t[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Self {
            t: t.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.t.len();
        let i = match self.t.partition_point(|&v| v <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - x) / h;
        let b = (x - self.t[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Resamples at a uniform step from the first sample, appending the final
/// sample if the grid misses it. Uses a natural cubic spline per coordinate,
/// or straight segments for tracks with fewer than four samples.
pub fn resample_track(track: &RawTrack, dt: f64) -> Result<RawTrack, DataError> {
    if !(dt > 0.0) {
        return Err(DataError::Invalid(format!("resample step must be positive, got {dt}")));
    }
    let n = track.samples.len();
    if n < 2 || track.duration() < dt {
        return Err(DataError::Invalid(format!(
            "track {} is too short to resample at {dt} s ({n} samples, {} s)",
            track.id,
            track.duration()
        )));
    }
    let t: Vec<f64> = track.samples.iter().map(|s| s.t).collect();
    let xs: Vec<f64> = track.samples.iter().map(|s| s.config.x).collect();
    let ys: Vec<f64> = track.samples.iter().map(|s| s.config.y).collect();
    let eval: Box<dyn Fn(f64) -> Configuration> = if n >= 4 {
        let (sx, sy) = (Spline::new(&t, &xs), Spline::new(&t, &ys));
        Box::new(move |x| Configuration::new(sx.eval(x), sy.eval(x)))
    } else {
        let samples = track.samples.clone();
        Box::new(move |x| {
            let i = samples.partition_point(|s| s.t <= x).clamp(1, samples.len() - 1);
            let (a, b) = (samples[i - 1], samples[i]);
            a.config.lerp(b.config, (x - a.t) / (b.t - a.t))
        })
    };
    let (t0, t1) = (t[0], t[n - 1]);
    let steps = ((t1 - t0) / dt + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(steps + 2);
    for k in 0..=steps {
        let tk = t0 + k as f64 * dt;
        out.push(State::new(eval(tk), tk));
    }
    out[0].config = track.samples[0].config;
    let last = out[out.len() - 1].t;
    if t1 - last > 1e-9 {
        out.push(track.samples[n - 1]);
    } else {
        let end = out.len() - 1;
        out[end] = State::new(track.samples[n - 1].config, last);
    }
    Ok(RawTrack { id: track.id, samples: out })
}

/// A track expressed in its own start frame: first sample at the origin,
/// initial walking direction along `+p_ln`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPath {
    pub id: i64,
    pub duration: f64,
    pub samples: Vec<[f64; 2]>,
}

/// Start pose of a track: its first position, heading toward the first
/// sample at least [`HEADING_MIN_DISPLACEMENT`] away (or the first that moves
/// at all).
pub fn start_pose(track: &RawTrack) -> Result<HumanPose, DataError> {
    let first = track
        .samples
        .first()
        .ok_or_else(|| DataError::Invalid(format!("track {} is empty", track.id)))?
        .config;
    let pick = |min: f64| track.samples.iter().map(|s| s.config).find(|q| q.distance(first) > min);
    let target = pick(HEADING_MIN_DISPLACEMENT)
        .or_else(|| pick(0.0))
        .ok_or_else(|| DataError::Invalid(format!("track {} never moves", track.id)))?;
    let d = target - first;
    Ok(HumanPose::new(first, d.y.atan2(d.x)))
}

pub fn normalize_to_start_frame(track: &RawTrack) -> Result<NormalizedPath, DataError> {
    if track.samples.len() < 2 {
        return Err(DataError::Invalid(format!("track {} has fewer than 2 samples", track.id)));
    }
    let pose = start_pose(track)?;
    let samples = track
        .samples
        .iter()
        .map(|s| {
            let (ln, lt) = to_human_frame(s.config, &pose);
            [ln, lt]
        })
        .collect();
    Ok(NormalizedPath {
        id: track.id,
        duration: track.duration(),
        samples,
    })
}

/// Trend of a normalized path, `None` when it ever moves behind its start.
pub fn classify_trend(path: &NormalizedPath, lat_threshold: f64) -> Option<TrendClass> {
    if path.samples.iter().any(|p| p[0] < -1e-9) {
        return None;
    }
    let lt = path.samples.last()?[1];
    Some(if lt > lat_threshold {
        TrendClass::Left
    } else if lt < -lat_threshold {
        TrendClass::Right
    } else {
        TrendClass::Straight
    })
}

/// Tracks whose duration lies in the closed interval `[min_s, max_s]`.
pub fn duration_filter(tracks: &[RawTrack], min_s: f64, max_s: f64) -> Vec<RawTrack> {
    tracks
        .iter()
        .filter(|t| (min_s..=max_s).contains(&t.duration()))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub k_per_class: usize,
    pub lat_threshold: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    pub resample_dt: f64,
    pub seed: u64,
    pub em_tol: f64,
    pub em_max_iters: usize,
    pub cov_floor: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let em = EmOptions::default();
        Self {
            k_per_class: 5,
            lat_threshold: 1.0,
            min_duration: 10.0,
            max_duration: 16.0,
            resample_dt: 0.4,
            seed: 0,
            em_tol: em.tol,
            em_max_iters: em.max_iters,
            cov_floor: em.cov_floor,
        }
    }
}

/// Provenance stored with a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub k_per_class: BTreeMap<TrendClass, usize>,
    pub class_counts: BTreeMap<TrendClass, usize>,
    pub discarded: usize,
    pub training_hash: String,
    pub seed: u64,
    pub options: TrainOptions,
    pub floor_triggered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: GmmModel,
    pub metadata: Option<ModelMetadata>,
}

/// SHA-256 over ids, times and positions, as hex.
pub fn tracks_hash(tracks: &[RawTrack]) -> String {
    let mut h = Sha256::new();
    for t in tracks {
        h.update(t.id.to_le_bytes());
        h.update((t.samples.len() as u64).to_le_bytes());
        for s in &t.samples {
            h.update(s.t.to_le_bytes());
            h.update(s.config.x.to_le_bytes());
            h.update(s.config.y.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Preprocessed demonstration paths split by trend.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub classes: BTreeMap<TrendClass, Vec<NormalizedPath>>,
    pub discarded: usize,
}

/// Duration filter, resampling, normalization and classification.
pub fn prepare_training_set(tracks: &[RawTrack], opts: &TrainOptions) -> Result<TrainingSet, DataError> {
    if opts.min_duration > opts.max_duration {
        return Err(DataError::Invalid("min_duration exceeds max_duration".into()));
    }
    let mut set = TrainingSet::default();
    for track in duration_filter(tracks, opts.min_duration, opts.max_duration) {
        let path = normalize_to_start_frame(&resample_track(&track, opts.resample_dt)?)?;
        match classify_trend(&path, opts.lat_threshold) {
            Some(class) => set.classes.entry(class).or_default().push(path),
            None => set.discarded += 1,
        }
    }
    Ok(set)
}

/// Fits one mixture per trend class and pools them weighted by class size.
pub fn train_model(tracks: &[RawTrack], opts: &TrainOptions) -> Result<TrainedModel, DataError> {
    if opts.k_per_class == 0 {
        return Err(DataError::Invalid("k_per_class must be at least 1".into()));
    }
    let set = prepare_training_set(tracks, opts)?;
    if set.classes.is_empty() {
        return Err(DataError::Invalid(
            "no usable training paths after duration filtering and classification".into(),
        ));
    }
    let em = EmOptions {
        tol: opts.em_tol,
        max_iters: opts.em_max_iters,
        cov_floor: opts.cov_floor,
    };
    let mut models = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut ks = BTreeMap::new();
    let mut floor_triggered = false;
    for (&class, paths) in &set.classes {
        let points: Vec<[f64; 2]> = paths.iter().flat_map(|p| p.samples.iter().copied()).collect();
        let k = opts.k_per_class.min(points.len());
        let report = fit_mixture(&points, k, opts.seed, &em)?;
        floor_triggered |= report.floor_triggered;
        models.insert(class, report.model);
        counts.insert(class, paths.len());
        ks.insert(class, k);
    }
    let model = combine_class_models(&models, &counts)?;
    Ok(TrainedModel {
        model,
        metadata: Some(ModelMetadata {
            k_per_class: ks,
            class_counts: counts,
            discarded: set.discarded,
            training_hash: tracks_hash(tracks),
            seed: opts.seed,
            options: *opts,
            floor_triggered,
        }),
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    components: Vec<GaussianComponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<ModelMetadata>,
}

pub fn model_to_json(model: &TrainedModel) -> Result<String, DataError> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        components: model.model.components().to_vec(),
        metadata: model.metadata.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn model_from_json(text: &str) -> Result<TrainedModel, DataError> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format != MODEL_FORMAT {
        return Err(DataError::Invalid(format!("unexpected model format {:?}", file.format)));
    }
    if file.version != MODEL_VERSION {
        return Err(DataError::Invalid(format!("unsupported model version {}", file.version)));
    }
    Ok(TrainedModel {
        model: GmmModel::new(file.components)?,
        metadata: file.metadata,
    })
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<(), DataError> {
    let mut text = model_to_json(model)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_model(path: &Path) -> Result<TrainedModel, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    model_from_json(&text)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}
