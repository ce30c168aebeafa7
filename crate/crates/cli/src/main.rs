use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use harp_core::data_io::{load_model, load_tracks, save_model, train_model, write_atomic, ColumnMap, TrainOptions};
use harp_core::motion::{sm_rollout, SmParams};
use harp_core::sim::{rollout_csv, simulate, Outcome, PredictorKind, Scenario, SimOutput};

/// Exit status for unreadable or invalid inputs.
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "harp", version, about = "Danger-aware replanning among pedestrians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CostArg {
    Danger,
    Length,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PredictorArg {
    Sm,
    Gmr,
    Gmm,
}

impl From<PredictorArg> for PredictorKind {
    fn from(p: PredictorArg) -> Self {
        match p {
            PredictorArg::Sm => PredictorKind::Sm,
            PredictorArg::Gmr => PredictorKind::Gmr,
            PredictorArg::Gmm => PredictorKind::Gmm,
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Trained mixture, overriding the scenario's model path.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    predictor: Option<PredictorArg>,
    #[arg(long)]
    steps_max: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the three-class mixture from a tracks table.
    Train {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Column indices of frame, id, x and y.
        #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [0usize, 1, 2, 4])]
        columns: Vec<usize>,
        #[arg(long, default_value_t = 2.5)]
        frame_rate: f64,
        #[arg(long, default_value_t = 1.0)]
        lat_threshold: f64,
        #[arg(long, default_value_t = 10.0)]
        min_duration: f64,
        #[arg(long, default_value_t = 16.0)]
        max_duration: f64,
        #[arg(long, default_value_t = 0.4)]
        resample_dt: f64,
    },
    /// Run one scenario, writing the trace and a metrics file.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "danger")]
        cost: CostArg,
        /// Trace output (JSON lines).
        #[arg(long)]
        out: PathBuf,
        /// Metrics output; defaults to the trace path with a `.metrics.json` suffix.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run a scenario with danger-aware and length-only costs under one seed.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Side-by-side metrics report; traces are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample paths of the linear stochastic model as CSV.
    Rollout {
        #[arg(long, default_value_t = 80)]
        n: usize,
        #[arg(long, default_value_t = 13.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        v_ln: Option<f64>,
        #[arg(long)]
        sigma2_lt: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn load_scenario(args: &RunArgs) -> Result<Scenario> {
    let mut s = Scenario::load(&args.scenario)
        .with_context(|| format!("loading scenario {}", args.scenario.display()))?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(n) = args.steps_max {
        s.simulation.steps_max = n;
    }
    if let Some(p) = args.predictor {
        s.model.predictor = p.into();
    }
    if let Some(m) = &args.model {
        s.model.path = Some(m.clone());
    }
    Ok(s)
}

fn run_variant(scenario: &Scenario, cost: CostArg) -> Result<SimOutput> {
    let mut s = scenario.clone();
    match cost {
        CostArg::Length => s.model.predictor = PredictorKind::Length,
        CostArg::Danger if s.model.predictor == PredictorKind::Length => s.model.predictor = PredictorKind::Sm,
        CostArg::Danger => {}
    }
    s.validate()?;
    let tracks = s.load_tracks()?;
    let mixture = match (&s.model.path, s.model.predictor.needs_model()) {
        (Some(p), true) => Some(Arc::new(
            load_model(p).with_context(|| format!("loading model {}", p.display()))?.model,
        )),
        _ => None,
    };
    let danger = s.danger_model(mixture)?;
    Ok(simulate(&s, tracks, danger)?)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn summary(label: &str, out: &SimOutput) {
    let m = &out.metrics;
    let clear = m.min_clearance.map_or("n/a".to_string(), |c| format!("{c:.3} m"));
    eprintln!(
        "{label}: {:?} after {} steps, min clearance {clear}, path {:.2} m, {} stops",
        out.outcome, m.steps, m.path_length, m.stops
    );
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Train {
            tracks,
            out,
            k,
            seed,
            columns,
            frame_rate,
            lat_threshold,
            min_duration,
            max_duration,
            resample_dt,
        } => {
            let map = ColumnMap {
                frame: columns[0],
                id: columns[1],
                x: columns[2],
                y: columns[3],
                frame_rate,
            };
            let raw = load_tracks(&tracks, &map)?;
            let opts = TrainOptions {
                k_per_class: k,
                lat_threshold,
                min_duration,
                max_duration,
                resample_dt,
                seed,
                ..TrainOptions::default()
            };
            let trained = train_model(&raw, &opts)?;
            save_model(&out, &trained)?;
            if let Some(meta) = &trained.metadata {
                eprintln!(
                    "trained {} components from {} tracks (classes {:?}, {} discarded)",
                    trained.model.len(),
                    raw.len(),
                    meta.class_counts,
                    meta.discarded
                );
            }
            Ok(0)
        }
        Command::Simulate {
            run,
            cost,
            out,
            metrics,
        } => {
            let scenario = load_scenario(&run)?;
            let result = run_variant(&scenario, cost)?;
            result.write_trace(&out)?;
            let metrics_path = metrics.unwrap_or_else(|| with_suffix(&out, ".metrics.json"));
            write_json(
                &metrics_path,
                &json!({ "outcome": result.outcome, "metrics": result.metrics, "setup_ms": result.setup_ms }),
            )?;
            summary(result.header.predictor.label(), &result);
            Ok(result.outcome.exit_code() as u8)
        }
        Command::Compare { run, out } => {
            let scenario = load_scenario(&run)?;
            let danger = run_variant(&scenario, CostArg::Danger)?;
            let length = run_variant(&scenario, CostArg::Length)?;
            danger.write_trace(&with_suffix(&out, ".danger.jsonl"))?;
            length.write_trace(&with_suffix(&out, ".length.jsonl"))?;
            let report = json!({
                "seed": scenario.seed,
                "danger": {
                    "predictor": danger.header.predictor,
                    "outcome": danger.outcome,
                    "metrics": danger.metrics,
                },
                "length": {
                    "predictor": length.header.predictor,
                    "outcome": length.outcome,
                    "metrics": length.metrics,
                },
            });
            write_json(&out, &report)?;
            summary("danger", &danger);
            summary("length", &length);
            let worst = [danger.outcome, length.outcome]
                .into_iter()
                .find(|o| *o != Outcome::Arrived)
                .unwrap_or(Outcome::Arrived);
            Ok(worst.exit_code() as u8)
        }
        Command::Rollout {
            n,
            horizon,
            seed,
            dt,
            v_ln,
            sigma2_lt,
            out,
        } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            let d = SmParams::default();
            let params = SmParams {
                dt: dt.unwrap_or(d.dt),
                v_ln: v_ln.unwrap_or(d.v_ln),
                sigma2_lt: sigma2_lt.unwrap_or(d.sigma2_lt),
            };
            let paths = sm_rollout(&params, horizon, n, seed)?;
            write_atomic(&out, rollout_csv(&paths).as_bytes())
                .with_context(|| format!("writing {}", out.display()))?;
            Ok(0)
        }
    }
}
