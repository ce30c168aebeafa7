use std::path::PathBuf;
use std::process::{Command, Stdio};

fn harp() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_harp"));
    cmd.stderr(Stdio::null());
    cmd
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn read_json(path: &std::path::Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Three classes of synthetic walkers in obsmat layout.
fn write_tracks(path: &std::path::Path) {
    let mut rows = Vec::new();
    let mut id = 0;
    for bend in [0.0, 0.09, -0.09] {
        for n in 0..12 {
            id += 1;
            let (mut x, mut y) = (n as f64 * 0.7, (n % 5) as f64);
            let heading = 0.2 * n as f64;
            let speed = 1.0 + 0.03 * n as f64;
            for f in 0..=(28 + n) {
                rows.push((f + id * 2, id, x, y));
                let a = heading + bend * (1.0 + 0.05 * n as f64) * f as f64 / 2.5;
                x += speed * a.cos() / 2.5;
                y += speed * a.sin() / 2.5;
            }
        }
    }
    rows.sort_by_key(|r| (r.0, r.1));
    let text: String = rows.iter().map(|(f, id, x, y)| format!("{f} {id} {x:.5} 0.0 {y:.5}\n")).collect();
    std::fs::write(path, text).unwrap();
}

#[test]
fn simulate_writes_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.jsonl");
    let status = harp()
        .args(["simulate", "--scenario"])
        .arg(fixture("empty.json"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let trace = std::fs::read_to_string(&out).unwrap();
    let header: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(header["header"]["format"], "harp-trace");
    assert!(trace.lines().count() > 1);
    let metrics = read_json(&dir.path().join("run.metrics.json"));
    assert_eq!(metrics["outcome"], "arrived");
    assert!(metrics["metrics"]["path_length"].as_f64().unwrap() > 3.6);
}

#[test]
fn compare_reports_both_costs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let status = harp()
        .args(["compare", "--scenario"])
        .arg(fixture("crossing.json"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(matches!(status.code(), Some(0) | Some(2)));
    assert!(dir.path().join("report.danger.jsonl").exists());
    assert!(dir.path().join("report.length.jsonl").exists());
    let report = read_json(&out);
    assert_eq!(report["danger"]["predictor"], "sm");
    assert_eq!(report["length"]["predictor"], "length");
    let d = report["danger"]["metrics"]["min_clearance"].as_f64().unwrap();
    let l = report["length"]["metrics"]["min_clearance"].as_f64().unwrap();
    assert!(d >= l, "danger {d} < length {l}");
}

#[test]
fn train_then_simulate_with_gmr() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = dir.path().join("tracks.txt");
    let model = dir.path().join("model.json");
    write_tracks(&tracks);
    let status = harp()
        .args(["train", "--k", "2", "--tracks"])
        .arg(&tracks)
        .arg("--out")
        .arg(&model)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let saved = read_json(&model);
    assert_eq!(saved["format"], "harp-gmm");
    assert!(!saved["components"].as_array().unwrap().is_empty());

    let out = dir.path().join("gmr.jsonl");
    let status = harp()
        .args(["simulate", "--predictor", "gmr", "--steps-max", "20", "--scenario"])
        .arg(fixture("crossing.json"))
        .arg("--model")
        .arg(&model)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(matches!(status.code(), Some(0) | Some(2)));
    let trace = std::fs::read_to_string(&out).unwrap();
    assert!(trace.lines().next().unwrap().contains("\"gmr\""));
}

#[test]
fn rollout_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let status = harp()
        .args(["rollout", "--n", "3", "--horizon", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "ln_0,lt_0,ln_1,lt_1,ln_2,lt_2");
    assert_eq!(lines.count(), 11);
}

#[test]
fn bad_inputs_exit_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = harp()
        .args(["simulate", "--scenario"])
        .arg(&missing)
        .arg("--out")
        .arg(dir.path().join("t.jsonl"))
        .stderr(Stdio::piped())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let garbage = dir.path().join("bad.json");
    std::fs::write(&garbage, "{\"robot\": 1}").unwrap();
    let code = harp()
        .args(["simulate", "--scenario"])
        .arg(&garbage)
        .arg("--out")
        .arg(dir.path().join("t.jsonl"))
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(3));

    let code = harp()
        .args(["simulate", "--predictor", "gmm", "--scenario"])
        .arg(fixture("empty.json"))
        .arg("--out")
        .arg(dir.path().join("t.jsonl"))
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(3), "gmm without a model must be rejected");
}
