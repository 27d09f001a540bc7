use std::path::Path;
use std::process::{Command, Output};

fn replab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_replab"))
        .args(args)
        .current_dir(dir)
        .env("REPLAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn summary(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout.clone()).unwrap();
    assert_eq!(out.lines().count(), 1, "{out}");
    serde_json::from_str(&out).unwrap()
}

fn games() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../games")
}

#[test]
fn solve_matching_pennies() {
    let dir = tempfile::tempdir().unwrap();
    let g = games().join("matching_pennies.json");
    let v = summary(&replab(dir.path(), &["solve", g.to_str().unwrap()]));
    assert!(v["value"].as_f64().unwrap().abs() < 1e-9);
    for key in ["p", "q"] {
        for w in v[key].as_array().unwrap() {
            assert!((w.as_f64().unwrap() - 0.5).abs() < 1e-9);
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = replab(dir.path(), &["solve", "nope.json"]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.json"), "{\"name\": \"g\", \"A\": [[1, 2], [3,]]}").unwrap();
    let o = replab(dir.path(), &["solve", "bad.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte offset 31"));

    let o = replab(dir.path(), &["simulate-ode", "mp_3x2", "--t-end", "0"]);
    assert_eq!(o.status.code(), Some(4));
    let o = replab(dir.path(), &["analyze", "mp_3x2", "--sigma", "0.2,0.2", "--eta", "0.2"]);
    assert_eq!(o.status.code(), Some(4));
    let o = replab(dir.path(), &["solve", "mp_3x2", "--unknown"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn simulate_then_measure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let v = summary(&replab(
        p,
        &["simulate-sde", "matching_pennies", "--sigma", "0.2", "--eta", "0.2", "--reduced", "--t-end", "50", "--seed", "7", "--out", "a.csv"],
    ));
    assert_eq!(v["rows"], 5001);
    summary(&replab(
        p,
        &["simulate-sde", "matching_pennies", "--sigma", "0.2", "--eta", "0.2", "--reduced", "--t-end", "50", "--seed", "7", "--out", "b.csv"],
    ));
    assert_eq!(std::fs::read(p.join("a.csv")).unwrap(), std::fs::read(p.join("b.csv")).unwrap());

    let v = summary(&replab(p, &["occupancy", "a.csv", "--bins", "20", "--burn-in", "5", "--out", "h.json"]));
    assert_eq!(v["axes"], serde_json::json!(["x_1", "y_1"]));
    let h: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("h.json")).unwrap()).unwrap();
    assert_eq!(h["counts"].as_array().unwrap().len(), 400);

    let v = summary(&replab(p, &["corner-mass", "a.csv", "--radius", "0.1"]));
    let total = v["total"].as_f64().unwrap();
    assert!((total + v["residual"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let v = summary(&replab(p, &["regret", "matching_pennies", "a.csv", "--sigma", "0.2", "--eta", "0.2", "--reduced"]));
    assert_eq!(v["stochastic"], true);
}

#[test]
fn replicas_write_one_file_each() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    summary(&replab(
        p,
        &["simulate-sde", "mp_3x2", "--sigma", "0.2", "--eta", "0.2", "--t-end", "5", "--replicas", "4", "--out", "run.csv"],
    ));
    for k in 0..4 {
        assert!(p.join(format!("run_{k}.csv")).exists());
    }
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(s["runs"].as_array().unwrap().len(), 4);
}

#[test]
fn classify_corners_csv() {
    let dir = tempfile::tempdir().unwrap();
    let v = summary(&replab(dir.path(), &["classify-corners", "matching_pennies", "--sigma", "0.2", "--eta", "0.2", "--reduced"]));
    assert_eq!(v["cycle"].as_array().unwrap().len(), 4);
    let csv = std::fs::read_to_string(dir.path().join("corners.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("i,j,H,Lambda,label"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn analyze_3x2_reports_faces() {
    let dir = tempfile::tempdir().unwrap();
    let v = summary(&replab(dir.path(), &["analyze", "mp_3x2", "--sigma", "0.2", "--eta", "0.2"]));
    assert_eq!(v["faces"]["near_face_label"], "attracting");
    assert_eq!(v["faces"]["far_face_label"], "repelling");
    assert_eq!(v["noise_conditions"]["small"], true);
}

#[test]
fn reproduce_figure_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let v = summary(&replab(d.path(), &["reproduce-figure", "1b", "--out-dir", "out", "--seed", "3"]));
        assert_eq!(v["figure"], "1b");
    }
    let names: Vec<_> = std::fs::read_dir(a.path().join("out")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 6);
    for n in names {
        let fa = std::fs::read(a.path().join("out").join(&n)).unwrap();
        let fb = std::fs::read(b.path().join("out").join(&n)).unwrap();
        assert_eq!(fa, fb, "{n:?}");
    }
}
