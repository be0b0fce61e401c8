//! End-to-end checks of the binary: schema failures, exit codes, output
//! formats and byte-level determinism.

use std::path::PathBuf;
use std::process::Command;

fn rym() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rym"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rym-cli-test-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &PathBuf, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const QUICK_TORUS: &str = r#"{
  "surface": {"kind": "torus", "resolution": 16},
  "bundle": {"k": 1, "c1": [1], "lambda": 0},
  "initial": {"u": {"preset": "cos_mode", "amplitude": 0.2}},
  "control": {"t_end": 0.05, "stride": 5},
  "outputs": {"dir": "quick"}
}"#;

#[test]
fn run_writes_outputs_with_contracted_formats() {
    let dir = temp_dir("formats");
    let cfg = write_config(&dir, "quick.json", QUICK_TORUS);
    let status = rym().arg("run").arg(&cfg).env("RYM_OUT_DIR", &dir).status().unwrap();
    assert_eq!(status.code(), Some(0));

    let ts = std::fs::read_to_string(dir.join("quick/timeseries.csv")).unwrap();
    let mut lines = ts.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,sup_u,inf_u,volume,F_liouville,F_energy,calabi,sup_grad_f_sq,diameter,com_x,com_y,com_z"
    );
    // t column strictly increasing; torus rows leave the center-of-mass empty
    let mut prev = f64::NEG_INFINITY;
    for line in ts.lines().skip(1) {
        let mut cells = line.split(',');
        let t: f64 = cells.next().unwrap().parse().unwrap();
        assert!(t > prev);
        prev = t;
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 12);
        assert!(cols[9].is_empty() && cols[10].is_empty() && cols[11].is_empty());
    }

    let snap = std::fs::read_to_string(dir.join("quick/snapshot_final.csv")).unwrap();
    assert!(snap.starts_with("vertex,x,y,z,u,f_1\n"));
    assert_eq!(snap.lines().count(), 16 * 16 + 1);

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("quick/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["termination"], "reached_t_end");
    assert_eq!(meta["exit_code"], 0);
    assert_eq!(meta["config"]["control"]["cfl"], 0.5);
    assert!(meta["mesh_hash"].as_str().unwrap().len() == 16);
}

#[test]
fn identical_configs_produce_identical_bytes() {
    let dir = temp_dir("determinism");
    let cfg = write_config(&dir, "quick.json", QUICK_TORUS);
    let read_all = |dir: &PathBuf| {
        let mut blobs = Vec::new();
        for f in ["quick/timeseries.csv", "quick/snapshot_final.csv", "quick/meta.json"] {
            blobs.push(std::fs::read(dir.join(f)).unwrap());
        }
        blobs
    };
    assert_eq!(rym().arg("run").arg(&cfg).env("RYM_OUT_DIR", &dir).status().unwrap().code(), Some(0));
    let first = read_all(&dir);
    assert_eq!(rym().arg("run").arg(&cfg).env("RYM_OUT_DIR", &dir).status().unwrap().code(), Some(0));
    let second = read_all(&dir);
    assert_eq!(first, second);
}

#[test]
fn snapshot_of_constant_state_has_constant_column() {
    let dir = temp_dir("constant");
    let cfg = write_config(
        &dir,
        "const.json",
        r#"{
          "surface": {"kind": "torus", "resolution": 16},
          "bundle": {"k": 1, "c1": [0], "lambda": 0},
          "initial": {"u": {"preset": "constant", "value": 0.7}},
          "control": {"t_end": 0.2, "stride": 10},
          "outputs": {"dir": "const"}
        }"#,
    );
    assert_eq!(rym().arg("run").arg(&cfg).env("RYM_OUT_DIR", &dir).status().unwrap().code(), Some(0));
    let snap = std::fs::read_to_string(dir.join("const/snapshot_final.csv")).unwrap();
    let us: Vec<&str> = snap.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert!(us.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn collapse_preset_exits_with_singularity_code() {
    let dir = temp_dir("collapse");
    // homogeneous start collapses at e^{u0}; constant fields keep it cheap
    let cfg = write_config(
        &dir,
        "collapse.json",
        r#"{
          "surface": {"kind": "sphere", "resolution": 3},
          "bundle": {"k": 1, "c1": [0], "lambda": 0},
          "initial": {"u": {"preset": "constant", "value": -1.0}},
          "control": {"t_end": 1.0, "stride": 50},
          "outputs": {"dir": "collapse"}
        }"#,
    );
    let status = rym().arg("run").arg(&cfg).env("RYM_OUT_DIR", &dir).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("collapse/meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["termination"], "singularity");
    let t = meta["singular_time"].as_f64().unwrap();
    let expect = (-1.0f64).exp();
    assert!((t - expect).abs() <= 1e-3, "singular at {t}, expected {expect}");
}

#[test]
fn homogeneous_mode_runs_the_scalar_reduction() {
    let dir = temp_dir("homog");
    let cfg = write_config(
        &dir,
        "homog.json",
        r#"{
          "surface": {"kind": "homogeneous", "r_sigma": -1.0, "a_sigma": 12.566370614359172},
          "bundle": {"k": 1, "c1": [2], "lambda": 1},
          "initial": {"u": {"preset": "constant", "value": -1.0}},
          "control": {"t_end": 1.0, "dt": 0.001},
          "outputs": {"dir": "homog"}
        }"#,
    );
    let status = rym().arg("run").arg(&cfg).env("RYM_OUT_DIR", &dir).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let ts = std::fs::read_to_string(dir.join("homog/timeseries.csv")).unwrap();
    assert_eq!(ts.lines().count(), 1002);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("homog/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["verdicts"][0]["case"], "chi_neg");
    assert_eq!(meta["verdicts"][0]["pass"], true);
}

#[test]
fn schema_violations_exit_4() {
    let dir = temp_dir("schema");
    for body in [
        r#"{"surface": {"kind": "torus", "resolution": 16}, "bundle": {"k": 1, "c1": [0], "lambda": 2}}"#,
        r#"{"surface": {"kind": "torus", "resolution": 16}, "bundle": {"k": 1, "c1": [0], "lambda": 0}, "unknown": 3}"#,
        r#"{"surface": {"kind": "torus", "resolution": 7}, "bundle": {"k": 1, "c1": [0], "lambda": 0}}"#,
        r#"not json"#,
    ] {
        let cfg = write_config(&dir, "bad.json", body);
        let out = rym().arg("run").arg(&cfg).env("RYM_OUT_DIR", &dir).output().unwrap();
        assert_eq!(out.status.code(), Some(4), "config should be rejected: {body}");
    }
    // missing file and bad usage
    assert_eq!(rym().arg("run").arg(dir.join("nope.json")).output().unwrap().status.code(), Some(4));
    assert_eq!(rym().arg("bogus").output().unwrap().status.code(), Some(4));
}

#[test]
fn preset_output_parses_back() {
    for name in ["case1", "case2", "case3", "case4"] {
        let out = rym().arg("preset").arg(name).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        rym_cli::parse_config(&text).unwrap();
    }
    assert_eq!(rym().arg("preset").arg("case9").output().unwrap().status.code(), Some(4));
}

#[test]
fn sweep_runs_all_configs_and_reports_worst_code() {
    let dir = temp_dir("sweep");
    let sweep_dir = dir.join("configs");
    std::fs::create_dir_all(&sweep_dir).unwrap();
    write_config(
        &sweep_dir.to_path_buf(),
        "a.json",
        r#"{
          "surface": {"kind": "torus", "resolution": 16},
          "bundle": {"k": 1, "c1": [0], "lambda": 0},
          "control": {"t_end": 0.02, "stride": 5},
          "outputs": {"dir": "sweep_a"}
        }"#,
    );
    write_config(
        &sweep_dir.to_path_buf(),
        "b.json",
        r#"{
          "surface": {"kind": "torus", "resolution": 16},
          "bundle": {"k": 1, "c1": [2], "lambda": 1},
          "control": {"t_end": 0.02, "stride": 5},
          "outputs": {"dir": "sweep_b"}
        }"#,
    );
    let status = rym().arg("sweep").arg(&sweep_dir).env("RYM_OUT_DIR", &dir).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.join("sweep_a/meta.json").exists());
    assert!(dir.join("sweep_b/meta.json").exists());
}
