use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsbeam::doa_pipeline::Scenario;
use qsbeam::signal_sim::read_snapshots;
use tempfile::TempDir;

const RING: &str = r#"{
  "array": {"n_per_loop": 12, "loops_per_cylinder": 1, "n_cylinders": 1, "circular_elements": 0,
            "d_v_wavelengths": 0.5, "d_r_wavelengths": 0.5, "carrier_freq_hz": 1e10},
  "sources": [{"az_deg": 45, "el_deg": 45}, {"az_deg": 20, "el_deg": 45}],
  "snapshots": 100,
  "snr_db": 20,
  "training": {"samples_per_class": 6}
}"#;

fn qsbeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsbeam"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let w = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(w.path("ring.json"), RING).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn trained(&self) -> String {
        let model = self.arg("model.json");
        if !self.path("model.json").exists() {
            let o = qsbeam(&["train", "--config", &self.arg("ring.json"), "--out", &model]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
        model
    }
}

#[test]
fn simulate_writes_snapshots_and_sidecar() {
    let w = Workspace::new();
    let out = w.arg("x.bin");
    let o = qsbeam(&[
        "simulate",
        "--config",
        &w.arg("ring.json"),
        "--seed",
        "5",
        "--snapshots",
        "40",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["elements"], 12);
    assert_eq!(summary["snapshots"], 40);
    let (x, sidecar) = read_snapshots(Path::new(&out)).unwrap();
    assert_eq!(sidecar.seed, 5);
    let mut sc = Scenario::from_json(RING).unwrap();
    sc.seed = 5;
    sc.snapshots = 40;
    assert_eq!(x, sc.simulate(&sc.layout().unwrap(), 5).unwrap());
}

#[test]
fn train_doa_and_pattern_round_trip() {
    let w = Workspace::new();
    let model = w.trained();
    let cfg = w.arg("ring.json");
    let doa = w.arg("doa.json");
    let o = qsbeam(&["doa", "--config", &cfg, "--model", &model, "--out", &doa]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let result = json(Path::new(&doa));
    assert_eq!(result["desired_az_deg"], 45.0);
    let mut az: Vec<f64> = result["estimated_az_deg"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    az.sort_by(f64::total_cmp);
    assert_eq!(az, vec![20.0, 45.0]);

    let from_doa = w.arg("p1.csv");
    let from_model = w.arg("p2.csv");
    assert_eq!(
        code(&qsbeam(&[
            "pattern", "--config", &cfg, "--doa", &doa, "--out", &from_doa
        ])),
        0
    );
    assert_eq!(
        code(&qsbeam(&[
            "pattern",
            "--config",
            &cfg,
            "--model",
            &model,
            "--out",
            &from_model
        ])),
        0
    );
    let a = std::fs::read(&from_doa).unwrap();
    assert_eq!(a, std::fs::read(&from_model).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# schema_version=1\nel_deg,az_deg,power_db\n"));
    assert_eq!(text.lines().count(), 2 + 361);
}

#[test]
fn doa_without_model_asks_for_training() {
    let w = Workspace::new();
    let o = qsbeam(&["doa", "--config", &w.arg("ring.json")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train"), "{}", stderr(&o));
}

#[test]
fn model_for_another_array_is_rejected() {
    let w = Workspace::new();
    let model = w.trained();
    // the built-in three-source scene uses the 140-element array
    let o = qsbeam(&["doa", "--model", &model]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no trained model"), "{}", stderr(&o));
}

#[test]
fn beamform_outputs_distortionless_weights() {
    let w = Workspace::new();
    let cfg = w.arg("ring.json");
    let out = w.arg("bf.json");
    let o = qsbeam(&[
        "beamform", "--config", &cfg, "--method", "lcmv", "--out", &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(Path::new(&out));
    let resp = v["desired_response"].as_array().unwrap();
    assert!((resp[0].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert!(resp[1].as_f64().unwrap().abs() < 1e-10);
    assert_eq!(v["weights"].as_array().unwrap().len(), 12);
    assert_eq!(v["forgetting"], 0.99);

    let csv = w.arg("bf.csv");
    let o = qsbeam(&[
        "beamform", "--config", &cfg, "--method", "mvdr", "--grid", "0:90:1", "--out", &csv,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&csv).unwrap().lines().count(),
        2 + 91
    );
}

#[test]
fn collinear_constraints_exit_with_numerical_code() {
    let w = Workspace::new();
    let dup = RING.replace(
        r#"{"az_deg": 20, "el_deg": 45}"#,
        r#"{"az_deg": 45, "el_deg": 45}"#,
    );
    std::fs::write(w.path("dup.json"), dup).unwrap();
    let o = qsbeam(&["beamform", "--config", &w.arg("dup.json")]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("collinear"));
}

#[test]
fn datapath_bench_writes_csv() {
    let w = Workspace::new();
    let out = w.arg("dp.csv");
    let o = qsbeam(&[
        "bench", "datapath", "--stages", "0..8", "--trials", "5", "--out", &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# schema_version=1");
    assert_eq!(lines[1], "# bench=datapath");
    assert!(lines[2].starts_with("stages,throughput_per_cycle,latency_cycles"));
    assert_eq!(lines.len(), 3 + 9);
    assert!(lines[3].starts_with("0,0.125,9,8,"));
}

#[test]
fn throughput_bench_uses_given_model() {
    let w = Workspace::new();
    let model = w.trained();
    let cfg = w.arg("ring.json");
    let out = w.arg("tp.json");
    let o = qsbeam(&[
        "bench",
        "throughput",
        "--config",
        &cfg,
        "--model",
        &model,
        "--snr",
        "0,20",
        "--trials",
        "50",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(Path::new(&out));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["bench"], "throughput");
    assert_eq!(v["sweep"]["values"], serde_json::json!([0.0, 20.0]));
    let o = qsbeam(&[
        "bench",
        "throughput",
        "--config",
        &cfg,
        "--model",
        &model,
        "--trials",
        "10",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let w = Workspace::new();
    std::fs::write(w.path("bad.json"), "{\"sources\": [").unwrap();
    for args in [
        vec!["simulate", "--config", "/nonexistent/scene.json"],
        vec!["simulate", "--config", &w.arg("bad.json")],
        vec!["bench", "datapath", "--stages", "0..20"],
        vec!["bench", "datapath", "--fmt", "12.12"],
        vec![
            "bench",
            "efficiency",
            "--config",
            &w.arg("ring.json"),
            "--patterns",
            "isotropic,yagi",
            "--trials",
            "5",
        ],
        vec!["frobnicate"],
    ] {
        let o = qsbeam(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
}
