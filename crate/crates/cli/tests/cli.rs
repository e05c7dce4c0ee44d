//! End-to-end tests of the command-line workflows over the CSV, manifest and
//! config formats, including the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hydrarm")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn hydrarm")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

struct Workspace {
    root: PathBuf,
}

impl Workspace {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn s(&self, rel: &str) -> String {
        self.path(rel).display().to_string()
    }
}

/// Simulates the calibration bundle plus evaluation suites once and runs the
/// calibration; shared by the downstream command tests.
fn fixture() -> &'static Workspace {
    static FIXTURE: OnceLock<Workspace> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let root = std::env::temp_dir().join(format!("hydrarm_cli_{}", std::process::id()));
        std::fs::create_dir_all(&root).unwrap();
        let ws = Workspace { root };

        // geometry file from the bundled preset
        let machine = hydrarm_core::simulator::preset("case250").unwrap();
        std::fs::write(ws.path("geometry.cfg"), machine.geometry.to_config_string()).unwrap();

        let sim = run(&[
            "simulate",
            "--preset",
            "case250",
            "--scenario",
            "calibration_bundle",
            "--out",
            &ws.s("data"),
            "--seed",
            "40",
        ]);
        assert!(sim.status.success(), "simulate: {}", stderr(&sim));

        let weigh = run(&[
            "simulate",
            "--preset",
            "case250",
            "--scenario",
            "weighing_cycles",
            "--out",
            &ws.s("data"),
            "--seed",
            "40",
        ]);
        assert!(weigh.status.success(), "simulate weighing: {}", stderr(&weigh));

        let qs = run(&[
            "simulate",
            "--preset",
            "case250",
            "--scenario",
            "quasistatic_sweeps",
            "--out",
            &ws.s("data"),
            "--seed",
            "40",
        ]);
        assert!(qs.status.success(), "simulate quasistatic: {}", stderr(&qs));

        let grading = run(&[
            "simulate",
            "--preset",
            "case250",
            "--scenario",
            "grading_sweeps",
            "--out",
            &ws.s("data"),
            "--seed",
            "40",
        ]);
        assert!(grading.status.success(), "simulate grading: {}", stderr(&grading));

        let cal = run(&[
            "calibrate",
            "--geometry",
            &ws.s("geometry.cfg"),
            "--manifest",
            &ws.s("data/bundle.manifest"),
            "--out",
            &ws.s("cal"),
            "--date",
            "2026-08-08",
        ]);
        assert!(cal.status.success(), "calibrate: {}", stderr(&cal));
        ws
    })
}

fn weighing_files(ws: &Workspace, count: usize) -> Vec<String> {
    let mut files: Vec<String> = std::fs::read_dir(ws.path("data/weighing"))
        .unwrap()
        .map(|e| e.unwrap().path().display().to_string())
        .collect();
    files.sort();
    files.truncate(count);
    files
}

#[test]
fn simulate_writes_55_weighing_episodes() {
    let ws = fixture();
    let files = std::fs::read_dir(ws.path("data/weighing")).unwrap().count();
    assert_eq!(files, 55);
}

#[test]
fn simulate_same_seed_identical_bytes() {
    let ws = fixture();
    let out_a = ws.s("rerun_a");
    let out_b = ws.s("rerun_b");
    for out in [&out_a, &out_b] {
        let r = run(&[
            "simulate",
            "--preset",
            "case250",
            "--scenario",
            "grading_sweeps",
            "--out",
            out,
            "--seed",
            "7",
        ]);
        assert!(r.status.success(), "{}", stderr(&r));
    }
    let a = std::fs::read(Path::new(&out_a).join("grading/grading_00.csv")).unwrap();
    let b = std::fs::read(Path::new(&out_b).join("grading/grading_00.csv")).unwrap();
    assert_eq!(a, b, "same seed must produce identical bytes");
}

#[test]
fn missing_geometry_file_exits_2() {
    let r = run(&[
        "calibrate",
        "--geometry",
        "/nonexistent/geom.cfg",
        "--manifest",
        "/nonexistent/bundle.manifest",
        "--out",
        "/tmp/hydrarm_nowhere",
    ]);
    assert_eq!(r.status.code(), Some(2), "stderr: {}", stderr(&r));
}

#[test]
fn calibrate_reports_stages_and_writes_params() {
    let ws = fixture();
    assert!(ws.path("cal/params.cfg").exists());
    let report = std::fs::read_to_string(ws.path("cal/report.txt")).unwrap();
    let order = ["inertia", "friction", "gravity", "centripetal"];
    let mut last = 0;
    for stage in order {
        let pos = report.find(stage).unwrap_or_else(|| panic!("report lists {stage}"));
        assert!(pos > last, "stage {stage} out of order");
        last = pos;
    }
    let params = std::fs::read_to_string(ws.path("cal/params.cfg")).unwrap();
    assert!(params.contains("calibrated_at=2026-08-08"));
    assert!(params.contains("machine_id=case250"));
}

#[test]
fn calibrate_without_slew_data_exits_3_naming_stage() {
    let ws = fixture();
    let manifest = std::fs::read_to_string(ws.path("data/bundle.manifest")).unwrap();
    let stripped: String = manifest
        .lines()
        .filter(|l| !l.starts_with("centripetal"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(ws.path("data/noslew.manifest"), stripped).unwrap();
    let r = run(&[
        "calibrate",
        "--geometry",
        &ws.s("geometry.cfg"),
        "--manifest",
        &ws.s("data/noslew.manifest"),
        "--out",
        &ws.s("cal_noslew"),
    ]);
    assert_eq!(r.status.code(), Some(3), "stderr: {}", stderr(&r));
    assert!(stderr(&r).contains("centripetal"), "stderr names the stage: {}", stderr(&r));
}

#[test]
fn estimate_payload_writes_results_and_histogram() {
    let ws = fixture();
    let mut args = vec![
        "estimate".to_string(),
        "--mode".to_string(),
        "payload".to_string(),
        "--geometry".to_string(),
        ws.s("geometry.cfg"),
        "--params".to_string(),
        ws.s("cal/params.cfg"),
        "--out".to_string(),
        ws.s("est"),
    ];
    args.extend(weighing_files(ws, 52));
    let r = Command::new(bin()).args(&args).output().unwrap();
    assert!(r.status.success(), "{}", stderr(&r));
    let results = std::fs::read_to_string(ws.path("est/payload_results.txt")).unwrap();
    assert_eq!(results.matches("episode=").count(), 52);
    assert!(results.contains("truth_kg="));
    let histogram = std::fs::read_to_string(ws.path("est/payload_histogram.csv")).unwrap();
    let total: usize = histogram
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 52, "histogram counts all 52 measurements");
    assert!(stdout(&r).contains("mean error"));
}

#[test]
fn estimate_outputs_are_deterministic() {
    let ws = fixture();
    let run_est = |out: &str| {
        let mut args = vec![
            "estimate".to_string(),
            "--mode".to_string(),
            "payload".to_string(),
            "--geometry".to_string(),
            ws.s("geometry.cfg"),
            "--params".to_string(),
            ws.s("cal/params.cfg"),
            "--out".to_string(),
            ws.s(out),
        ];
        args.extend(weighing_files(ws, 8));
        let r = Command::new(bin()).args(&args).output().unwrap();
        assert!(r.status.success(), "{}", stderr(&r));
    };
    run_est("det_a");
    run_est("det_b");
    let a = std::fs::read(ws.path("det_a/payload_results.txt")).unwrap();
    let b = std::fs::read(ws.path("det_b/payload_results.txt")).unwrap();
    assert_eq!(a, b, "estimation outputs must be byte-identical");
}

#[test]
fn estimate_force_writes_stream_csv() {
    let ws = fixture();
    let r = run(&[
        "estimate",
        "--mode",
        "force",
        "--geometry",
        &ws.s("geometry.cfg"),
        "--params",
        &ws.s("cal/params.cfg"),
        "--out",
        &ws.s("force"),
        &ws.s("data/grading/grading_00.csv"),
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    let csv = std::fs::read_to_string(ws.path("force/grading_00_force.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,fx,fy,magnitude,direction_rad,valid");
    let rows = lines.count();
    assert!(rows > 250, "50 Hz stream rows, got {rows}");
}

#[test]
fn estimate_without_episodes_exits_4() {
    let ws = fixture();
    let r = run(&[
        "estimate",
        "--mode",
        "payload",
        "--geometry",
        &ws.s("geometry.cfg"),
        "--params",
        &ws.s("cal/params.cfg"),
        "--out",
        &ws.s("est_empty"),
    ]);
    assert_eq!(r.status.code(), Some(4), "stderr: {}", stderr(&r));
}

#[test]
fn estimate_without_calibration_exits_4() {
    let ws = fixture();
    let r = run(&[
        "estimate",
        "--mode",
        "payload",
        "--geometry",
        &ws.s("geometry.cfg"),
        "--params",
        &ws.s("cal/absent_params.cfg"),
        "--out",
        &ws.s("est_none"),
        &ws.s("data/weighing/weighing_00_standard.csv"),
    ]);
    assert_eq!(r.status.code(), Some(4), "stderr: {}", stderr(&r));
}

#[test]
fn benchmark_emits_comparison_table() {
    let ws = fixture();
    let mut suite = String::new();
    for entry in std::fs::read_dir(ws.path("data/quasistatic")).unwrap() {
        suite.push_str(&format!("quasistatic={}\n", entry.unwrap().path().display()));
    }
    for file in weighing_files(ws, 20) {
        suite.push_str(&format!("dynamic={file}\n"));
    }
    std::fs::write(ws.path("suite.cfg"), suite).unwrap();
    let r = run(&[
        "benchmark",
        "--geometry",
        &ws.s("geometry.cfg"),
        "--params",
        &ws.s("cal/params.cfg"),
        "--suite",
        &ws.s("suite.cfg"),
        "--out",
        &ws.s("bench"),
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    let table = std::fs::read_to_string(ws.path("bench/benchmark.csv")).unwrap();
    assert!(table.starts_with("method,episodes,mean_error_kg,std_kg"));
    assert!(table.contains("dynamic,20,"));
    assert!(table.contains("quasistatic,20,"));
    // the dynamic weighing suite degrades the baseline by well over the
    // acceptance factor
    let out = stdout(&r);
    let ratio_line = out
        .lines()
        .find(|l| l.contains("std ratio"))
        .expect("ratio line");
    let ratio: f64 = ratio_line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(ratio >= 5.0, "{ratio_line}");
}

#[test]
fn benchmark_empty_suite_fails() {
    let ws = fixture();
    std::fs::write(ws.path("empty_suite.cfg"), "").unwrap();
    let r = run(&[
        "benchmark",
        "--geometry",
        &ws.s("geometry.cfg"),
        "--params",
        &ws.s("cal/params.cfg"),
        "--suite",
        &ws.s("empty_suite.cfg"),
        "--out",
        &ws.s("bench_empty"),
    ]);
    assert_eq!(r.status.code(), Some(4), "stderr: {}", stderr(&r));
}

#[test]
fn sensitivity_map_reports_envelope_ratio() {
    let ws = fixture();
    let r = run(&[
        "sensitivity-map",
        "--preset",
        "case250",
        "--out",
        &ws.s("map"),
        "--probe",
        "1000",
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    let csv = std::fs::read_to_string(ws.path("map/sensitivity_map.csv")).unwrap();
    assert!(csv.starts_with("x,y,pressure_per_force_pa"));
    let out = stdout(&r);
    let ratio_line = out.lines().find(|l| l.contains("ratio")).expect("ratio line");
    let ratio: f64 = ratio_line
        .split("ratio ")
        .nth(1)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((2.0..=5.0).contains(&ratio), "{ratio_line}");
}

#[test]
fn custom_script_simulation() {
    let ws = fixture();
    let script = "name=custom_lift\npayload=650\nwaypoint=0, 0.0, -1.4, -0.8, 0\nwaypoint=3.0, 0.5, -1.1, -0.8, 0\n";
    std::fs::write(ws.path("lift.script"), script).unwrap();
    let r = run(&[
        "simulate",
        "--preset",
        "case250",
        "--script",
        &ws.s("lift.script"),
        "--out",
        &ws.s("custom"),
        "--seed",
        "5",
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(ws.path("custom/custom/custom_lift.csv").exists());
}
