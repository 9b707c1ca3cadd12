use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lfdispense::imaging::GrayImage;
use tempfile::TempDir;

const PUMP: &str = r#"{"steps_per_rev":200,"microstepping":16,"syringe_inner_diameter":14.5,"leadscrew_lead":8.0,"max_flow_rate":500.0}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lfdispense"));
    c.env_remove("LFDISPENSE_CONFIG_DIR");
    c.env("SOURCE_DATE_EPOCH", "1700000000");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn single_line_plan(volume: f64) -> String {
    format!(
        r#"{{"lines":[{{"total_volume":{volume},"travel_distance":200,"dispensing_speed":3000,"mix":{{"fractions":[1]}},"y_start":0}}],
"membrane_window":[0,200],"pump_specs":[{PUMP}],
"calibration":[{{"microsteps_per_microliter":2.4223344489610708,"source":"geometric"}}]}}"#
    )
}

fn setup() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("plan.json"), single_line_plan(20.0)).unwrap();
    fs::write(dir.path().join("spec.json"), PUMP).unwrap();
    fs::write(
        dir.path().join("machine.json"),
        format!(r#"{{"pump_specs":[{PUMP}]}}"#),
    )
    .unwrap();
    dir
}

fn trace_total(csv: &str) -> f64 {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').nth(5).unwrap().parse::<f64>().unwrap())
        .sum()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let o = bin().output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    assert_eq!(bin().arg("print").output().unwrap().status.code(), Some(2));
    let o = bin().args(["predict", "--dr", "60", "--fast"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn version_and_help() {
    let o = bin().arg("--version").output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
    assert!(bin().args(["simulate", "--help"]).output().unwrap().status.success());
}

#[test]
fn calibrate_prints_result() {
    let dir = setup();
    let o = run_in(dir.path(), &["calibrate", "spec.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let k = v["microsteps_per_microliter"].as_f64().unwrap();
    assert!((k - 2.4223).abs() < 5e-4);
    assert_eq!(v["source"], "geometric");

    let o = run_in(
        dir.path(),
        &["calibrate", "spec.json", "--microsteps", "1000", "--mass-mg", "412.84"],
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["source"], "gravimetric");
    assert!((v["microsteps_per_microliter"].as_f64().unwrap() - 2.41740141459161).abs() < 1e-12);
}

#[test]
fn compile_then_simulate_single_line() {
    let dir = setup();
    let o = run_in(dir.path(), &["compile", "--plan", "plan.json", "--out", "p.gcode"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let gcode = fs::read_to_string(dir.path().join("p.gcode")).unwrap();
    assert!(gcode.lines().any(|l| l == "G1 F3000 Y200 E20"), "{gcode}");

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("p.gcode.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "compile");
    assert_eq!(manifest["timestamp"], "2023-11-14T22:13:20Z");
    assert_eq!(manifest["inputs"]["plan.json"].as_str().unwrap().len(), 64);
    assert!(manifest["outputs"]["p.gcode"].is_string());

    let o = run_in(
        dir.path(),
        &["simulate", "--gcode", "p.gcode", "--machine", "machine.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with(
        "segment,y_from_mm,y_to_mm,duration_s,ch,volume_uL,dr_nL_per_mm,flow_uL_per_min,warnings\n"
    ));
    assert!((trace_total(&csv) - 20.0).abs() < 1e-9);
}

#[test]
fn machine_defaults_to_config_dir() {
    let dir = setup();
    run_in(dir.path(), &["compile", "--plan", "plan.json", "--out", "p.gcode"]);
    let o = run_in(dir.path(), &["simulate", "--gcode", "p.gcode"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = bin()
        .current_dir(dir.path())
        .env("LFDISPENSE_CONFIG_DIR", dir.path())
        .args(["simulate", "--gcode", "p.gcode", "--out", "t.csv"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("t.csv.manifest.json").is_file());
}

#[test]
fn exit_codes_separate_bad_input_from_bad_values() {
    let dir = setup();
    fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let o = run_in(dir.path(), &["compile", "--plan", "broken.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run_in(dir.path(), &["compile", "--plan", "missing.json"]);
    assert_eq!(o.status.code(), Some(2));

    // 1000 uL over 200 mm at 3000 mm/min needs 15000 uL/min.
    fs::write(dir.path().join("fast.json"), single_line_plan(1000.0)).unwrap();
    let o = run_in(dir.path(), &["compile", "--plan", "fast.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("flow-limit"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());

    fs::write(dir.path().join("cold.gcode"), "G92 E0\nG1 F3000 Y10 E1\n").unwrap();
    let o = run_in(
        dir.path(),
        &["simulate", "--gcode", "cold.gcode", "--machine", "machine.json"],
    );
    assert_eq!(o.status.code(), Some(1));

    fs::write(dir.path().join("garbage.gcode"), "G1 Y1O\n").unwrap();
    let o = run_in(
        dir.path(),
        &["simulate", "--gcode", "garbage.gcode", "--machine", "machine.json"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn predict_uses_builtin_model() {
    let o = bin().args(["predict", "--dr", "66.7"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["width"].as_f64(), Some(0.815));
    let o = bin().args(["predict", "--dr", "150"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["flags"][0], "EXCESS_DR");
}

#[test]
fn predict_reads_model_file() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("width_model.json"),
        r#"{"data":[{"dr":10,"width":0.5},{"dr":20,"width":0.7}],"w_max":0.8}"#,
    )
    .unwrap();
    let o = bin()
        .env("LFDISPENSE_CONFIG_DIR", dir.path())
        .args(["predict", "--dr", "15"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["width"].as_f64().unwrap() - 0.6).abs() < 1e-12);
}

fn band_png(path: &Path, top: usize, bottom: impl Fn(usize) -> usize) {
    GrayImage::from_fn(2240, 64, 0.05, |x, y| if y >= top && y < bottom(x) { 60 } else { 215 })
        .unwrap()
        .save_png(path)
        .unwrap();
}

#[test]
fn analyze_then_stats() {
    let dir = TempDir::new().unwrap();
    band_png(&dir.path().join("a.png"), 20, |x| 38 + (x / 31) % 2);
    band_png(&dir.path().join("b.png"), 20, |x| 40 + (x / 37) % 3);

    let o = run_in(
        dir.path(),
        &["analyze", "--image", "a.png", "--mm-per-px", "0.05", "--lines", "1", "--out", "a.csv"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("bin_index,bin_start_mm,mean_width_mm,sample_count"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 28);
    for r in &rows {
        let w: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.85..=1.0).contains(&w), "{r}");
    }

    let o = run_in(
        dir.path(),
        &["analyze", "--image", "a.png", "b.png", "--mm-per-px", "0.05", "--out-dir", "series"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("series/a.line1.csv")).unwrap(),
        csv.as_bytes()
    );
    assert!(dir.path().join("series/manifest.json").is_file());

    let o = run_in(
        dir.path(),
        &["stats", "--series", "series/a.line1.csv", "series/b.line1.csv", "--out", "report.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["alpha"], 0.05);
    assert_eq!(report["groups"].as_array().unwrap().len(), 2);
    for t in ["bartlett", "anova", "ttest"] {
        let p = report["tests"][t]["p_value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p), "{t}: {p}");
    }
    // Two groups: F = t².
    let f = report["tests"]["anova"]["statistic"].as_f64().unwrap();
    let t = report["tests"]["ttest"]["statistic"].as_f64().unwrap();
    assert!((f - t * t).abs() <= 1e-9 * f);
    // Widths differ by about two pixels.
    assert_eq!(report["tests"]["ttest"]["significant"], true);
}

#[test]
fn ttest_needs_two_series() {
    let dir = TempDir::new().unwrap();
    for (name, base) in [("a.csv", 0.9), ("b.csv", 0.95), ("c.csv", 1.0)] {
        let mut s = String::from("bin_index,bin_start_mm,mean_width_mm,sample_count\n");
        for k in 0..6 {
            s.push_str(&format!("{k},{},{},50\n", 40.0 + 2.5 * k as f64, base + 0.01 * (k % 3) as f64));
        }
        s.push_str("6,55,,0\n");
        fs::write(dir.path().join(name), s).unwrap();
    }
    let o = run_in(dir.path(), &["stats", "--series", "a.csv", "b.csv", "c.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run_in(
        dir.path(),
        &["stats", "--series", "a.csv", "b.csv", "c.csv", "--tests", "bartlett,anova"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["groups"][0]["n"], 6);
}

#[test]
fn demo_outputs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let files = ["plan.json", "program.gcode", "trace.csv", "summary.json", "manifest.json"];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let o = run_in(dir.path(), &["demo-leptospirosis", "--out-dir", "demo"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(o.stderr.is_empty(), "{}", stderr(&o));
        let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(summary["channel_volumes"], serde_json::json!([10.0, 10.0]));
        assert_eq!(summary["diagnostics"], 0);
        snapshots.push(
            files
                .iter()
                .map(|f| fs::read(dir.path().join("demo").join(f)).unwrap())
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(snapshots[0], snapshots[1]);
    let gcode = String::from_utf8(snapshots[0][1].clone()).unwrap();
    assert!(gcode.contains("M165 A50 B50"));
    assert!(gcode.lines().any(|l| l == "G1 F3000 Y190 E20"), "{gcode}");

    // The written program runs clean on a fresh rig.
    fs::write(
        dir.path().join("machine.json"),
        format!(r#"{{"pump_specs":[{PUMP},{PUMP}]}}"#),
    )
    .unwrap();
    let o = run_in(
        dir.path(),
        &["simulate", "--gcode", "demo/program.gcode", "--machine", "machine.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stderr(&o).contains("warning"), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    // 20 uL over the membrane plus the 40 mm prime, printed as E5.3333.
    assert!((trace_total(&csv) - 25.3333).abs() < 1e-9);
}
