use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};
use tempfile::TempDir;

fn s1() -> Value {
    json!({"length_km": 0.1, "free_speed_kmh": 100.0, "jam_density_veh_per_km": 180.0})
}

fn s2() -> Value {
    json!({"length_km": 0.1, "free_speed_kmh": 50.0, "jam_density_veh_per_km": 180.0})
}

fn mini_sections() -> Value {
    json!([
        {"length_km": 0.1, "free_speed_kmh": 100.0, "jam_density_veh_per_km": 40.0},
        {"length_km": 0.1, "free_speed_kmh": 50.0, "jam_density_veh_per_km": 40.0}
    ])
}

/// Writes `config` and runs `mgcc <args> --config <file>`, returning the exit code.
fn run(dir: &Path, args: &[&str], config: &Value) -> i32 {
    run_text(dir, args, &serde_json::to_string_pretty(config).unwrap())
}

fn run_text(dir: &Path, args: &[&str], text: &str) -> i32 {
    let cfg = dir.join("config.json");
    fs::write(&cfg, text).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_mgcc"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap()
        .status;
    status.code().expect("process exited normally")
}

fn out(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn probs(doc: &Value) -> Vec<f64> {
    doc["probs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
}

#[test]
fn section_analyze_writes_distribution_and_report() {
    let dir = TempDir::new().unwrap();
    let path = out(dir.path(), "s1.json");
    let config = json!({
        "sections": [s1()],
        "lambda": 1000.0,
        "output": {"path": path, "format": "json"}
    });
    assert_eq!(run(dir.path(), &["section", "analyze"], &config), 0);
    let dist = read_json(&path);
    let p = probs(&dist);
    assert_eq!(p.len(), 19);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mode = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
    assert!(mode <= 2, "light load should keep the section nearly empty, mode {mode}");

    let report = read_json(&path.with_extension("report.json"));
    let w = report["expected_time"].as_f64().unwrap();
    let theta = report["throughput"].as_f64().unwrap();
    let n = report["expected_count"].as_f64().unwrap();
    assert!((w * theta - n).abs() <= 1e-9 * n);
}

#[test]
fn section_analyze_at_zero_arrivals_is_empty() {
    let dir = TempDir::new().unwrap();
    let path = out(dir.path(), "zero.json");
    let config = json!({
        "sections": [s2()],
        "lambda": 0.0,
        "output": {"path": path, "format": "json"}
    });
    assert_eq!(run(dir.path(), &["section", "analyze"], &config), 0);
    let p = probs(&read_json(&path));
    assert_eq!(p[0], 1.0);
    assert!(p[1..].iter().all(|&x| x == 0.0));
    let report = read_json(&path.with_extension("report.json"));
    assert!(report["expected_time"].is_null());
}

#[test]
fn speed_and_flow_forms_write_matching_files() {
    let dir = TempDir::new().unwrap();
    let mut dists = Vec::new();
    for form in ["flow", "speed"] {
        let path = out(dir.path(), &format!("{form}.json"));
        let config = json!({
            "sections": [s1()],
            "lambda": 2500.0,
            "form": form,
            "output": {"path": path, "format": "json"}
        });
        assert_eq!(run(dir.path(), &["section", "analyze"], &config), 0);
        dists.push(probs(&read_json(&path)));
    }
    for (a, b) in dists[0].iter().zip(&dists[1]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn section_csv_carries_config_hash() {
    let dir = TempDir::new().unwrap();
    let path = out(dir.path(), "s.csv");
    let config = json!({
        "sections": [s1()],
        "lambda": 500.0,
        "output": {"path": path, "format": "csv"}
    });
    assert_eq!(run(dir.path(), &["section", "analyze"], &config), 0);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("# config-sha256: "));
    assert_eq!(header.len(), "# config-sha256: ".len() + 64);
    assert_eq!(lines.next().unwrap(), "n,prob");
    assert_eq!(lines.count(), 19);
}

#[test]
fn tandem_sweep_csv_has_one_row_per_rate() {
    let dir = TempDir::new().unwrap();
    let path = out(dir.path(), "sweep.csv");
    let config = json!({
        "sections": [s1(), s2()],
        "lambda_sweep": {"from": 0.0, "to": 3000.0, "step": 500.0},
        "output": {"path": path, "format": "csv"}
    });
    assert_eq!(run(dir.path(), &["tandem", "sweep"], &config), 0);
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# config-sha256: "));
    assert_eq!(
        lines[1],
        "lambda,theta,delta,mode,p1_block,p2_block,n1_mean,n2_mean,w1_hours,w2_hours,residual"
    );
    assert_eq!(lines.len(), 2 + 7);

    let zero: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(zero[0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(zero[1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(zero[8], "");
    assert_eq!(zero[9], "");

    let mut previous = -1.0;
    for line in &lines[2..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 11);
        let lambda: f64 = fields[0].parse().unwrap();
        let theta: f64 = fields[1].parse().unwrap();
        let delta: f64 = fields[2].parse().unwrap();
        assert!(lambda > previous);
        assert!(theta <= lambda + 1e-9 && delta <= theta + 1e-9);
        assert_eq!(fields[3], "BisectionRoot");
        previous = lambda;
    }
}

#[test]
fn tandem_solve_json_includes_solution_fields() {
    let dir = TempDir::new().unwrap();
    let path = out(dir.path(), "solve.json");
    let config = json!({
        "sections": [s1(), s2()],
        "lambda": 1000.0,
        "solver": "iteration",
        "output": {"path": path, "format": "json"}
    });
    assert_eq!(run(dir.path(), &["tandem", "solve"], &config), 0);
    let doc = read_json(&path);
    assert_eq!(doc["mode"], "ConvergedIteration");
    let theta = doc["theta"].as_f64().unwrap();
    assert!(theta > 990.0 && theta <= 1000.0);
    assert!(!doc["trace"].as_array().unwrap().is_empty());
    assert_eq!(probs(&doc["p1"]).len(), 19);
    assert_eq!(doc["joint"].as_array().unwrap().len(), 19);
}

#[test]
fn heavy_load_iteration_reports_oscillation() {
    let dir = TempDir::new().unwrap();
    let path = out(dir.path(), "osc.json");
    let config = json!({
        "sections": [s1(), s2()],
        "lambda": 3000.0,
        "solver": "iteration",
        "output": {"path": path, "format": "json"}
    });
    assert_eq!(run(dir.path(), &["tandem", "solve"], &config), 0);
    let doc = read_json(&path);
    assert_eq!(doc["mode"], "OscillatoryAveraged");
    assert!(doc["adherence"].is_array());
}

#[test]
fn non_convergence_exits_three_with_trace() {
    let dir = TempDir::new().unwrap();
    let path = out(dir.path(), "fail.json");
    let config = json!({
        "sections": [s1(), s2()],
        "lambda": 1000.0,
        "solver": "iteration",
        "tol": 1e-300,
        "max_iter": 3,
        "output": {"path": path, "format": "json"}
    });
    assert_eq!(run(dir.path(), &["tandem", "solve"], &config), 3);
    assert!(!path.exists());
    let trace = read_json(&path.with_extension("trace.json"));
    assert!(!trace["trace"].as_array().unwrap().is_empty());
}

#[test]
fn oracle_compare_light_load_on_small_instance() {
    let dir = TempDir::new().unwrap();
    let path = out(dir.path(), "cmp.json");
    let config = json!({
        "sections": mini_sections(),
        "lambda": 5.0,
        "output": {"path": path, "format": "json"}
    });
    assert_eq!(run(dir.path(), &["oracle", "compare"], &config), 0);
    let doc = read_json(&path);
    for key in ["lambda", "tv_p1", "tv_p2", "theta_decomposition", "theta_joint"] {
        assert!(doc[key].is_number(), "missing {key}");
    }
    assert!(doc["tv_p2"].as_f64().unwrap() < 0.05);
}

#[test]
fn oracle_compare_at_zero_arrivals() {
    let dir = TempDir::new().unwrap();
    let path = out(dir.path(), "cmp0.json");
    let config = json!({
        "sections": mini_sections(),
        "lambda": 0.0,
        "output": {"path": path, "format": "json"}
    });
    assert_eq!(run(dir.path(), &["oracle", "compare"], &config), 0);
    let doc = read_json(&path);
    assert_eq!(doc["tv_p1"].as_f64().unwrap(), 0.0);
    assert_eq!(doc["tv_p2"].as_f64().unwrap(), 0.0);
}

#[test]
fn oracle_rejects_oversized_state_space() {
    let dir = TempDir::new().unwrap();
    let big = json!({"length_km": 0.1, "free_speed_kmh": 100.0, "jam_density_veh_per_km": 2000.0});
    let config = json!({
        "sections": [big, big],
        "lambda": 100.0,
        "output": {"path": out(dir.path(), "big.json"), "format": "json"}
    });
    assert_eq!(run(dir.path(), &["oracle", "compare"], &config), 1);
}

#[test]
fn domain_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let config = json!({
        "sections": [{"length_km": -0.1, "free_speed_kmh": 100.0, "jam_density_veh_per_km": 180.0}],
        "lambda": 100.0,
        "output": {"path": out(dir.path(), "x.json"), "format": "json"}
    });
    assert_eq!(run(dir.path(), &["section", "analyze"], &config), 1);
}

#[test]
fn malformed_configs_exit_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run_text(dir.path(), &["section", "analyze"], "{not json"), 2);
    let both = json!({
        "sections": [s1()],
        "lambda": 100.0,
        "lambda_sweep": {"from": 0.0, "to": 1.0, "step": 1.0},
        "output": {"path": out(dir.path(), "x.json"), "format": "json"}
    });
    assert_eq!(run(dir.path(), &["section", "analyze"], &both), 2);
    let unknown = json!({
        "sections": [s1()],
        "lambda": 100.0,
        "colour": "red",
        "output": {"path": out(dir.path(), "x.json"), "format": "json"}
    });
    assert_eq!(run(dir.path(), &["section", "analyze"], &unknown), 2);
    let one_section = json!({
        "sections": [s1()],
        "lambda": 100.0,
        "output": {"path": out(dir.path(), "x.json"), "format": "json"}
    });
    assert_eq!(run(dir.path(), &["tandem", "solve"], &one_section), 2);
    assert_eq!(run(dir.path(), &["tandem", "frobnicate"], &one_section), 2);
}

#[test]
fn sweep_output_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let mut bodies = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let config = json!({
            "sections": [s1(), s2()],
            "lambda_sweep": {"from": 100.0, "to": 3000.0, "step": 100.0},
            "output": {"path": out(dir.path(), "sweep.csv"), "format": "csv"}
        });
        assert_eq!(run(dir.path(), &["tandem", "sweep"], &config), 0);
        let body = fs::read(out(dir.path(), "sweep.csv")).unwrap();
        fs::write(out(dir.path(), name), &body).unwrap();
        bodies.push(body);
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn exponential_section_needs_speed_form() {
    let dir = TempDir::new().unwrap();
    let section = json!({
        "length_km": 0.1, "free_speed_kmh": 100.0, "jam_density_veh_per_km": 180.0,
        "model": {"exponential": {"beta": 8.0, "gamma": 1.5}}
    });
    let path = out(dir.path(), "exp.json");
    let mut config = json!({
        "sections": [section],
        "lambda": 1500.0,
        "form": "speed",
        "output": {"path": path, "format": "json"}
    });
    assert_eq!(run(dir.path(), &["section", "analyze"], &config), 0);
    let p = probs(&read_json(&path));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    config["form"] = json!("flow");
    assert_eq!(run(dir.path(), &["section", "analyze"], &config), 1);
}
