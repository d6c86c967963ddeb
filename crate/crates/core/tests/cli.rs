use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nullctl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nullctl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_star2_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = nullctl(&["validate", "star2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("validation.json"));
    assert_eq!(report["meta"]["subcommand"], "validate");
    assert_eq!(report["meta"]["scenario_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["passed"], true);
}

#[test]
fn kalman_reports_rank_two_on_the_deficient_star() {
    let dir = tempfile::tempdir().unwrap();
    let out = nullctl(&["kalman", "kalman-neg"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("kalman.json"));
    assert_eq!(report["rank"], 2);
    let dirs = report["unobservable_directions"].as_array().unwrap();
    assert_eq!(dirs.len(), 1);
    let v: Vec<f64> = dirs[0].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert!(v[0].abs() < 1e-12 && (v[1] - s).abs() < 1e-12 && (v[2] + s).abs() < 1e-12);
}

#[test]
fn sweep_csv_has_columns_and_slope_footer() {
    let dir = tempfile::tempdir().unwrap();
    let out = nullctl(&["sweep-eps", "star2", "--override", "run.eps_list=[1e-2,1e-3,1e-4]"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eps,terminal_norm,weighted_l2,linf,cg_iters");
    assert_eq!(lines.len(), 5);
    for row in &lines[1..4] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 5);
        // 17 significant digits in scientific notation
        let mantissa = cells[1].split('e').next().unwrap();
        assert_eq!(mantissa.replace(['.', '-'], "").len(), 17, "{row}");
    }
    let footer: Vec<&str> = lines[4].split(',').collect();
    assert_eq!(footer[0], "slope_estimate");
    let slope: f64 = footer[1].parse().unwrap();
    assert!(slope > 0.0);
    let report = read_json(&dir.path().join("sweep.json"));
    assert_eq!(report["meta"]["scenario"], "star2");
}

#[test]
fn csv_bodies_are_byte_identical_on_rerun() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["carleman-check", "star2", "--override", "run.n_samples=8", "--seed", "5"];
    assert_eq!(nullctl(&args, a.path()).status.code(), Some(0));
    assert_eq!(nullctl(&args, b.path()).status.code(), Some(0));
    let ca = std::fs::read(a.path().join("carleman.csv")).unwrap();
    let cb = std::fs::read(b.path().join("carleman.csv")).unwrap();
    assert!(!ca.is_empty());
    assert_eq!(ca, cb);
    let header = String::from_utf8(ca).unwrap();
    assert!(header.starts_with("sample_id,lhs,rhs_obs,rhs_src,ratio"));
}

#[test]
fn missing_omega_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw: Value = serde_json::from_str(nullctl::scenario::preset_source("star2").unwrap()).unwrap();
    raw.as_object_mut().unwrap().remove("omega");
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, raw.to_string()).unwrap();
    let out = nullctl(&["validate", "--scenario", path.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    let err = read_json(&dir.path().join("out").join("error.json"));
    let msg = err["error"].as_str().unwrap();
    assert!(msg.contains("schema") && msg.contains("omega"), "{msg}");
}

#[test]
fn malformed_json_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"name\": ").unwrap();
    let out = nullctl(&["validate", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let msg = read_json(&dir.path().join("error.json"))["error"].as_str().unwrap().to_string();
    assert!(msg.contains("malformed JSON"), "{msg}");
}

#[test]
fn nested_interval_violation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // tilde interval of component 1 sticks out of its under interval
    let out = nullctl(&["validate", "star2", "--override", "omega_tilde.1=[1.0,2.0]"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("omega_tilde[1]"));
}

#[test]
fn class_violation_lists_failed_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = nullctl(&["validate", "star2", "--override", "coefficients.M=0.5"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("FAIL a_sup_bound[1]") && stderr.contains("FAIL a_sup_bound[2]"), "{stderr}");
}

#[test]
fn override_changes_the_hash_and_grid() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(nullctl(&["weights", "star2"], a.path()).status.code(), Some(0));
    let out = nullctl(&["weights", "star2", "--override", "grid.Nx=119"], b.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ha = read_json(&a.path().join("weights.json"))["meta"]["scenario_hash"].clone();
    let hb = read_json(&b.path().join("weights.json"))["meta"]["scenario_hash"].clone();
    assert_ne!(ha, hb);
}

#[test]
fn solver_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = nullctl(&["observability", "kalman-neg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = read_json(&dir.path().join("error.json"))["error"].as_str().unwrap().to_string();
    assert!(msg.contains("stalled") || msg.contains("singular"), "{msg}");
}

#[test]
fn unknown_preset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = nullctl(&["validate", "star7"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
