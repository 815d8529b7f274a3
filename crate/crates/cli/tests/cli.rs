use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("relu-maxcut-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_relu-maxcut")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
}

fn run_json(args: &[&str]) -> (i32, Value) {
    let (code, text) = run(args);
    (code, serde_json::from_str(&text).unwrap_or_else(|e| panic!("{e}: {text}")))
}

fn line() -> PathBuf {
    scratch("line.csv", "x1,y\n1,1\n-1,-1\n")
}

#[test]
fn solve_auto_on_the_line() {
    let input = line();
    let (code, r) = run_json(&["solve", "--input", input.to_str().unwrap(), "--method", "auto", "--loss", "maxmargin"]);
    assert_eq!(code, 0);
    assert_eq!(r["schema"], "v1");
    assert_eq!(r["method"], "ortho");
    assert!((r["p"].as_f64().unwrap() - 2.0).abs() < 1e-8);
    assert!((r["factor"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(r["certificate"]["accepted"], true);
    assert_eq!(r["dataset"]["n"], 2);
}

#[test]
fn verify_flags_a_tampered_network() {
    let input = line();
    let report = scratch("report.json", "");
    let (code, _) = run(&["solve", "--input", input.to_str().unwrap(), "--output", report.to_str().unwrap()]);
    assert_eq!(code, 0);
    let (code, ok) = run_json(&["verify", "--network", report.to_str().unwrap(), "--input", input.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(ok["valid"], true);
    assert_eq!(ok["evaluation"]["feasible"], true);

    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let mut net = r["network"].clone();
    net["w2"][0] = Value::from(0.5);
    let tampered = scratch("net.json", &net.to_string());
    let (code, bad) = run_json(&["verify", "--network", tampered.to_str().unwrap(), "--input", input.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(bad["valid"], false);
    assert_eq!(bad["evaluation"]["feasible"], false);
    assert!(bad["failure"].is_string());
}

#[test]
fn experiment_csv_meets_the_ratio() {
    let (code, csv) =
        run(&["experiment", "--kind", "negcorr", "--n", "10", "--d", "3", "--seeds", "20", "--eps0", "0.1", "--format", "csv"]);
    assert_eq!(code, 0);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("seed,p,P_exact,ratio,feasible"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 20);
    let bound = (std::f64::consts::PI / 2.0).sqrt() * 1.1;
    let good = rows.iter().filter(|r| r[3].parse::<f64>().is_ok_and(|v| v <= bound)).count();
    assert!(good >= 18, "{good} of 20 within the bound");
}

#[test]
fn reports_are_deterministic() {
    let input = scratch("neg.csv", "x1,x2,y\n1,0.2,1\n0.3,1,1\n-1,0.1,-1\n-0.2,-1,-1\n");
    let args = ["solve", "--input", input.to_str().unwrap(), "--method", "negcorr", "--seed", "3"];
    let (_, mut a) = run_json(&args);
    let (_, mut b) = run_json(&args);
    a.as_object_mut().unwrap().remove("wall_time_s");
    b.as_object_mut().unwrap().remove("wall_time_s");
    assert_eq!(a, b);
}

#[test]
fn auto_follows_the_classifier() {
    for (name, text, method) in [
        ("o.csv", "x1,x2,y\n1,0,1\n0,-1,-1\n", "ortho"),
        ("n.csv", "x1,x2,y\n1,0,1\n-0.2,1,1\n-1,-1,-1\n", "negcorr"),
        ("g.csv", "x1,x2,y\n1,0,1\n1,1,-1\n0,-1,-1\n", "geo"),
    ] {
        let input = scratch(name, text);
        let (_, class) = run_json(&["classify", "--input", input.to_str().unwrap()]);
        let (code, r) = run_json(&["solve", "--input", input.to_str().unwrap(), "--c", "0.2"]);
        assert_eq!(code, 0, "{r}");
        assert_eq!(r["method"], method, "classified as {}", class["regime"]);
    }
}

#[test]
fn exit_codes_and_error_bodies() {
    let (code, r) = run_json(&["solve", "--method", "nope"]);
    assert_eq!(code, 2);
    assert_eq!(r["error"]["kind"], "usage");

    let general = scratch("general.csv", "x1,x2,y\n1,0,1\n1,1,-1\n0,-1,-1\n");
    let (code, r) = run_json(&["solve", "--input", general.to_str().unwrap(), "--method", "ortho"]);
    assert_eq!(code, 3);
    assert_eq!(r["error"]["kind"], "regime_mismatch");

    let clash = scratch("clash.csv", "x1,x2,y\n1,1,1\n2,2,-1\n");
    let (code, r) = run_json(&["oracle", "--input", clash.to_str().unwrap()]);
    assert_eq!(code, 4);
    assert_eq!(r["error"]["kind"], "solver_failure");
}

#[test]
fn oracle_and_maxcut_values() {
    let input = line();
    let (code, r) = run_json(&["oracle", "--input", input.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!((r["p_relu"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    assert!((r["d"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    assert!((r["c_star"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let q = scratch("q.csv", "2,-1,0\n-1,2,-1\n0,-1,2\n");
    let (code, r) = run_json(&["maxcut", "--input", q.to_str().unwrap(), "--k", "200"]);
    assert_eq!(code, 0);
    assert_eq!(r["brute"]["value"].as_f64(), Some(10.0));
    assert!(r["sdp"]["upper_bound"].as_f64().unwrap() >= 10.0 - 1e-6);
}
