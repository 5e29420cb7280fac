mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use alphafunnel::cli::scenario::{Scenario, ScenarioFile};
use common::scenario_path;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alphafunnel")).args(args).output().unwrap()
}

fn path(name: &str) -> String {
    scenario_path(name).to_str().unwrap().to_string()
}

/// Parses a CSV file, checking every row against the header width.
fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    for r in &rows {
        assert_eq!(r.len(), header.len(), "{r:?}");
    }
    (header, rows)
}

#[test]
fn simulate_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&["simulate", &path("example1.toml"), "--out", out.to_str().unwrap(), "--t-end", "8"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let (header, rows) = read_csv(&out.join("trajectory.csv"));
    assert_eq!(header[..3], ["t", "x1", "x2"]);
    assert_eq!(header.last().unwrap(), "clamped");
    assert_eq!(rows.len(), 801);
    for r in &rows {
        for v in &r[..r.len() - 1] {
            let v: f64 = v.parse().unwrap();
            assert!(v.is_finite());
        }
    }

    let events: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("events.json")).unwrap()).unwrap();
    assert_eq!(events["completed"], true);
    assert_eq!(events["breaches"], 0);
    assert!(events["alpha0"].as_f64().unwrap() < 0.0);
    assert!(events["first_positive_alpha_bar"].as_f64().unwrap() <= 6.0);
    assert!(events["runtime_seconds"].as_f64().unwrap() >= 0.0);

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["min_lower_margin"].as_f64().unwrap() > 0.0);
    assert!(summary["min_upper_margin"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["final_t"].as_f64().unwrap(), 8.0);
}

#[test]
fn check_verdicts_and_exit_codes() {
    let o = run(&["check", &path("example1.toml"), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["coercivity"]["verdict"], "PASS");
    assert_eq!(r["concavity"]["verdict"], "PASS");
    assert_eq!(r["feasibility"]["verdict"], "PASS");
    assert_eq!(r["input_gain"]["verdict"], "PASS");

    let o = run(&["check", &path("example2.toml"), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["regularity"]["verdict"], "PASS");
    assert_eq!(r["concavity"]["verdict"], "FAIL");
    assert_eq!(r["unique_maximizer"], "PASS");

    let o = run(&["check", &path("example1_no_lbo.toml")]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l.starts_with("bounded set") && l.contains("FAIL")), "{text}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning: constrained set may be unbounded"));
}

#[test]
fn alphaopt_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("profile.csv");
    let o = run(&["alphaopt", &path("example1.toml"), "--range", "0:4:0.5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["t", "alpha_opt", "x1", "x2", "alpha_bar_opt", "status"]);
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r[5] == "ok"));

    // without --out the CSV goes to stdout
    let o = run(&["alphaopt", &path("example1.toml"), "--range", "0:1:0.5", "--cold"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 4);

    assert_eq!(run(&["alphaopt", &path("example1.toml"), "--range", "0:1"]).status.code(), Some(1));
}

#[test]
fn boundary_files_per_time() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "boundary",
        &path("coupled_snapshot.toml"),
        "--times",
        "0,1.5",
        "--grid",
        "60",
        "--alpha-bar",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["boundary_t0.csv", "boundary_t1.5.csv"] {
        let (header, rows) = read_csv(&dir.path().join(name));
        assert_eq!(header, ["t", "level", "chain", "closed", "x1", "x2"]);
        assert!(rows.iter().any(|r| r[1] == "alpha"));
        assert!(rows.iter().any(|r| r[1] == "alpha_bar"));
    }

    // a window far from the boundary gives an empty file and a warning
    let o = run(&[
        "boundary",
        &path("coupled_snapshot.toml"),
        "--times",
        "0",
        "--grid",
        "10",
        "--box",
        "-0.1,0.1,-0.1,0.1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let (_, rows) = read_csv(&dir.path().join("boundary_t0.csv"));
    assert!(rows.is_empty());

    let o = run(&["boundary", &path("coupled_snapshot.toml"), "--times", "0", "--box", "1,2,3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exit_codes_for_bad_input() {
    assert_eq!(run(&["check", "/nonexistent/x.toml"]).status.code(), Some(3));
    assert_eq!(run(&["simulate"]).status.code(), Some(1));
    assert_eq!(run(&["bogus"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario_path("example1.toml")).unwrap();
    let skew = text.replace("[\"x2^2 + 1\", \"cos(x1)\"]", "[\"0\", \"1\"]").replace("[\"sin(x2)\", \"x1^2 + 2\"]", "[\"-1\", \"0\"]");
    assert_ne!(skew, text);
    let p = dir.path().join("skew.toml");
    fs::write(&p, skew).unwrap();
    let o = run(&["check", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("system.g"), "{}", String::from_utf8_lossy(&o.stderr));

    let flat = text.replace("rho_max = 1.5", "rho_max = 0.1");
    let p = dir.path().join("flat.toml");
    fs::write(&p, flat).unwrap();
    let o = run(&["simulate", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("funnel."));
}

#[test]
fn integration_abort_exits_with_two() {
    // a gain large enough that the coarse step overshoots the funnel
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario_path("example1.toml")).unwrap().replace("k = 1.0", "k = 200.0");
    let p = dir.path().join("stiff.toml");
    fs::write(&p, text).unwrap();
    let out = dir.path().join("run");
    let o = run(&["simulate", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dt", "0.05"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stdout));
    // the partial trajectory is still flushed
    let (_, rows) = read_csv(&out.join("trajectory.csv"));
    assert!(!rows.is_empty());
    let events: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("events.json")).unwrap()).unwrap();
    assert_eq!(events["completed"], false);
    assert!(events["abort"].is_object());
}

#[test]
fn shipped_scenarios_round_trip() {
    for name in ["example1.toml", "example2.toml", "example1_no_lbo.toml", "coupled_snapshot.toml"] {
        let text = fs::read_to_string(scenario_path(name)).unwrap();
        let a = ScenarioFile::from_toml(&text).unwrap();
        let b = ScenarioFile::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a, b, "{name}");
        let sa = Scenario::from_toml(&text).unwrap();
        let sb = Scenario::from_toml(&b.to_toml()).unwrap();
        assert_eq!(sa.alpha0, sb.alpha0);
        assert_eq!(sa.funnel(), sb.funnel());
    }
}
