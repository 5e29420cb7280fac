use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use alphafunnel_ffi::*;

const PLANAR: &str = r#"
[system]
dim = 2
f = ["-x1", "-x2"]
g = [["1", "0"], ["0", "1"]]
w = ["0.1*sin(t)", "0"]
x0 = [1.5, -0.5]

[[constraint]]
kind = "funnel"
h = "x1"
lower = "-1"
upper = "1"

[[constraint]]
kind = "funnel"
h = "x2"
lower = "-1"
upper = "1"

[sim]
t_end = 3.0
dt = 0.01
record_every = 5
"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(af_last_error()) }.to_string_lossy().into_owned()
}

fn load(text: &str) -> *mut AfScenario {
    let c = CString::new(text).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { af_scenario_from_toml(c.as_ptr(), &mut s) }, AfStatus::Ok, "{}", last_error());
    assert!(!s.is_null());
    s
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

#[test]
fn metric_queries_match_the_library() {
    let s = load(PLANAR);
    unsafe {
        assert_eq!(af_scenario_dim(s), 2);
        let x = [0.2, -0.3];
        let (mut a, mut ab) = (0.0, 0.0);
        assert_eq!(af_alpha(s, 0.0, x.as_ptr(), 2, &mut a), AfStatus::Ok);
        assert_eq!(af_alpha_bar(s, 0.0, x.as_ptr(), 2, &mut ab), AfStatus::Ok);
        // predicates are 1.2, 0.8, 0.7, 1.3
        assert_eq!(ab, 1.0 - 0.3);
        assert!(a <= ab && ab <= a + 4f64.ln() / 10.0);

        let mut g = [0.0; 2];
        assert_eq!(af_grad_alpha(s, 0.0, x.as_ptr(), 2, g.as_mut_ptr()), AfStatus::Ok);
        let h = 1e-6;
        for k in 0..2 {
            let (mut p, mut m) = (x, x);
            p[k] += h;
            m[k] -= h;
            let (mut ap, mut am) = (0.0, 0.0);
            af_alpha(s, 0.0, p.as_ptr(), 2, &mut ap);
            af_alpha(s, 0.0, m.as_ptr(), 2, &mut am);
            assert!((g[k] - (ap - am) / (2.0 * h)).abs() < 1e-6);
        }

        let mut u = [0.0; 2];
        let mut info = AfControlInfo::default();
        assert_eq!(af_control(s, 0.0, x.as_ptr(), 2, u.as_mut_ptr(), &mut info), AfStatus::Ok);
        assert_eq!(info.alpha, a);
        assert_eq!(info.rho_lower, af_rho_lower(s, 0.0));
        assert_eq!(info.rho_upper, af_rho_upper(s, 0.0));
        for k in 0..2 {
            assert_eq!(u[k], -info.xi * info.epsilon * g[k]);
        }
        assert_eq!(af_control(s, 0.0, x.as_ptr(), 2, u.as_mut_ptr(), ptr::null_mut()), AfStatus::Ok);

        let mut best = f64::NAN;
        let mut xm = [f64::NAN; 2];
        assert_eq!(af_alpha_opt(s, 0.0, &mut best, xm.as_mut_ptr(), 2), AfStatus::Ok);
        assert!(xm.iter().all(|v| v.abs() < 1e-6), "{xm:?}");
        assert!(best >= a);
        af_scenario_free(s);
    }
}

#[test]
fn argument_errors_are_reported() {
    let s = load(PLANAR);
    unsafe {
        let x = [0.0; 3];
        let mut v = 0.0;
        assert_eq!(af_alpha(s, 0.0, x.as_ptr(), 3, &mut v), AfStatus::InvalidArgument);
        assert!(last_error().contains("expected 2"), "{}", last_error());
        assert_eq!(af_alpha(s, 0.0, ptr::null(), 2, &mut v), AfStatus::NullPointer);
        assert_eq!(af_alpha(ptr::null(), 0.0, x.as_ptr(), 2, &mut v), AfStatus::NullPointer);
        assert_eq!(af_alpha(s, 0.0, x.as_ptr(), 2, ptr::null_mut()), AfStatus::NullPointer);
        assert_eq!(af_scenario_dim(ptr::null()), 0);
        assert!(af_rho_lower(ptr::null(), 0.0).is_nan());
        af_scenario_free(s);
        af_scenario_free(ptr::null_mut());
        af_trajectory_free(ptr::null_mut());
    }
}

#[test]
fn load_failures_map_to_status_codes() {
    let mut s = std::ptr::dangling_mut::<AfScenario>();
    let bad = CString::new(PLANAR.replace("h = \"x2\"", "h = \"x2 +\"")).unwrap();
    assert_eq!(unsafe { af_scenario_from_toml(bad.as_ptr(), &mut s) }, AfStatus::Validation);
    assert!(s.is_null());
    assert!(last_error().contains("constraint[2].h"), "{}", last_error());

    let missing = CString::new("/nonexistent/scenario.toml").unwrap();
    assert_eq!(unsafe { af_scenario_load(missing.as_ptr(), &mut s) }, AfStatus::Io);
    assert!(s.is_null());

    assert_eq!(unsafe { af_scenario_load(ptr::null(), &mut s) }, AfStatus::NullPointer);
    assert_eq!(unsafe { af_scenario_load(missing.as_ptr(), ptr::null_mut()) }, AfStatus::NullPointer);

    let syntax = CString::new("[system").unwrap();
    assert_eq!(unsafe { af_scenario_from_toml(syntax.as_ptr(), &mut s) }, AfStatus::Validation);
}

#[test]
fn simulation_round_trip() {
    let s = load(PLANAR);
    unsafe {
        let mut tr = ptr::null_mut();
        assert_eq!(af_simulate(s, &mut tr), AfStatus::Ok, "{}", last_error());
        assert!(af_trajectory_completed(tr));
        assert_eq!(af_trajectory_breaches(tr), 0);
        // 300 steps recorded every 5th, plus the final one
        assert_eq!(af_trajectory_len(tr), 61);
        let first = af_trajectory_first_positive(tr);
        assert!(first > 0.0 && first < 3.0, "{first}");

        let (mut t, mut a, mut ab) = (0.0, 0.0, 0.0);
        let mut x = [0.0; 2];
        assert_eq!(af_trajectory_sample(tr, 0, &mut t, x.as_mut_ptr(), 2, &mut a, &mut ab), AfStatus::Ok);
        assert_eq!((t, x), (0.0, [1.5, -0.5]));
        let mut a0 = 0.0;
        af_scenario_alpha0(s, &mut a0);
        assert_eq!(a, a0);
        assert_eq!(
            af_trajectory_sample(tr, 61, &mut t, ptr::null_mut(), 0, ptr::null_mut(), ptr::null_mut()),
            AfStatus::InvalidArgument
        );
        assert_eq!(
            af_trajectory_sample(tr, 60, &mut t, ptr::null_mut(), 0, ptr::null_mut(), ptr::null_mut()),
            AfStatus::Ok
        );
        assert!((t - 3.0).abs() < 1e-9);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let c = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(af_trajectory_write_csv(tr, c.as_ptr()), AfStatus::Ok);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 62);
        let bad = CString::new(dir.path().join("no/such/dir.csv").to_str().unwrap()).unwrap();
        assert_eq!(af_trajectory_write_csv(tr, bad.as_ptr()), AfStatus::Io);

        af_trajectory_free(tr);
        af_scenario_free(s);
    }
}

#[test]
fn shipped_scenario_loads_from_disk() {
    let p = CString::new(scenario_path("example1.toml").to_str().unwrap()).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { af_scenario_load(p.as_ptr(), &mut s) }, AfStatus::Ok, "{}", last_error());
    let mut a0 = 0.0;
    unsafe {
        af_scenario_alpha0(s, &mut a0);
        assert!(a0 < 0.0);
        assert!(af_rho_lower(s, 0.0) < a0);
        assert_eq!(af_rho_lower(s, 6.0), 0.1);
        af_scenario_free(s);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(af_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/alphafunnel.h")
}

#[test]
fn header_declares_the_surface() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "typedef struct AfScenario AfScenario;",
        "typedef struct AfTrajectory AfTrajectory;",
        "AF_STATUS_PANIC = 6",
        "AfStatus af_simulate(const AfScenario *scenario, AfTrajectory **out);",
        "af_trajectory_write_csv",
        "af_last_error(void)",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "alphafunnel.h"

int main(void) {
    AfScenario *s = NULL;
    AfStatus st = af_scenario_from_toml("[system]\ndim = 1\nf = [\"-x1\"]\ng = [[\"1\"]]\nw = [\"0\"]\nx0 = [0.5]\n"
                                        "[[constraint]]\nkind = \"funnel\"\nh = \"x1\"\nlower = \"-1\"\nupper = \"1\"\n", &s);
    if (st != AF_STATUS_OK) { fprintf(stderr, "%s\n", af_last_error()); return 1; }
    double x = 0.25, a = 0.0;
    if (af_alpha(s, 0.0, &x, 1, &a) != AF_STATUS_OK) return 2;
    printf("%.6f\n", a);
    af_scenario_free(s);
    return 0;
}
"#;

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let include = header().parent().unwrap().to_path_buf();
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());

    // link and run against the static library when cargo has built it
    let target = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/debug/libalphafunnel_ffi.a");
    if !target.exists() {
        return;
    }
    let exe = dir.path().join("smoke");
    let linked = Command::new(&cc)
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&target)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(linked.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // two predicates 1.25 and 0.75 under sharpness 10
    let expected = 0.75 - (1.0 + (-5f64).exp()).ln() / 10.0;
    let got: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((got - expected).abs() < 1e-6);
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}

