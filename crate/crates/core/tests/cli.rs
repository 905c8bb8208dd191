//! Exit codes and outputs of the `aos` binary.

use std::path::Path;
use std::process::{Command, Output};

fn aos(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aos")).args(args).arg("--out").arg(out).output().expect("aos runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn plan_writes_the_speed_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = aos(&["plan", "--check"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("plan.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("v_f,d_f,c_f,o_f,n,t_f,e_i_max,gap_warning,stale_warning"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn empty_sweep_gives_a_header_only_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = aos(&["plan", "--set", "sweep.speeds=[]"], dir.path());
    assert_eq!(code(&o), 0);
    let table = std::fs::read_to_string(dir.path().join("plan.csv")).unwrap();
    assert_eq!(table.lines().count(), 1);
}

#[test]
fn failed_checks_exit_3_only_with_check() {
    let dir = tempfile::tempdir().unwrap();
    // At 60 m/s consecutive integrals no longer overlap.
    let args = ["plan", "--set", "sweep.speeds=[4.0, 60.0]"];
    assert_eq!(code(&aos(&args, dir.path())), 0);
    let o = aos(&[&args[..], &["--check"]].concat(), dir.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn usage_and_domain_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&aos(&["fly"], dir.path())), 1);
    assert_eq!(code(&aos(&["plan", "--seed", "x"], dir.path())), 1);
    assert_eq!(code(&aos(&["plan", "--set", "flight.v_f=-3"], dir.path())), 2);
    assert_eq!(code(&aos(&["plan", "--set", "flight.nope=1"], dir.path())), 2);
    assert_eq!(code(&aos(&["plan", "--config", "/nonexistent.toml"], dir.path())), 2);
    assert_eq!(code(&aos(&["fuse-eval"], dir.path())), 2);
    let help = Command::new(env!("CARGO_BIN_EXE_aos")).arg("--help").output().unwrap();
    assert_eq!(code(&help), 0);
}

#[test]
fn config_documents_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "[sweep]\nspeeds = [6.0]\n").unwrap();
    let o = aos(&["plan", "--config", config.to_str().unwrap(), "--set", "flight.h=70"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("plan.csv")).unwrap();
    let row: Vec<f64> = table.lines().nth(1).unwrap().split(',').take(4).map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 6.0);
    // Doubling the altitude doubles the ground coverage.
    assert!((row[2] - 2.0 * 27.644).abs() < 0.01, "{row:?}");
}

#[test]
fn later_stages_reuse_the_simulated_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let small = [
        "--set", "flight.v_f=10", "--set", "scan.interior_length=2", "--set", "scan.persons=1",
        "--set", "camera.resolution=48", "--set", "integral.resolution=48",
    ];
    let o = aos(&[&["simulate"][..], &small].concat(), out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = aos(&["integrate", "--check"], out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let meta = std::fs::read_to_string(out.join("integrals/integral_0000.json")).unwrap();
    assert!(meta.contains("\"resolution\": 48"), "{meta}");
    let o = aos(&["fuse-eval", "--check"], out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.join("maps/confidence_max_median.pgm").is_file());
}
