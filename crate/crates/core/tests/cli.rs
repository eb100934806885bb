use std::path::PathBuf;
use std::process::{Command, Output};

use potwell::io::{read_checkpoint, read_timeseries};

fn potwell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_potwell"))
        .args(args)
        .env("POTWELL_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("potwell-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn constants_prints_the_table() {
    let out = potwell(&["constants", "--mu", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let s_hl: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("s_hl"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((s_hl - 3.332162203618775).abs() < 1e-9);
}

#[test]
fn config_errors_exit_with_two() {
    assert_eq!(potwell(&["constants", "--mu", "3.5"]).status.code(), Some(2));
    assert_eq!(potwell(&["simulate", "--set", "nope=1"]).status.code(), Some(2));
    assert_eq!(potwell(&["simulate", "--set", "M"]).status.code(), Some(2));
    let missing = scratch("missing").join("run.cfg");
    let out = potwell(&["simulate", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_trajectory_and_checkpoint() {
    let dir = scratch("simulate");
    let cfg = dir.join("run.cfg");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(
        &cfg,
        format!(
            "# small decaying run\nM = 8\nt_end = 0.02\ninitial = scaled 0.3 eigenmode 1 1 1\noutput_dir = {}\n",
            dir.join("out").display()
        ),
    )
    .unwrap();
    let out = potwell(&["simulate", "--config", cfg.to_str().unwrap(), "--set", "record_every=1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = read_timeseries(&dir.join("out/trajectory.csv")).unwrap();
    assert!(records.len() > 2);
    assert!(records.windows(2).all(|w| w[1].j <= w[0].j));
    let ck = read_checkpoint(&dir.join("out/final.chk")).unwrap();
    assert_eq!(ck.field.domain().nodes(), 8);
    assert_eq!(ck.t, records.last().unwrap().t);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn ground_state_writes_the_minimizer() {
    let dir = scratch("ground");
    let out_dir = format!("output_dir={}", dir.display());
    let out = potwell(&[
        "ground-state",
        "--set",
        "M=8",
        "--set",
        "initial=bubble 0.5 0.5 0.5 0.2",
        "--set",
        &out_dir,
        "--max-iter",
        "50",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read_checkpoint(&dir.join("minimizer.chk")).is_ok());
    std::fs::remove_dir_all(&dir).unwrap();
}
