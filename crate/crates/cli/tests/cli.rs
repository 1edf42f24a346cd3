use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ghostrec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghostrec"))
        .args(args)
        .current_dir(cwd)
        .env("GHOSTREC_THREADS", "2")
        .output()
        .expect("binary runs")
}

const QUICK: &str = "object = double_slit\nz1 = 10mm\ncamera_pitch = 25um\nK = 200\n";

#[test]
fn run_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("quick.cfg"), QUICK).unwrap();
    let out = ghostrec(&["run", "quick.cfg", "--out", "r"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gisc mse"), "{stdout}");
    assert!(dir.path().join("r/gisc.pgm").is_file());

    let out = ghostrec(&["evaluate", "r"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let gisc = stdout.lines().find(|l| l.starts_with("gisc")).unwrap_or_default();
    assert!(gisc.contains("resolved true"), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("gi ")), "{stdout}");
}

#[test]
fn simulate_then_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("quick.cfg"), QUICK).unwrap();
    let out = ghostrec(&["simulate", "quick.cfg", "--out", "sim"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = ghostrec(&["reconstruct", "sim/ensemble.gisc", "--K", "150", "--basis", "dct2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(dir.path().join("sim/reconstruct/metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert!(row.contains(&"dct2") && row.contains(&"150"), "{metrics}");

    // more realizations than the dump holds
    let out = ghostrec(&["reconstruct", "sim/ensemble.gisc", "--K", "201"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ensemble"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "object = double_slit\nz1 = 0\n").unwrap();
    let out = ghostrec(&["run", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("z1"));

    fs::write(dir.path().join("typo.cfg"), "object = double_slit\nzz = 3\n").unwrap();
    let out = ghostrec(&["run", "typo.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = ghostrec(&["run", "absent.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = ghostrec(&["reproduce", "fig9"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_errors_exit_with_3_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("odd.cfg"), "object = double_slit\ncamera_pitch = 10um\n").unwrap();
    let out = ghostrec(&["run", "odd.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("acquisition setup"));
}
