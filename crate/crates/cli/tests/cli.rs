//! The binary: exit codes and files.

use std::fs;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_bergman-lab");

fn write_config(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("c.toml");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn density_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "k_ladder = [16, 18, 20, 22]\ngrid_n = 88\n[[factor]]\ntau_im = 1.0\ndegree = -1\n",
    );
    let out = dir.path().join("out");
    let status = Command::new(BIN)
        .args(["density", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stdout)
    );
    assert!(out.join("density.csv").exists());
    assert!(out.join("summary.json").exists());
    assert!(!out.join("dims.csv").exists());
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("A3 PASS"));
}

#[test]
fn invalid_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "k_ladder = [8, 8, 12]\ngrid_n = 64\nfoo = 1\n[[factor]]\ntau_im = 1.0\ndegree = -1\n",
    );
    let out = Command::new(BIN)
        .args(["all", "--config"])
        .arg(&cfg)
        .args(["--out", "unused"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1: k_ladder: non-monotone"), "{err}");
    assert!(err.contains("line 3: foo: unknown key"), "{err}");
}

#[test]
fn failing_criterion_gives_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    // No k >= 16 in the ladder, so the leading-coefficient part of A3 fails.
    let cfg = write_config(
        dir.path(),
        "k_ladder = [4, 5, 6, 7]\ngrid_n = 28\n[[factor]]\ntau_im = 1.0\ndegree = -1\n",
    );
    let out = Command::new(BIN)
        .args(["density", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
