use std::process::Command;

fn rpmtarget() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rpmtarget"))
}

#[test]
fn missing_config_exits_with_two() {
    let status = rpmtarget()
        .args(["simulate", "--config", "/nonexistent/run.toml"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "output_dir = \"x\"\n[simulation]\npatients = \"many\"\n",
    )
    .unwrap();
    let status = rpmtarget()
        .arg("split")
        .arg("-c")
        .arg(&path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn minimal_report_runs_and_writes_the_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/minimal.toml");
    let out = rpmtarget()
        .args(["all", "-c", config, "-o"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ATT@25%"), "{stdout}");
    assert!(dir.path().join("run_report.json").is_file());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let status = rpmtarget().arg("frobnicate").status().unwrap();
    assert_eq!(status.code(), Some(2));
}
