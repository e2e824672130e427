//! The `gnpp` binary: exit codes and report output.

use std::process::{Command, Output};

fn gnpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnpp"))
        .args(args)
        .env_remove("GNPP_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn rf_report_for_alexnet_conv5() {
    let o = gnpp(&["analyze", "rf", "--arch", "alexnet", "--layer", "6"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains("rf  163"), "{out}");
    assert!(out.contains("jump  16"), "{out}");
    assert!(out.contains("overlap 90.2%"), "{out}");
}

#[test]
fn connection_report_with_type1() {
    let o = gnpp(&[
        "analyze",
        "connections",
        "--arch",
        "alexnet",
        "--layer",
        "6",
        "--gnpp",
        "type1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains("348,880,896"), "{out}");
    assert!(out.contains("footprint  21"), "{out}");
}

#[test]
fn connection_csv_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    let o = gnpp(&["analyze", "connections", "--csv", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("layer,token,gnpp,footprint,connections\n"));
    assert!(text.contains(",149520384\n"), "{text}");
}

#[test]
fn layer_gradcheck_passes() {
    let o = gnpp(&["gradcheck", "--layers", "--max-per-tensor", "200"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
}

#[test]
fn corrupted_backward_is_a_verification_failure() {
    let o = gnpp(&["gradcheck", "--max-per-tensor", "50", "--corrupt-backward", "1.5"]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
}

#[test]
fn bad_architecture_is_a_configuration_error() {
    let o = gnpp(&["analyze", "rf", "--arch", "{C5(S1P0)@20-MP2(S2)"]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration error"));
}

#[test]
fn unknown_flag_is_a_configuration_error() {
    assert_eq!(gnpp(&["train", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn missing_data_directory_is_reported() {
    let o = gnpp(&["train", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("GNPP_DATA_DIR"));
}

#[test]
fn missing_data_files_are_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gnpp(&["train", "--epochs", "1", "--data-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
}

#[test]
fn help_exits_zero() {
    let o = gnpp(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("train"));
}
