use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[system]
num_antennas = 8
num_users = 2
gain_target = "4.4 mW"

[regions]
range = "[-240,-30]∪[30,240] m"
angular = "[-10,-5]∪[5,10] deg, step 0.5"

[waveform]
length = 64

[solver]
randomizations = 64
cross_threshold = 1.0

[run]
designs = ["proposed", "comm_only"]

[sweep]
sinr_db = [16.0]
gain_db = [6.4]
n_seeds = 1
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_isac-beam"));
    c.env("RUST_LOG", "warn");
    c
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn listed_files(out: &Path) -> Vec<String> {
    manifest(out)["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap().to_owned())
        .collect()
}

fn files_on_disk(out: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    names
}

#[test]
fn design_then_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("design");
    let status = run(&["design", "--seed", "3"], &cfg, &out).status;
    assert!(status.success(), "design exited with {status}");
    assert_eq!(listed_files(&out), files_on_disk(&out));
    assert_eq!(manifest(&out)["command"], "design");

    let csv = out.join("beamformer_proposed.csv");
    let check = dir.path().join("verify");
    let ok = run(
        &["verify", csv.to_str().unwrap(), "--seed", "3"],
        &cfg,
        &check,
    );
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );

    // Scale one coefficient; the ISLR and constraints no longer match.
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let mut cols: Vec<String> = lines[1].split(',').map(str::to_owned).collect();
    let re: f64 = cols[1].parse().unwrap();
    cols[1] = (re * 3.0 + 0.5).to_string();
    lines[1] = cols.join(",");
    fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let bad = run(
        &["verify", csv.to_str().unwrap(), "--seed", "3"],
        &cfg,
        &check,
    );
    assert_eq!(bad.status.code(), Some(3));
    assert!(manifest(&check)["error"].is_string());
}

#[test]
fn config_errors_exit_one_and_leave_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = run(&["design"], &dir.path().join("absent.toml"), &out);
    assert_eq!(missing.status.code(), Some(1));
    assert!(manifest(&out)["error"]
        .as_str()
        .unwrap()
        .contains("absent.toml"));

    let typo = dir.path().join("typo.toml");
    fs::write(&typo, "[system]\nnum_antenas = 8\n").unwrap();
    assert_eq!(run(&["design"], &typo, &out).status.code(), Some(1));
}

#[test]
fn single_cell_sweep_writes_one_row_per_design() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("sweep");
    let o = run(&["sweep", "--designs", "proposed"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 2, "{text}");
    assert_eq!(listed_files(&out), vec!["sweep.csv"]);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert!(run(&["cuts", "--seed", "9"], &cfg, out).status.success());
    }
    for name in files_on_disk(&a) {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name} differs"
        );
    }
}
