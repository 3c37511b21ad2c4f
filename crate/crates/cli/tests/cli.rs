use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bundled_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/clear_sky").canonicalize().unwrap()
}

/// Ten minutes around noon of the bundled day, with absolute data paths.
fn short_scenario_text(extra: &str) -> String {
    let base = bundled_dir();
    let mut text = std::fs::read_to_string(base.join("scenario.toml")).unwrap();
    for f in ["network.json", "weather.csv", "loads.csv", "slack.csv"] {
        text = text.replace(&format!("\"{f}\""), &format!("{:?}", base.join(f).display().to_string()));
    }
    text.replace("[timing]\n", &format!("[timing]\nstart_s = 43200\nduration_s = 600\n{extra}"))
}

fn short_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("short.toml");
    std::fs::write(&path, short_scenario_text("")).unwrap();
    path
}

fn voltguard(args: &[&str]) -> Output {
    voltguard_in(args, None)
}

fn voltguard_in(args: &[&str], out_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_voltguard"));
    cmd.args(args).env_remove("VOLTGUARD_OUT");
    if let Some(root) = out_root {
        cmd.env("VOLTGUARD_OUT", root);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_short(tmp: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let scn = short_scenario(tmp);
    let out = tmp.join(out);
    let mut args = vec!["run", scn.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = voltguard(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn missing_scenario_exits_2_and_names_the_path() {
    let o = voltguard(&["run", "/nonexistent/where.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/where.toml"), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_2_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let text = short_scenario_text("").replace("v_max = 1.04", "v_max = 0.9");
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let o = voltguard(&["run", path.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("control.v"), "{}", stderr(&o));
}

#[test]
fn manifest_records_scenario_hash_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_short(tmp.path(), "run", &["--seed", "7"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let bytes = std::fs::read(tmp.path().join("short.toml")).unwrap();
    let expected: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(manifest["scenario_sha256"], expected.as_str());
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["controlled"], true);
    assert_eq!(manifest["timing"]["cycles"], 20);
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in ["run.json", "seconds.csv", "cycles.csv"] {
        assert!(outputs.contains(&f), "{f} missing from {outputs:?}");
    }
    assert!(!out.join("manifest.json.tmp").exists());
}

#[test]
fn baseline_run_has_no_cycles_and_metrics_refuse_it() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_short(tmp.path(), "base", &["--no-control"]);
    let cycles = std::fs::read_to_string(out.join("cycles.csv")).unwrap();
    assert_eq!(cycles.lines().count(), 2, "only schema and header lines expected");
    let o = voltguard(&["metrics", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn metrics_are_reproducible_and_verify_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_short(tmp.path(), "run", &[]);
    let dir = out.to_str().unwrap();
    assert!(voltguard(&["metrics", dir]).status.success());
    let first = std::fs::read(out.join("metrics.csv")).unwrap();
    let o = voltguard(&["metrics", dir]);
    assert!(o.status.success());
    assert_eq!(first, std::fs::read(out.join("metrics.csv")).unwrap());
    assert!(String::from_utf8_lossy(&o.stdout).contains("PICP"));
    assert!(voltguard(&["metrics", dir, "--eta", "printed"]).status.success());

    let o = voltguard(&["verify", dir]);
    assert_eq!(o.status.code(), Some(0), "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
}

#[test]
fn oracle_coefficients_have_zero_rmse() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("oracle.toml");
    std::fs::write(&path, short_scenario_text("").replace("[estimation]\n", "[estimation]\nsource = \"oracle\"\n")).unwrap();
    let out = tmp.path().join("o");
    assert!(voltguard(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    assert!(voltguard(&["metrics", out.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = text.lines().skip(1);
    assert_eq!(lines.next(), Some("coefficient,period,steps,rmse,picp,cwc,pinaw"));
    let mut rows = 0;
    for line in lines {
        // the quoted label holds a comma, so count from the right
        let rmse: f64 = line.rsplit(',').nth(3).unwrap().parse().unwrap();
        assert!(rmse == 0.0 || rmse.is_nan(), "{line}");
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = short_scenario(tmp.path());
    let root = tmp.path().join("runs");
    let o = voltguard_in(&["run", scn.to_str().unwrap(), "--seed", "3", "--no-control"], Some(&root));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("clear-sky-seed3-baseline").join("manifest.json").is_file());
}

#[test]
fn telemetry_flag_writes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_short(tmp.path(), "tel", &["--telemetry", "on"]);
    assert!(out.join("telemetry.json").is_file());
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"telemetry\": true"));
}

#[test]
fn scenario_directory_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scn");
    std::fs::create_dir(&dir).unwrap();
    std::fs::write(dir.join("scenario.toml"), short_scenario_text("")).unwrap();
    let out = tmp.path().join("o");
    let o = voltguard(&["run", dir.to_str().unwrap(), "--out", out.to_str().unwrap(), "--no-control"]);
    assert!(o.status.success(), "{}", stderr(&o));
}
