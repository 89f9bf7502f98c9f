use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chernoff_cli::config::ExperimentConfig;
use chernoff_cli::output::RunManifest;
use chernoff_cli::presets;
use serde_json::Value;

fn preset_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn preset_json(name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(preset_path(name)).unwrap()).unwrap()
}

fn chernoff(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chernoff"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("CHERNOFF_OUT_DIR")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join(format!("{}.json", value["name"].as_str().unwrap()));
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run_config(command: &str, value: &Value) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), value);
    let out = chernoff(&[command, "--config", path.to_str().unwrap()], &dir.path().join("out"));
    (out, dir)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path, name: &str) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("out").join(name).join("manifest.json")).unwrap())
        .unwrap()
}

#[test]
fn every_shipped_preset_validates() {
    for (name, json) in presets::builtin() {
        let config = ExperimentConfig::from_json(&json).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(format!("{}.json", config.name), name);
    }
    for entry in fs::read_dir(preset_path("negative")).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        ExperimentConfig::from_json(&text).unwrap();
    }
}

#[test]
fn builtin_presets_match_the_presets_directory() {
    let on_disk = presets::load_dir(&preset_path("")).unwrap();
    assert_eq!(on_disk, presets::builtin());
}

#[test]
fn converge_preset_succeeds_and_writes_manifest() {
    let (out, dir) = run_config("converge", &preset_json("converge-circle-identity.json"));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let m = manifest(dir.path(), "converge-circle-identity");
    assert!(m.passed);
    assert_eq!(m.seed, 42);
    assert_eq!(m.outputs, ["convergence.csv", "convergence.json"]);
    let run_dir = dir.path().join("out/converge-circle-identity");
    for f in &m.outputs {
        assert!(run_dir.join(f).is_file());
    }
    let csv = fs::read_to_string(run_dir.join("convergence.csv")).unwrap();
    assert!(csv.starts_with("n,mesh,sup_error\r\n8,1.2500000000000000e-1,"));
    let summary: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("convergence.json")).unwrap()).unwrap();
    assert!(summary["order"].as_f64().unwrap() >= 0.5);
}

#[test]
fn self_convergence_preset_for_diagonal_scaling() {
    let (out, dir) = run_config("converge", &preset_json("converge-circle-diagonal-self.json"));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("out/converge-circle-diagonal-self/convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn short_n_list_is_a_config_error() {
    let mut v = preset_json("converge-circle-identity.json");
    v["experiment"]["n_list"] = serde_json::json!([8]);
    let (out, _dir) = run_config("converge", &v);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("experiment.n_list"), "{}", stderr(&out));
}

#[test]
fn unknown_fields_and_versions_are_rejected() {
    let mut v = preset_json("converge-circle-identity.json");
    v["experiment"]["tolerance"] = serde_json::json!(1.0);
    assert_eq!(run_config("converge", &v).0.status.code(), Some(2));

    let mut v = preset_json("converge-circle-identity.json");
    v["extra"] = serde_json::json!(true);
    assert_eq!(run_config("converge", &v).0.status.code(), Some(2));

    let mut v = preset_json("converge-circle-identity.json");
    v["scaling"]["profile"]["slope"] = serde_json::json!(1.0);
    assert_eq!(run_config("converge", &v).0.status.code(), Some(2));

    let mut v = preset_json("converge-circle-identity.json");
    v["schema_version"] = serde_json::json!(2);
    let (out, _dir) = run_config("converge", &v);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("schema_version"));
}

#[test]
fn config_must_match_the_subcommand() {
    let (out, _dir) = run_config("asymptotics", &preset_json("converge-circle-identity.json"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not asymptotics"));
}

#[test]
fn spectral_reference_needs_scalar_scaling() {
    let mut v = preset_json("converge-circle-diagonal-self.json");
    v["experiment"]["reference"] = serde_json::json!("spectral");
    assert_eq!(run_config("converge", &v).0.status.code(), Some(2));
}

#[test]
fn under_resolved_asymptotics_exits_with_numerical_code() {
    let v = preset_json("negative/asymptotics-under-resolved.json");
    let (out, dir) = run_config("asymptotics", &v);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("under-resolved"));
    let m = manifest(dir.path(), "asymptotics-under-resolved");
    assert!(!m.passed);
    assert!(m.error.unwrap().contains("under-resolved"));
}

#[test]
fn thick_shell_exits_with_numerical_code() {
    let (out, _dir) = run_config("density-check", &preset_json("negative/density-shell-too-thick.json"));
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("r/2"));
}

#[test]
fn density_check_preset_passes() {
    let (out, dir) = run_config("density-check", &preset_json("density-check-circle.json"));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let shell = fs::read_to_string(dir.path().join("out/density-check-circle/shell.csv")).unwrap();
    assert!(shell.starts_with("eps,shell,limit,deviation\r\n"));
}

#[test]
fn asymptotics_preset_reports_agreement() {
    let (out, dir) = run_config("asymptotics", &preset_json("asymptotics-circle-constant.json"));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let s: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/asymptotics-circle-constant/asymptotics.json")).unwrap(),
    )
    .unwrap();
    assert!(s["a1_relative_error"].as_f64().unwrap() <= 0.05);
    assert!(s["remainder_exponent"].as_f64().unwrap() >= 1.4);
    assert!(s["tail_t0"].as_f64().unwrap() > 0.0);
}

#[test]
fn too_few_paths_is_a_config_error() {
    let mut v = preset_json("mc-fdd-circle-k1.json");
    v["experiment"]["paths"] = serde_json::json!(9999);
    let (out, _dir) = run_config("mc-fdd", &v);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("experiment.paths"));
}

#[test]
fn times_off_the_partition_are_rejected() {
    let mut v = preset_json("mc-fdd-circle-k1.json");
    v["experiment"]["times"] = serde_json::json!([0.3]);
    v["experiment"]["paths"] = serde_json::json!(10000);
    let (out, _dir) = run_config("mc-fdd", &v);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not a partition point"));
}

#[test]
fn mc_fdd_is_deterministic_and_records_the_seed() {
    let mut v = preset_json("mc-fdd-circle-k2.json");
    v["experiment"]["paths"] = serde_json::json!(10000);
    v["experiment"]["gap_n_list"] = serde_json::json!([16, 64]);
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &v);
    let read = |out: &str, seed: &str| {
        let o = chernoff(&["mc-fdd", "--config", path.to_str().unwrap(), "--seed", seed], &dir.path().join(out));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(dir.path().join(out).join("mc-fdd-circle-k2/fdd.json")).unwrap()
    };
    let a = read("a", "42");
    assert_eq!(a, read("b", "42"));
    assert_ne!(a, read("c", "43"));
    let report: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["report"]["seed"], 42);
    assert!(report["report"]["diffusion_reference"].is_f64());
    assert!(report["report"]["chain_reference"].is_f64());
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &preset_json("density-check-circle.json"));
    let env_out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_chernoff"))
        .args(["density-check", "--config", path.to_str().unwrap()])
        .env("CHERNOFF_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(env_out.join("density-check-circle/manifest.json").is_file());

    let flag_out = dir.path().join("from-flag");
    let o = Command::new(env!("CARGO_BIN_EXE_chernoff"))
        .args(["density-check", "--config", path.to_str().unwrap(), "--out"])
        .arg(&flag_out)
        .env("CHERNOFF_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(flag_out.join("density-check-circle/manifest.json").is_file());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let mut v = preset_json("mc-fdd-circle-k1.json");
    v["experiment"]["paths"] = serde_json::json!(10000);
    v["experiment"]["gap_n_list"] = serde_json::json!([]);
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &v);
    let read = |out: &str, threads: &str| {
        let o = chernoff(&["mc-fdd", "--config", path.to_str().unwrap(), "--threads", threads], &dir.path().join(out));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let m: RunManifest = serde_json::from_slice(&fs::read(dir.path().join(out).join("mc-fdd-circle-k1/manifest.json")).unwrap()).unwrap();
        assert_eq!(m.threads, threads.parse::<usize>().unwrap());
        fs::read(dir.path().join(out).join("mc-fdd-circle-k1/fdd.csv")).unwrap()
    };
    assert_eq!(read("one", "1"), read("three", "3"));
}

#[test]
fn run_all_presets_from_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let presets = dir.path().join("presets");
    fs::create_dir(&presets).unwrap();
    write_config(&presets, &preset_json("density-check-circle.json"));
    write_config(&presets, &preset_json("negative/density-shell-too-thick.json"));
    let o = chernoff(&["run-all-presets", "--presets", presets.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0]["code"], 0);
    assert_eq!(runs[1]["code"], 3);
    assert_eq!(summary["passed"], false);
}
