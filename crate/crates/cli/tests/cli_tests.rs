//! End-to-end tests of the `amdyn` binary: exit codes, determinism,
//! manifest round-trips, and output formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_amdyn")
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("AMDYN_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SIM_CONFIG: &str = r#"
id = "sim"
seed = 7

[embeddings]
kind = "correlated-pair"
alpha = 0.5

[task]
preset = "pair"
p1 = 0.75

[dynamics]
kind = "sgd"
eta = 0.5
t_end = 200
batch_size = 4
record_every = 1
record_gamma = "canonical"
"#;

#[test]
fn simulate_is_deterministic_for_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "sim.toml", SIM_CONFIG);
    for out_name in ["a", "b"] {
        let out = run(&["simulate", "sim.toml", "--output-dir", out_name], tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(tmp.path().join("a/sim/trajectory.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/sim/trajectory.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "same config + seed must give byte-identical CSV");
}

#[test]
fn seed_flag_changes_stochastic_output() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "sim.toml", SIM_CONFIG);
    let out = run(&["simulate", "sim.toml", "--output-dir", "a"], tmp.path());
    assert!(out.status.success());
    let out = run(
        &["simulate", "sim.toml", "--output-dir", "b", "--seed", "8"],
        tmp.path(),
    );
    assert!(out.status.success());
    let a = std::fs::read(tmp.path().join("a/sim/trajectory.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/sim/trajectory.csv")).unwrap();
    assert_ne!(a, b, "different seeds must change the SGD trajectory");
}

#[test]
fn manifest_can_be_refed_as_config() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "sim.toml", SIM_CONFIG);
    let out = run(&["simulate", "sim.toml", "--output-dir", "a"], tmp.path());
    assert!(out.status.success());
    let manifest = tmp.path().join("a/sim/manifest.json");
    let out = run(
        &["simulate", manifest.to_str().unwrap(), "--output-dir", "b"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = std::fs::read(tmp.path().join("a/sim/trajectory.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/sim/trajectory.csv")).unwrap();
    assert_eq!(a, b, "re-feeding the manifest must reproduce the run");
}

#[test]
fn unknown_config_key_exits_2_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "bad.toml", "id = \"x\"\nunknown_knob = 1\n");
    let out = run(&["simulate", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown_knob"), "stderr: {stderr}");
}

#[test]
fn missing_config_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "no_such_file.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_section_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "empty.toml", "id = \"x\"\n");
    let out = run(&["phase", "empty.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("phase"), "stderr: {stderr}");
}

#[test]
fn verify_passes_and_prints_property_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["verify"], tmp.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gradient-matches-finite-differences"));
    assert!(stdout.contains("ms"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn output_dir_env_var_is_honored() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "sim.toml", SIM_CONFIG);
    let out = Command::new(bin())
        .args(["simulate", "sim.toml"])
        .current_dir(tmp.path())
        .env("AMDYN_OUTPUT_DIR", "from_env")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("from_env/sim/trajectory.csv").exists());
}

#[test]
fn csv_format_is_lf_with_17_significant_digits() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "sim.toml", SIM_CONFIG);
    let out = run(&["simulate", "sim.toml", "--output-dir", "o"], tmp.path());
    assert!(out.status.success());
    let text = std::fs::read_to_string(tmp.path().join("o/sim/trajectory.csv")).unwrap();
    assert!(!text.contains('\r'), "CSV must use LF line endings");
    // Every data field is scientific notation with a 16-digit mantissa
    // fraction (17 significant digits).
    let line = text.lines().nth(1).unwrap();
    for field in line.split(',') {
        let mantissa = field.split('e').next().unwrap();
        let frac = mantissa.split('.').nth(1).unwrap();
        assert_eq!(frac.len(), 16, "field {field} is not 17 significant digits");
    }
}

#[test]
fn reproduce_lists_six_figures_and_runs_fig2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["reproduce", "list"], tmp.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    for id in ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6"] {
        assert!(stdout.contains(id), "registry is missing {id}");
    }
    let out = run(&["reproduce", "fig2", "--output-dir", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["fig2.svg", "fig2_loss.svg", "loss.csv", "manifest.json"] {
        assert!(tmp.path().join("o/fig2").join(file).exists(), "missing {file}");
    }
}

#[test]
fn unknown_figure_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["reproduce", "fig99"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fig99"));
}

#[test]
fn svg_outputs_are_well_formed() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(
        tmp.path(),
        "cf.toml",
        r#"
id = "cf"
[closed_form]
c = 2.0
t_max = 100.0
points = 50
"#,
    );
    let out = run(&["closed-form", "cf.toml", "--output-dir", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let svg = std::fs::read_to_string(tmp.path().join("o/cf/margin.svg")).unwrap();
    assert!(svg.starts_with("<?xml") || svg.starts_with("<svg"));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("<polyline"));
}

#[test]
fn landscape_outputs_grid_csv() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(
        tmp.path(),
        "land.toml",
        r#"
id = "land"

[embeddings]
kind = "correlated-pair"
alpha = -0.5

[task]
preset = "pair"
p1 = 0.75

[landscape]
resolution = [33, 17]
"#,
    );
    let out = run(&["landscape", "land.toml", "--output-dir", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(tmp.path().join("o/land/loss.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 33 * 17);
    assert_eq!(text.lines().next().unwrap(), "gamma1,gamma2,value");
}
