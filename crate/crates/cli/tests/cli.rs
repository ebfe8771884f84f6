use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_swingvolt");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn preset_file(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/presets")
        .join(format!("{name}.toml"));
    fs::read_to_string(path).unwrap()
}

const TWO_NODE: &str = r#"
schema_version = 1
name = "pair"
analyses = ["simulate"]

[network]
kind = "all_to_all"
node_count = 2

[nodes]
power = [0.3, -0.3]
secondary_gain = 1.0
voltage_time_constant = 2.0

[initial]
voltage = 1.14

[integrator]
t_final = 20.0
"#;

#[test]
fn unknown_preset_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["preset", "fig7"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fig7"), "{err}");
    assert!(err.contains("fig1"), "{err}");
}

#[test]
fn missing_or_unversioned_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(tmp.path(), &["simulate", "absent.toml"]).status.code(), Some(2));

    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, TWO_NODE.replace("schema_version = 1", "")).unwrap();
    let out = run(tmp.path(), &["simulate", "c.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version"));

    fs::write(&cfg, TWO_NODE.replace("schema_version = 1", "schema_version = 9")).unwrap();
    assert_eq!(run(tmp.path(), &["simulate", "c.toml"]).status.code(), Some(2));
}

#[test]
fn non_positive_step_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), TWO_NODE).unwrap();
    for dt in ["0", "-0.01"] {
        let out = run(tmp.path(), &["simulate", "c.toml", "--dt", dt]);
        assert_eq!(out.status.code(), Some(2), "dt = {dt}");
    }
}

#[test]
fn overrides_shape_the_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), TWO_NODE).unwrap();
    let out = run(
        tmp.path(),
        &["simulate", "c.toml", "--out-dir", "res", "--dt", "0.02", "--t-final", "4"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("res/pair_trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,theta_1,theta_2,omega_1,omega_2,E_1,E_2"
    );
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("4,"), "{last}");
    // stride 10 at dt 0.02 samples every 0.2 s
    assert_eq!(csv.lines().count(), 1 + 21);
}

#[test]
fn voltage_blowup_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = TWO_NODE
        .replace("node_count = 2", "node_count = 10")
        .replace("power = [0.3, -0.3]", "power = 0.0");
    fs::write(tmp.path().join("c.toml"), cfg).unwrap();
    let out = run(tmp.path(), &["simulate", "c.toml", "--t-final", "200"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stability_without_fixed_point_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = TWO_NODE
        .replace("secondary_gain = 1.0", "secondary_gain = 0.0")
        .replace("power = [0.3, -0.3]", "power = [0.8, -0.3]");
    fs::write(tmp.path().join("c.toml"), cfg).unwrap();
    assert_eq!(run(tmp.path(), &["stability", "c.toml"]).status.code(), Some(3));
}

#[test]
fn stability_report_lists_eigenvalue_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), TWO_NODE).unwrap();
    let out = run(tmp.path(), &["stability", "c.toml", "--out-dir", "res"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("res/pair_stability.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let eigs = json["eigenvalues"].as_array().unwrap();
    assert_eq!(eigs.len(), 6);
    assert!(eigs.iter().all(|e| e.as_array().unwrap().len() == 2));
    assert_eq!(json["verdict"], "stable");
}

#[test]
fn preset_and_checked_in_config_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("fig2.toml"), preset_file("fig2")).unwrap();
    let a = run(tmp.path(), &["preset", "fig2", "--out-dir", "a"]);
    let b = run(tmp.path(), &["sweep", "fig2.toml", "--out-dir", "b"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));

    let mut names: Vec<_> = fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n.to_string_lossy().ends_with("_trajectory.csv")));
    for name in names {
        let name = name.to_string_lossy();
        let left = fs::read(tmp.path().join("a").join(&*name)).unwrap();
        let right = fs::read(tmp.path().join("b").join(&*name)).unwrap();
        if name.ends_with(".csv") {
            assert!(left == right, "{name} differs");
        }
    }
}

#[test]
fn gamma_sweep_writes_return_time_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["preset", "fig5", "--out-dir", "rt"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("rt/fig5_return_time.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "gamma,return_time,converged");
    let gammas: Vec<f64> = lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(gammas, vec![0.25, 0.5, 1.0, 2.0, 4.0]);
}
