use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hetgas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetgas")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hetgas-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn data_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn atom_preset_predicts_six_radii() {
    let dir = scratch("atom");
    let out = hetgas(&["predict", "--preset", "fig4_atom", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&dir.join("shells.csv"));
    let mut radii: Vec<f64> = rows.iter().flat_map(|r| [r[2], r[3]]).collect();
    radii.sort_by(f64::total_cmp);
    let expected = [0.0, 1.0 / 3f64.sqrt(), 0.5f64.sqrt(), (5.0f64 / 6.0).sqrt(), (5.0f64 / 3.0).sqrt(), 2f64.sqrt()];
    for (got, want) in radii.iter().zip(expected) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn missing_dimension_exits_with_config_code() {
    let dir = scratch("missing");
    let path = dir.join("bad.toml");
    fs::write(&path, "[gas]\ncharge_law = { form = \"uniform\", min = 1.0, max = 2.0 }\n").unwrap();
    let out = hetgas(&["simulate", "--config", path.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dimension"), "{stderr}");
    assert!(stderr.starts_with("hetgas: error code=2 kind=config"), "{stderr}");
}

#[test]
fn unknown_preset_and_override_key_are_config_errors() {
    assert_eq!(hetgas(&["predict", "--preset", "nope"]).status.code(), Some(2));
    let out = hetgas(&["predict", "--preset", "fig4_atom", "-s", "run.bogus=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn stats_without_checkpoints_is_a_statistics_error() {
    let dir = scratch("empty");
    let out = hetgas(&["stats", "--preset", "fig1_constant", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let run = |tag: &str, threads: &str| {
        let dir = scratch(tag);
        let out = hetgas(&[
            "scenario",
            "fig1_decreasing",
            "--out",
            dir.to_str().unwrap(),
            "--seed",
            "11",
            "--threads",
            threads,
            "-s",
            "run.n=120",
            "-s",
            "run.replicas=2",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let a = run("repro-a", "1");
    let b = run("repro-b", "3");
    for file in ["checkpoints/replica_0000.csv", "checkpoints/replica_0001.csv", "radial.csv", "ordering.csv", "simulate.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let ordering = fs::read_to_string(a.join("ordering.csv")).unwrap();
    assert!(ordering.contains("# seed=11"));
}

#[test]
fn stats_rereads_simulated_checkpoints() {
    let dir = scratch("restats");
    let d = dir.to_str().unwrap();
    let sim = hetgas(&["simulate", "--preset", "fig1_constant", "--out", d, "-s", "run.n=100", "-s", "run.replicas=2"]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let other = dir.join("stats");
    let out = hetgas(&["stats", "--preset", "fig1_constant", "--input", d, "--out", other.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(data_rows(&other.join("ordering.csv")).len(), 2);
}

#[test]
fn sphere_preset_skips_radial_observables() {
    let dir = scratch("sphere");
    let out = hetgas(&["scenario", "fig9_sphere", "--out", dir.to_str().unwrap(), "-s", "run.n=150"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.join("radial.csv").exists());
    let rows = data_rows(&dir.join("ordering.csv"));
    assert!(rows[0][1].abs() > 0.5, "{rows:?}");
}

#[test]
fn inverse_writes_reconstructed_law() {
    let dir = scratch("inverse");
    let out = hetgas(&["inverse", "--preset", "fig7_reconstruction", "--out", dir.to_str().unwrap(), "-s", "inverse.roundtrip=false"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("inverse.json")).unwrap()).unwrap();
    assert!((summary["q_min"].as_f64().unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-6);
    assert!(!data_rows(&dir.join("nu.csv")).is_empty());
}
