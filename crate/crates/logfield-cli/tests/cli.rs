use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn logfield(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_logfield"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    name.to_string()
}

fn output_digests(run_dir: &Path) -> BTreeMap<String, String> {
    let text = std::fs::read_to_string(run_dir.join("manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            (o["path"].as_str().unwrap().to_string(), o["sha256"].as_str().unwrap().to_string())
        })
        .collect()
}

#[test]
fn covtest_reports_exact_equality_at_constant_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cov.toml",
        "kind = \"covtest\"\nprofile = \"constant\"\nlevels = [4]\n",
    );
    let out = logfield(&["run", "--config", &cfg, "--out", "covout"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("covout/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report[0]["n_side"], 16);
    assert_eq!(report[0]["exact_equal"], true);
    assert!(report[0]["max_abs_diff"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn extremes_digests_are_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ext.toml",
        "kind = \"extremes\"\nmodel = \"mibrw\"\nlevels = [6]\nreplicas = 100\nseed = 7\n",
    );
    let a = logfield(&["run", "--config", &cfg, "--out", "a", "--workers", "1"], dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = logfield(&["run", "--config", &cfg, "--out", "b", "--workers", "4"], dir.path());
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    let da = output_digests(&dir.path().join("a"));
    let db = output_digests(&dir.path().join("b"));
    assert!(!da.is_empty());
    assert_eq!(da, db);
    // a different seed produces different field digests
    let c = logfield(
        &["run", "--config", &cfg, "--out", "c", "--seed", "8"],
        dir.path(),
    );
    assert!(c.status.success());
    let dc = output_digests(&dir.path().join("c"));
    assert_ne!(da["field0-n64.lfgr"], dc["field0-n64.lfgr"]);
}

#[test]
fn cluster_csv_has_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cl.toml",
        "kind = \"cluster\"\nmodel = \"mibrw\"\nlevels = [5]\nreplicas = 50\nseed = 3\nr_grid = [2.0, 4.0, 8.0]\n",
    );
    let out = logfield(&["run", "--config", &cfg, "--out", "cl"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("cl/cluster-n32.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "r,estimate,lower,upper");
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cells[2] <= cells[1] && cells[1] <= cells[3]);
    }
}

#[test]
fn unknown_config_key_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "kind = \"cluster\"\nlevels = [5]\nwat = 1\n");
    let out = logfield(&["run", "--config", &cfg, "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("wat"));
}

#[test]
fn invalid_field_values_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    for body in [
        "kind = \"extremes\"\nlevels = []\n",
        "kind = \"extremes\"\nlevels = [5]\nreplicas = 0\n",
        "kind = \"nonsense\"\nlevels = [5]\n",
    ] {
        let cfg = write_config(dir.path(), "bad.toml", body);
        let out = logfield(&["validate-config", "--config", &cfg], dir.path());
        assert_eq!(out.status.code(), Some(2), "config {body:?}");
    }
    let good = write_config(dir.path(), "good.toml", "kind = \"extremes\"\nlevels = [5]\n");
    let ok = logfield(&["validate-config", "--config", &good], dir.path());
    assert!(ok.status.success());
}

#[test]
fn existing_output_directory_is_never_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cov.toml",
        "kind = \"covtest\"\nprofile = \"constant\"\nlevels = [3]\n",
    );
    std::fs::create_dir(dir.path().join("taken")).unwrap();
    std::fs::write(dir.path().join("taken/precious.txt"), "keep me").unwrap();
    let out = logfield(&["run", "--config", &cfg, "--out", "taken"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("taken/precious.txt")).unwrap(),
        "keep me"
    );
}

#[test]
fn sweep_over_matching_grid_produces_point_dirs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "tf.toml",
        concat!(
            "kind = \"threefield\"\nlevels = [5]\nreplicas = 20\nseed = 9\n",
            "k = 1\nl = 1\nsweep_kp = [1, 2]\nsweep_lp = [0]\n",
        ),
    );
    let out = logfield(&["sweep", "--config", &cfg, "--out", "sw"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("sw/point-0/manifest.json").exists());
    assert!(dir.path().join("sw/point-1/manifest.json").exists());
    let summary = std::fs::read_to_string(dir.path().join("sw/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    // derived seeds: base xor grid index
    let m1: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sw/point-0/manifest.json")).unwrap(),
    )
    .unwrap();
    let m2: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sw/point-1/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_ne!(m1["config_hash"], m2["config_hash"]);
}

#[test]
fn sweep_guards_empty_grids_and_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_config(
        dir.path(),
        "empty.toml",
        "kind = \"extremes\"\nlevels = [5]\nreplicas = 10\n",
    );
    let out = logfield(&["sweep", "--config", &empty, "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let capped = write_config(
        dir.path(),
        "capped.toml",
        "kind = \"extremes\"\nlevels = [4, 5, 6]\nreplicas = 10\nsweep_cap = 2\n",
    );
    let out = logfield(&["sweep", "--config", &capped, "--out", "y"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap"));
}

#[test]
fn show_manifest_prints_hash_and_digests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cov.toml",
        "kind = \"covtest\"\nprofile = \"constant\"\nlevels = [3]\n",
    );
    let run = logfield(&["run", "--config", &cfg, "--out", "r"], dir.path());
    assert!(run.status.success());
    let out = logfield(&["show-manifest", "r"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("config hash"));
    assert!(text.contains("covtest.csv"));
}
