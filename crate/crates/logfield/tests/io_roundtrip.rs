use approx::assert_abs_diff_eq;
use logfield::covariance::green_matrix;
use logfield::io::{
    load_profile, parse_profile, read_grid, read_matrix, sha256_file, sha256_hex, write_csv,
    write_grid, write_json, write_matrix, RunManifest,
};
use logfield::lattice::BoxSpec;
use logfield::sampler::{FieldSample, ModelTag};

#[test]
fn matrix_roundtrip_preserves_every_entry() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("green.lfmx");
    let spec = BoxSpec::new(3, 0.0).unwrap();
    let g = green_matrix(&spec).unwrap();
    write_matrix(&path, &g, spec.side()).unwrap();
    let (back, side) = read_matrix(&path).unwrap();
    assert_eq!(side, 8);
    assert_eq!(back.dim(), g.dim());
    for i in 0..g.dim() {
        for j in 0..g.dim() {
            assert_eq!(back.value(i, j), g.value(i, j));
        }
    }
}

#[test]
fn matrix_reader_rejects_foreign_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.bin");
    std::fs::write(&path, b"not a matrix at all").unwrap();
    assert!(read_matrix(&path).is_err());
}

#[test]
fn grid_roundtrip_preserves_values_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.lfgr");
    let sample = FieldSample {
        model: ModelTag::Mibrw,
        side: 4,
        values: (0..16).map(|i| i as f64 * 0.25 - 1.0).collect(),
        levels: 2,
        trajectories: None,
        components: None,
    };
    write_grid(&path, &sample, 99, 7).unwrap();
    let back = read_grid(&path).unwrap();
    assert_eq!(back.seed, 99);
    assert_eq!(back.stream, 7);
    assert_eq!(back.sample.model, ModelTag::Mibrw);
    assert_eq!(back.sample.side, 4);
    assert_eq!(back.sample.values, sample.values);
}

#[test]
fn csv_writer_output_and_width_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("points.csv");
    write_csv(&path, &["z", "p"], &[vec![1.0, 0.5], vec![2.0, 0.25]]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("z,p"));
    let first = lines.next().unwrap();
    let cells: Vec<f64> = first.split(',').map(|c| c.parse().unwrap()).collect();
    assert_abs_diff_eq!(cells[0], 1.0);
    assert_abs_diff_eq!(cells[1], 0.5);
    assert!(write_csv(&path, &["z", "p"], &[vec![1.0]]).is_err());
}

#[test]
fn profile_file_parsing() {
    let good = r#"
kind = "step"
breakpoints = [0.0, 0.5, 1.0]
values = [0.70710678118654752, 1.22474487139158905]
"#;
    let profile = parse_profile(good).unwrap();
    assert_abs_diff_eq!(profile.sigma(0.25).powi(2), 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(profile.sigma(0.75).powi(2), 1.5, epsilon = 1e-12);

    let unnormalized = r#"
kind = "step"
breakpoints = [0.0, 0.5, 1.0]
values = [0.5, 1.0]
normalize = true
"#;
    let scaled = parse_profile(unnormalized).unwrap();
    assert_abs_diff_eq!(scaled.i_sigma2(0.0, 1.0).unwrap(), 1.0, epsilon = 1e-12);

    // the same file without the normalize flag violates I(1) = 1
    let bad_mass = unnormalized.replace("normalize = true", "normalize = false");
    assert!(parse_profile(&bad_mass).is_err());

    let unknown_key = good.to_string() + "\nextra = 3\n";
    assert!(parse_profile(&unknown_key).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profile.toml");
    std::fs::write(&path, good).unwrap();
    assert!(load_profile(&path).is_ok());
}

#[test]
fn manifest_json_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    let manifest = RunManifest {
        config_hash: sha256_hex(b"config"),
        artifact_version: "1".into(),
        timestamp_unix: 1_700_000_000,
        stage_seconds: vec![("sample".into(), 1.5)],
        streams_consumed: 42,
        outputs: vec![],
    };
    write_json(&path, &manifest).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let back: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back.config_hash, manifest.config_hash);
    assert_eq!(back.streams_consumed, 42);
}

#[test]
fn sha256_matches_known_vectors() {
    assert_eq!(
        sha256_hex(b""),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
    assert_eq!(
        sha256_hex(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("abc.txt");
    std::fs::write(&path, b"abc").unwrap();
    assert_eq!(sha256_file(&path).unwrap(), sha256_hex(b"abc"));
}
