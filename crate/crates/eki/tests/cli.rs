use std::path::Path;
use std::process::{Command, Output};

fn eki(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eki"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A short, cheap inversion setup.
const QUICK: &str = r#"{
    "rod": { "n_elements": 6, "t_end": 0.3 },
    "camera": { "width": 96, "height": 64, "scale": 250.0, "origin": [10.0, 32.0], "stroke_radius": 3.0 },
    "flow": { "t_end": 0.05, "samples_per_decade": 4 },
    "schedule": { "t_cutoff": 0.02, "n_post_switches": 5 }
}"#;

#[test]
fn forward_writes_the_image_chain_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = eki(dir.path(), &["forward", "--out", "fwd"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "render.ppm",
        "render.png",
        "binary.pgm",
        "distance.pgm",
        "distance.csv",
        "rod.csv",
        "manifest.json",
    ] {
        assert!(dir.path().join("fwd").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("fwd/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "forward");
    assert_eq!(manifest["config"]["sigma"], 128);
    assert!(manifest["config"]["flow"]["control"]["rel_tol"].is_number());
    assert!(manifest["version"].is_string());
}

#[test]
fn full_resolution_distance_table() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("big.json"), r#"{ "camera": { "width": 705, "height": 555, "scale": 1900.0, "origin": [40.0, 277.0], "stroke_radius": 25.0 } }"#).unwrap();
    let o = eki(
        dir.path(),
        &[
            "--config",
            "big.json",
            "forward",
            "--out",
            "big",
            "--metric",
            "manhattan",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("big/distance.csv")).unwrap();
    assert_eq!(text.lines().count(), 391_275 + 1);
    assert_eq!(text.lines().next().unwrap(), "row,col,distance");
}

#[test]
fn manifest_rerun_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("q.json"), QUICK).unwrap();
    let o = eki(
        dir.path(),
        &[
            "--config",
            "q.json",
            "invert-sub",
            "--out",
            "a",
            "--seed",
            "7",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = eki(
        dir.path(),
        &["--config", "a/manifest.json", "invert-sub", "--out", "b"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["trajectory.csv", "switches.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("q.json"), QUICK).unwrap();
    for (w, out) in [("1", "w1"), ("3", "w3")] {
        let o = eki(
            dir.path(),
            &["--config", "q.json", "invert", "--workers", w, "--out", out],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        std::fs::read(dir.path().join("w1/trajectory.csv")).unwrap(),
        std::fs::read(dir.path().join("w3/trajectory.csv")).unwrap()
    );
}

#[test]
fn diagnose_fits_the_residual_rate() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = String::from("t,mean_residual\n");
    let mut b = String::from("t,mean_residual\n");
    for k in 0..40 {
        let t = 10f64.powf(-1.0 + 4.0 * k as f64 / 39.0);
        a.push_str(&format!("{t},{}\n", 3.0 / t));
        b.push_str(&format!("{t},{}\n", 4.5 / t));
    }
    std::fs::write(dir.path().join("a.csv"), a).unwrap();
    std::fs::write(dir.path().join("b.csv"), b).unwrap();
    std::fs::write(
        dir.path().join("d.json"),
        r#"{ "diagnose": { "trajectory": "b.csv", "reference": "a.csv" } }"#,
    )
    .unwrap();
    let o = eki(
        dir.path(),
        &["--config", "d.json", "diagnose", "--out", "diag"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("diag/diagnose.json")).unwrap(),
    )
    .unwrap();
    assert!((s["rate"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((s["terminal_ratio"].as_f64().unwrap() - 1.5).abs() < 1e-9);
}

#[test]
fn exit_codes_separate_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let o = eki(dir.path(), &["forward", "--sigma", "0", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = eki(dir.path(), &["--config", "absent.json", "forward"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("absent.json"));

    std::fs::write(
        dir.path().join("missing_data.json"),
        r#"{ "data": "nowhere.pgm" }"#,
    )
    .unwrap();
    let o = eki(
        dir.path(),
        &["--config", "missing_data.json", "invert", "--out", "x"],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nowhere.pgm"));

    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(
        eki(dir.path(), &["--config", "bad.json", "forward"])
            .status
            .code(),
        Some(5)
    );
    std::fs::write(dir.path().join("unknown.json"), r#"{ "sigmaa": 3 }"#).unwrap();
    assert_eq!(
        eki(dir.path(), &["--config", "unknown.json", "forward"])
            .status
            .code(),
        Some(5)
    );

    std::fs::write(
        dir.path().join("far.json"),
        r#"{ "truth": [-5.0, -3.0], "flow": { "t_end": 0.01 } }"#,
    )
    .unwrap();
    let o = eki(
        dir.path(),
        &["--config", "far.json", "invert", "--out", "x"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let o = eki(dir.path(), &["diagnose", "--out", "nothing"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("trajectory.csv"));
}

#[test]
fn external_white_image_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut pgm = b"P5\n256 192\n255\n".to_vec();
    pgm.extend(std::iter::repeat(255u8).take(256 * 192));
    std::fs::write(dir.path().join("white.pgm"), pgm).unwrap();
    std::fs::write(dir.path().join("w.json"), r#"{ "data": "white.pgm" }"#).unwrap();
    let o = eki(dir.path(), &["--config", "w.json", "invert", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("white.pgm"));
}
