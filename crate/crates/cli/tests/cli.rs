use std::path::Path;
use std::process::{Command, Output};

use rankid::datagen::{save_image, ImageTensor};
use rankid::Matrix;
use serde_json::Value;

fn rankid<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankid")).args(args).output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn out_dir(dir: &tempfile::TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

#[test]
fn synth_single_iteration_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_dir(&dir, "s");
    let o = rankid(&["synth", "--m", "20", "--n", "20", "--rank", "2", "--seeds", "1", "--itmax", "1", "--out-dir", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&Path::new(&out).join("summary.json"));
    assert_eq!(summary["total_runs"], 1);
    let trace_file = summary["runs"][0]["trace_file"].as_str().unwrap();
    let csv = std::fs::read_to_string(Path::new(&out).join(trace_file)).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(summary["runs"][0]["stop_reason"], "itmax");
}

#[test]
fn synth_grid_counts_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        [
            "synth", "--m", "30", "--n", "25", "--rank", "2,3", "--sr", "0.6", "--seeds", "2", "--variant", "eirnri,irnri",
            "--itmax", "300", "--out-dir", out,
        ]
        .map(String::from)
    };
    let (a, b) = (out_dir(&dir, "a"), out_dir(&dir, "b"));
    for out in [&a, &b] {
        let o = rankid(&args(out));
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let summary = read_json(&Path::new(&a).join("summary.json"));
    assert_eq!(summary["total_runs"], 8);
    assert_eq!(summary["trace_files"], 8);
    assert_eq!(summary["cells"].as_array().unwrap().len(), 4);
    for run in summary["runs"].as_array().unwrap() {
        let name = run["trace_file"].as_str().unwrap();
        let x = std::fs::read(Path::new(&a).join(name)).unwrap();
        let y = std::fs::read(Path::new(&b).join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between reruns");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"m": 12, "n": 12, "ranks": [2], "seeds": 1, "itmax": 3, "lambda": 0.05}"#).unwrap();
    let out = out_dir(&dir, "c");
    let o = rankid(&["synth", "--config", cfg.to_str().unwrap(), "--itmax", "2", "--out-dir", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&Path::new(&out).join("summary.json"));
    assert_eq!(summary["config"]["m"], 12);
    assert_eq!(summary["config"]["itmax"], 2);
    assert_eq!(summary["config"]["lambda"], 0.05);
    assert!(summary["config"]["lambda_rel"].is_null());
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_dir(&dir, "e");
    for args in [
        vec!["trace", "--beta", "0.9", "--out-dir", &out],
        vec!["trace", "--p", "1.5", "--out-dir", &out],
        vec!["synth", "--sr", "0", "--out-dir", &out],
        vec!["trace", "--alpha", "1.2", "--out-dir", &out],
    ] {
        let o = rankid(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    let o = rankid(&["synth", "--config", cfg.to_str().unwrap(), "--out-dir", &out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trace_identifies_rank_and_passes_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_dir(&dir, "t");
    let snap = dir.path().join("instance.json");
    let o = rankid(&["trace", "--out-dir", &out, "--save-instance", snap.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&Path::new(&out).join("certificates.json"));
    assert_eq!(report["checks"]["all_pass"], true);
    assert_eq!(report["rank_final"], 3);
    let iterations = report["iterations"].as_u64().unwrap() as usize;
    let eps = std::fs::read_to_string(Path::new(&out).join("eps.csv")).unwrap();
    assert_eq!(eps.lines().count(), iterations + 1);
    let csv = std::fs::read_to_string(Path::new(&out).join("trace.csv")).unwrap();
    let ranks: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(7).unwrap()).collect();
    let settled = ranks.iter().rposition(|&r| r != "3").map_or(0, |i| i + 1);
    assert!(settled < ranks.len() - 10, "rank settles at {settled} of {}", ranks.len());

    // Re-solving the saved snapshot reproduces the trace exactly.
    let again = out_dir(&dir, "t2");
    let o = rankid(&["trace", "--out-dir", &again, "--instance", snap.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read(Path::new(&out).join("trace.csv")).unwrap(),
        std::fs::read(Path::new(&again).join("trace.csv")).unwrap()
    );
}

fn write_test_png(path: &Path) {
    let channel = |phase: f64| {
        Matrix::from_fn(40, 36, |i, j| {
            let (x, y) = (i as f64 / 40.0, j as f64 / 36.0);
            (127.0 + 90.0 * (3.0 * x + phase).sin() * (2.0 * y).cos() + 30.0 * x * y).round()
        })
    };
    save_image(path, &ImageTensor::new(vec![channel(0.0), channel(1.0), channel(2.0)]).unwrap()).unwrap();
}

#[test]
fn image_full_mask_reproduces_target() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("in.png");
    write_test_png(&png);
    let out = out_dir(&dir, "i");
    let o = rankid(&[
        "image", "--input", png.to_str().unwrap(), "--rank", "4", "--sr", "1", "--variant", "eirnri,pirnn", "--lambda", "0.01",
        "--out-dir", &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&Path::new(&out).join("image_summary.json"));
    assert_eq!(summary["observed_fraction"], 1.0);
    for v in summary["variants"].as_array().unwrap() {
        let db = v["psnr_vs_target_db"].as_f64().unwrap_or(f64::INFINITY);
        assert!(db > 40.0, "{v}");
        assert!(Path::new(&out).join(v["restored_png"].as_str().unwrap()).is_file());
    }
    for f in ["target.png", "masked.png", "traces/eirnri_c0.csv", "traces/pirnn_c2.csv"] {
        assert!(Path::new(&out).join(f).is_file(), "missing {f}");
    }
}

#[test]
fn image_block_mask_hides_rectangle() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("in.png");
    write_test_png(&png);
    let out = out_dir(&dir, "b");
    let o = rankid(&[
        "image", "--input", png.to_str().unwrap(), "--rank", "3", "--mask", "block", "--block-rects", "5:5:6:4,20:10:3:3",
        "--itmax", "50", "--out-dir", &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&Path::new(&out).join("image_summary.json"));
    let expected = 1.0 - (24.0 + 9.0) / (40.0 * 36.0);
    assert!((summary["observed_fraction"].as_f64().unwrap() - expected).abs() < 1e-12);
}

#[test]
fn image_without_input_is_a_config_error() {
    let o = rankid(&["image"; 1]);
    assert_eq!(o.status.code(), Some(2));
}
