use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use spherecal::perceptual::{write_csv, JudgmentRecord, Parameter};
use spherecal::warp::BitDepth;
use spherecal::Image;

fn spherecal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spherecal"))
        .args(args)
        .env_remove("CALIB_THREADS")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let mut all = vec!["--json"];
    all.extend_from_slice(args);
    let out = spherecal(&all);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON value")
}

fn code(args: &[&str]) -> i32 {
    spherecal(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_panos(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        Image::from_fn(128, 64, 3, |x, y, c| ((x * 5 + y * 3 + c * 7 + i * 11) % 64) as f32 / 63.0)
            .save_png(dir.join(format!("pano{i}.png")), BitDepth::Eight)
            .unwrap();
    }
}

#[test]
fn params_quarter_turn_pinhole() {
    let v = ok_json(&["params", "--hfov-deg", "90", "--xi", "0", "--width", "224"]);
    assert!((v["focal_px"].as_f64().unwrap() - 112.0).abs() < 1e-9);
    let text = String::from_utf8(spherecal(&["params", "--hfov-deg", "90", "--xi", "0", "--width", "224"]).stdout).unwrap();
    assert!(text.contains("focal_px 112.000000"), "{text}");
}

#[test]
fn params_pitch_and_midpoint_agree() {
    let a = ok_json(&["params", "--width", "320", "--height", "240", "--focal-px", "200", "--xi", "0.4", "--pitch-deg", "-12.5"]);
    let m = a["midpoint_units"].as_f64().unwrap().to_string();
    let b = ok_json(&["params", "--width", "320", "--height", "240", "--focal-px", "200", "--xi", "0.4", "--midpoint", &m]);
    assert!((b["pitch_deg"].as_f64().unwrap() + 12.5).abs() < 1e-9);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["params", "--width", "224", "--hfov-deg", "90"]), 2);
    assert_eq!(code(&["params", "--width", "224", "--hfov-deg", "190", "--xi", "0"]), 2);
    assert_eq!(code(&["params", "--nonsense"]), 2);
    assert_eq!(code(&["undistort", "--input", "/nonexistent/in.png", "--xi", "0", "--focal-px", "10", "--out", "/tmp/x.png"]), 1);
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.png");
    Image::new(16, 16, 1).save_png(&img, BitDepth::Eight).unwrap();
    let out = dir.path().join("out.png");
    assert_eq!(
        code(&["undistort", "--input", s(&img), "--xi", "0.5", "--focal-px", "10", "--target-hfov-deg", "180", "--out", s(&out)]),
        2
    );
    assert!(!out.exists());
}

#[test]
fn undistort_pinhole_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let output = dir.path().join("out.png");
    let img = Image::from_fn(64, 48, 3, |x, y, c| ((x * 7 + y * 13 + c * 29) % 256) as f32 / 255.0);
    img.save_png(&input, BitDepth::Eight).unwrap();
    ok_json(&["undistort", "--input", s(&input), "--xi", "0", "--focal-px", "55", "--out", s(&output)]);
    let back = Image::load_png(&output).unwrap();
    assert_eq!((back.width(), back.height(), back.channels()), (64, 48, 3));
    for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn undistort_sixteen_bit_and_target_fov() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let output = dir.path().join("out.png");
    Image::filled(40, 30, 1, 0.25).save_png(&input, BitDepth::Eight).unwrap();
    let v = ok_json(&[
        "undistort", "--input", s(&input), "--xi", "0.8", "--hfov-deg", "150", "--target-hfov-deg", "90", "--target-width", "50",
        "--out", s(&output), "--bit-depth", "16",
    ]);
    assert!((v["target_focal_px"].as_f64().unwrap() - 25.0).abs() < 1e-9);
    assert_eq!(image::open(&output).unwrap().color(), image::ColorType::L16);
}

#[test]
fn dataset_generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let panos = dir.path().join("panos");
    write_panos(&panos, 3);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let v = ok_json(&["dataset", "generate", "--panos", s(&panos), "--out", s(&out), "--count", "10", "--seed", "7"]);
        assert_eq!(v["records"], 10);
        std::fs::read(out.join("manifest.jsonl")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 10);
}

#[test]
fn dataset_config_overrides_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let panos = dir.path().join("panos");
    write_panos(&panos, 1);
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"output_size": [32, 24], "render_height": 48}"#).unwrap();
    let out = dir.path().join("out");
    let run = Command::new(env!("CARGO_BIN_EXE_spherecal"))
        .args(["dataset", "generate", "--panos", s(&panos), "--out", s(&out), "--count", "3", "--config", s(&config)])
        .env("CALIB_THREADS", "2")
        .output()
        .unwrap();
    assert!(run.status.success());
    let crop = Image::load_png(out.join("crops/0000000.png")).unwrap();
    assert_eq!((crop.width(), crop.height()), (32, 24));

    std::fs::write(&config, r#"{"output_sise": [32, 24]}"#).unwrap();
    assert_eq!(
        code(&["dataset", "generate", "--panos", s(&panos), "--out", s(&out), "--count", "1", "--config", s(&config)]),
        1
    );
    let defaults: Value = serde_json::from_slice(&spherecal(&["dataset", "config"]).stdout).unwrap();
    assert_eq!(defaults["crops_per_pano"], 7);
}

#[test]
fn horizon_subcommands() {
    let v = ok_json(&["horizon", "endpoints", "--width", "224", "--height", "224", "--xi", "0", "--focal-px", "112"]);
    assert!(v["v_left"].as_f64().unwrap().abs() < 1e-12);
    assert!(v["v_right"].as_f64().unwrap().abs() < 1e-12);
    let tilted = ok_json(&[
        "horizon", "endpoints", "--width", "224", "--height", "224", "--xi", "0", "--focal-px", "112", "--roll-deg", "-10",
    ]);
    assert!(tilted["v_left"].as_f64().unwrap() < 0.0 && tilted["v_right"].as_f64().unwrap() > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let drawn = dir.path().join("drawn.png");
    Image::new(64, 48, 3).save_png(&input, BitDepth::Eight).unwrap();
    ok_json(&[
        "horizon", "draw", "--input", s(&input), "--out", s(&drawn), "--xi", "0.5", "--hfov-deg", "120", "--pitch-deg", "5",
        "--color", "0,1,0",
    ]);
    let img = Image::load_png(&drawn).unwrap();
    assert!((0..48).any(|y| img.get(32, y, 1) > 0.5));
    assert!((0..48).all(|y| img.get(32, y, 0) == 0.0));

    let panos = dir.path().join("panos");
    write_panos(&panos, 2);
    let data = dir.path().join("data");
    ok_json(&["dataset", "generate", "--panos", s(&panos), "--out", s(&data), "--count", "12", "--seed", "3"]);
    let manifest = data.join("manifest.jsonl");
    let index = dir.path().join("index.jsonl");
    let built = ok_json(&["horizon", "index", "--manifest", s(&manifest), "--out", s(&index)]);
    let n = built["indexed"].as_u64().unwrap();
    assert!(n > 0);
    let m = ok_json(&["horizon", "retrieve", "--index", s(&index), "--v-left", "0.1", "--v-right", "-0.2", "--k", "3"]);
    let matches = m["matches"].as_array().unwrap();
    assert_eq!(matches.len(), 3.min(n as usize));
    let d: Vec<f64> = matches.iter().map(|x| x["distance"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
    let via_manifest = ok_json(&[
        "horizon", "retrieve", "--manifest", s(&manifest), "--width", "224", "--height", "224", "--xi", "0.2", "--hfov-deg", "80",
        "--k", "2",
    ]);
    assert_eq!(via_manifest["matches"].as_array().unwrap().len(), 2.min(n as usize));
    assert_eq!(code(&["horizon", "retrieve", "--index", s(&index)]), 2);
}

#[test]
fn perceptual_fit_eval_score() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("judgments.csv");
    let surface = dir.path().join("surface.json");
    let ((vlo, vhi), (elo, ehi)) = Parameter::Roll.default_ranges();
    let mut records = Vec::new();
    for i in 0..7 {
        for j in 0..7 {
            let v = vlo + (i as f64 + 0.5) * (vhi - vlo) / 7.0;
            let e = elo + (j as f64 + 0.5) * (ehi - elo) / 7.0;
            for k in 0..10 {
                let chose = k < 5 + (j - 3i32).unsigned_abs() as usize;
                records.push(JudgmentRecord::single(Parameter::Roll, v, e, chose, format!("im{k}")));
            }
        }
    }
    write_csv(&csv, &records).unwrap();
    let fit = ok_json(&["perceptual", "fit", "--csv", s(&csv), "--surface", s(&surface)]);
    assert_eq!(fit["unmasked_cells"]["roll"], 49);

    let at_zero = ok_json(&["perceptual", "eval", "--surface", s(&surface), "--parameter", "roll", "--gt-value", "0", "--error", "0"]);
    assert!((at_zero["value"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert_eq!(at_zero["degraded"], false);
    let far = ok_json(&["perceptual", "eval", "--surface", s(&surface), "--parameter", "roll", "--gt-value", "0", "--error", "-30"]);
    assert!((far["value"].as_f64().unwrap() - 0.8).abs() < 1e-9);

    let estimates = dir.path().join("estimates.csv");
    std::fs::write(&estimates, "parameter,gt_value,estimate\nroll,0.1,0.1\nroll,-0.2,-0.2\nroll,0.05,0.05\n").unwrap();
    let score = ok_json(&["perceptual", "score", "--csv", s(&estimates), "--surface", s(&surface)]);
    assert!((score["roll"]["median"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert_eq!(score["roll"]["count"], 3);

    std::fs::write(&estimates, "parameter,gt_value,estimate\npitch,0.1,0.1\n").unwrap();
    assert_eq!(code(&["perceptual", "score", "--csv", s(&estimates), "--surface", s(&surface)]), 1);
    assert_eq!(
        code(&["perceptual", "eval", "--surface", s(&surface), "--parameter", "yaw", "--gt-value", "0", "--error", "0"]),
        2
    );
}

#[test]
fn bins_export_and_encode() {
    let dir = tempfile::tempdir().unwrap();
    let bins = dir.path().join("bins.json");
    let v = ok_json(&["bins", "export", "--out", s(&bins)]);
    assert_eq!((v["roll"].as_u64(), v["xi"].as_u64()), (Some(198), Some(256)));

    let panos = dir.path().join("panos");
    write_panos(&panos, 1);
    let data = dir.path().join("data");
    ok_json(&["dataset", "generate", "--panos", s(&panos), "--out", s(&data), "--count", "4"]);
    let targets = dir.path().join("targets.jsonl");
    let enc = ok_json(&[
        "bins", "encode", "--manifest", s(&data.join("manifest.jsonl")), "--bins", s(&bins), "--out", s(&targets),
    ]);
    assert_eq!(enc["records"], 4);
    let text = std::fs::read_to_string(&targets).unwrap();
    assert_eq!(text.lines().count(), 4);
}
