use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL_SPEC: &str = r#"{
    "n_lines": 6,
    "plants_per_line": 14,
    "width": 700,
    "height": 700,
    "origin": [1000.0, 2003.5],
    "days": [0, 14, 28, 42]
}"#;

fn plantcat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plantcat")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = plantcat(args);
    assert!(
        out.status.success(),
        "plantcat {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_small(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, SMALL_SPEC).unwrap();
    let data = dir.join("data");
    ok(&["synth", "--spec", s(&spec), "--seed", "7", "--out", s(&data)]);
    data
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_then_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path());
    for name in ["truth.geojson", "injected_transforms.json", "pipeline.toml", "date_2024-05-01.png", "date_2024-05-01.pgw"] {
        assert!(data.join(name).exists(), "{name}");
    }
    let config = data.join("pipeline.toml");
    let stdout = ok(&["run", "--config", s(&config), "--jobs", "2"]);
    assert!(stdout.contains("plants on 6 lines"), "{stdout}");

    let run = data.join("run");
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["jobs"], 2);
    assert_eq!(manifest["dates"].as_array().unwrap().len(), 4);
    let eval = json(&run.join("eval.json"));
    assert!(eval["mean_precision"].as_f64().unwrap() > 0.9);
    assert!(eval["mean_recall"].as_f64().unwrap() > 0.9);
    assert!(std::fs::read_dir(run.join("tiles")).unwrap().count() > 0);

    // A rerun changes only the clock readings.
    let strip = |mut m: Value| {
        let obj = m.as_object_mut().unwrap();
        for key in ["started", "finished", "timings"] {
            assert!(obj.remove(key).is_some(), "{key}");
        }
        m
    };
    ok(&["run", "--config", s(&config), "--jobs", "2"]);
    assert_eq!(strip(json(&run.join("manifest.json"))), strip(manifest));
}

#[test]
fn stage_commands_reproduce_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path());
    let config = data.join("pipeline.toml");
    let cfg = s(&config);
    ok(&["run", "--config", cfg, "--out", s(&dir.path().join("reference"))]);

    let work = dir.path().join("stages");
    let dates = ["2024-05-01", "2024-05-15", "2024-05-29", "2024-06-12"];
    let mut stats = Vec::new();
    let mut peaks = Vec::new();
    for date in dates {
        let input = data.join(format!("date_{date}.png"));
        let mask = work.join(format!("masks/{date}.png"));
        let stat = work.join(format!("stats/{date}.json"));
        ok(&["segment", "--config", cfg, "--input", s(&input), "--out", s(&mask), "--stats", s(&stat)]);
        let st = json(&stat);
        assert_eq!(st["date"], date);
        assert_eq!(st["vi_kind"], "gli");
        if st["usable"].as_bool().unwrap() {
            let cover = st["cover_ratio"].to_string();
            let peak = work.join(format!("peaks/{date}.json"));
            ok(&["detect", "--config", cfg, "--mask", s(&mask), "--cover", &cover, "--out", s(&peak)]);
            peaks.push(peak);
        }
        stats.push(stat);
    }
    assert!(!peaks.is_empty());

    let growth = work.join("growth.json");
    let mut args = vec!["fit-growth", "--out", s(&growth), "--stats"];
    args.extend(stats.iter().map(|p| s(p)));
    ok(&args);
    assert!(json(&growth)["fit"]["params"]["g"].as_f64().unwrap() > 0.0);

    let aligned = work.join("aligned.json");
    let transforms = work.join("transforms.json");
    let mut args = vec!["align", "--config", cfg, "--out", s(&aligned), "--transforms", s(&transforms), "--peaks"];
    args.extend(peaks.iter().map(|p| s(p)));
    ok(&args);

    let lines = work.join("lines.json");
    ok(&["lines", "--config", cfg, "--aligned", s(&aligned), "--out", s(&lines), "--theta-d", "0.2"]);
    let l = json(&lines);
    assert_eq!(l["y_star"].as_array().unwrap().len(), 6);
    assert!(l["alpha_s_deg"].is_f64());
    assert_eq!(l["weed_mask"].as_array().unwrap().len(), peaks.len());

    let cat_dir = work.join("catalog");
    ok(&[
        "catalog", "--config", cfg, "--aligned", s(&aligned), "--transforms", s(&transforms), "--lines", s(&lines), "--out",
        s(&cat_dir),
    ]);
    let reference = dir.path().join("reference");
    for name in ["catalog.json", "catalog.csv", "catalog.geojson", "catalog.kml"] {
        assert_eq!(
            std::fs::read(cat_dir.join(name)).unwrap(),
            std::fs::read(reference.join(name)).unwrap(),
            "{name}"
        );
    }

    let tiles = work.join("tiles");
    let input = format!("2024-05-15={}", s(&data.join("date_2024-05-15.png")));
    let stdout = ok(&["extract", "--catalog", s(&cat_dir.join("catalog.json")), "--input", &input, "--frame", "32", "--out", s(&tiles)]);
    let n_plants = json(&cat_dir.join("catalog.json"))["plants"].as_array().unwrap().len();
    assert!(stdout.starts_with(&format!("{n_plants} tiles")), "{stdout}");

    let report = work.join("report.csv");
    ok(&[
        "eval", "--catalog", s(&cat_dir.join("catalog.json")), "--truth", s(&data.join("truth.geojson")), "--tolerance", "0.08",
        "--out", s(&report),
    ]);
    assert_eq!(json(&work.join("report.json")), json(&reference.join("eval.json")));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path());
    let text = std::fs::read_to_string(data.join("pipeline.toml")).unwrap();
    let bad = data.join("bad.toml");
    std::fs::write(&bad, text.replace("[align]", "[align]\nd_group = 0.5")).unwrap();
    let out = plantcat(&["run", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_group"));

    assert_eq!(plantcat(&["run"]).status.code(), Some(2));
    assert_eq!(plantcat(&["segment", "--input", "nope.png", "--out", "m.png", "--stats", "s.json"]).status.code(), Some(2));
    assert_eq!(plantcat(&["lines", "--bogus"]).status.code(), Some(2));
    let spec = dir.path().join("typo.json");
    std::fs::write(&spec, r#"{"n_line": 3}"#).unwrap();
    assert_eq!(plantcat(&["synth", "--spec", s(&spec), "--out", s(&dir.path().join("x"))]).status.code(), Some(2));
}

#[test]
fn stage_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let mask = dir.path().join("mask_2024-05-01.png");
    std::fs::write(&mask, b"not a png").unwrap();
    let out = plantcat(&[
        "detect", "--mask", s(&mask), "--cover", "0.1", "--sigma-min", "2", "--sigma-max", "15", "--min-distance", "0.09", "--out",
        s(&dir.path().join("p.json")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("detect") && err.contains("2024-05-01"), "{err}");
}
