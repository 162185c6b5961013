use std::path::Path;

use dumpwatch::cli::run;
use dumpwatch::geodata::{read_raster, write_raster, Raster};
use serde_json::{json, Value};
use tempfile::TempDir;

fn config(dir: &Path, extra: Value) -> String {
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    let mut cfg = json!({
        "seed": 7,
        "paths": {
            "scenes_dir": p("scenes"), "catalog_dir": p("catalog"), "checkpoint": p("model/ckpt.json"),
            "train_report": p("model/report.json"), "metrics": p("model/metrics.json"),
            "probability": p("out/prob.json"), "detections": p("out/det.geojson"), "ablation_dir": p("ablation")
        },
        "synth": {"scene_size": 96, "dump_count": 4, "confuser_count": 2},
        "chip": {"chip_size": 32, "stride": 32, "negatives_per_positive": 1.0},
        "model": {"depth": 1, "base_filters": 4},
        "train": {"max_epochs": 2, "batch_size": 8},
        "inference": {"tile_size": 48, "overlap": 8}
    });
    if let (Value::Object(base), Value::Object(over)) = (&mut cfg, extra) {
        for (k, v) in over {
            match (base.get_mut(&k), v) {
                (Some(Value::Object(b)), Value::Object(o)) => b.extend(o),
                (_, v) => {
                    base.insert(k, v);
                }
            }
        }
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn cli(args: &[&str]) -> dumpwatch::Result<Value> {
    run(std::iter::once("dumpwatch").chain(args.iter().copied()))
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .flatten()
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn negative_dump_count_names_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), json!({"synth": {"dump_count": -1}}));
    let err = cli(&["synth", "--config", &cfg]).unwrap_err().to_string();
    assert!(err.contains("synth.dump_count"), "{err}");
}

#[test]
fn bad_flags_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), json!({}));
    assert!(cli(&["synth", "--config", &cfg, "--bands", ","]).is_err());
    assert!(cli(&["postprocess", "--config", &cfg, "--threshold", "1.5"]).is_err());
    assert!(cli(&["frobnicate"]).is_err());
    let missing = dir.path().join("nope.json");
    assert!(cli(&["train", "--config", missing.to_str().unwrap()]).is_err());
}

#[test]
fn synth_and_chip_are_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), json!({}));
    cli(&["synth", "--config", &cfg]).unwrap();
    cli(&["chip", "--config", &cfg]).unwrap();
    let scenes = read_all(&dir.path().join("scenes"));
    let catalog = read_all(&dir.path().join("catalog"));
    cli(&["synth", "--config", &cfg]).unwrap();
    cli(&["chip", "--config", &cfg]).unwrap();
    assert_eq!(read_all(&dir.path().join("scenes")), scenes);
    assert_eq!(read_all(&dir.path().join("catalog")), catalog);

    let other = cli(&["synth", "--config", &cfg, "--seed", "8"]).unwrap();
    assert_eq!(other["command"], "synth");
    assert_ne!(read_all(&dir.path().join("scenes")), scenes);
}

#[test]
fn scene_without_dumps_gives_empty_catalog() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        json!({"synth": {"dump_count": 0}, "chip": {"chip_size": 32, "stride": 32, "negatives_per_positive": 0.0}}),
    );
    let synth = cli(&["synth", "--config", &cfg]).unwrap();
    assert_eq!(synth["dump_count"], 0);
    let chip = cli(&["chip", "--config", &cfg]).unwrap();
    assert_eq!(chip["chips"], 0, "{chip}");
    assert!(cli(&["train", "--config", &cfg]).is_err());
}

#[test]
fn full_pipeline_on_a_tiny_scene() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), json!({}));
    assert!(cli(&["predict", "--config", &cfg, "--input", "missing.json"]).is_err());

    cli(&["synth", "--config", &cfg]).unwrap();
    let chip = cli(&["chip", "--config", &cfg]).unwrap();
    assert!(chip["positive"].as_u64().unwrap() >= 4, "{chip}");
    assert!(
        cli(&["evaluate", "--config", &cfg]).is_err(),
        "evaluate without a checkpoint"
    );

    let trained = cli(&["train", "--config", &cfg]).unwrap();
    let eval = cli(&["evaluate", "--config", &cfg, "--split", "test"]).unwrap();
    assert_eq!(eval["mean_iou"], trained["test_mean_iou"]);
    assert_eq!(eval["loss"], trained["test_loss"]);
    for t in ["0.9", "0.1"] {
        let m = cli(&["evaluate", "--config", &cfg, "--threshold", t]).unwrap();
        let iou = m["mean_iou"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&iou));
    }
    assert!(cli(&["evaluate", "--config", &cfg, "--split", "holdout"]).is_err());

    let scene = dir.path().join("scenes/scene_000.json");
    let predicted = cli(&["predict", "--config", &cfg, "--input", scene.to_str().unwrap()]).unwrap();
    assert_eq!(predicted["width"], 96);
    let post = cli(&["postprocess", "--config", &cfg, "--min-area", "0"]).unwrap();
    let none = cli(&["postprocess", "--config", &cfg, "--min-area", "1e12"]).unwrap();
    assert_eq!(none["detections"], 0);
    assert_eq!(none["regions"], post["regions"]);
    let text = std::fs::read_to_string(dir.path().join("out/det.geojson")).unwrap();
    let geo: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(geo["type"], "FeatureCollection");
    assert_eq!(geo["features"].as_array().unwrap().len(), 0);

    // The checkpoint needs SWIR bands that an RGB-only raster lacks.
    let full = read_raster(&scene).unwrap();
    let rgb = Raster::new(
        96,
        96,
        full.band_names()[..3].to_vec(),
        full.samples()[..3 * 96 * 96].to_vec(),
        full.transform,
        None,
    )
    .unwrap();
    let rgb_path = dir.path().join("rgb.json");
    write_raster(&rgb, &rgb_path).unwrap();
    let err = cli(&["predict", "--config", &cfg, "--input", rgb_path.to_str().unwrap()]).unwrap_err();
    assert!(matches!(err, dumpwatch::Error::SchemaMismatch(_)), "{err}");
}
