use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::RunConfig;
use crate::dataset::{
    apply_normalization, extract_chips, fit_normalization, rasterize_mask, read_catalog, split_assignment,
    split_dataset, stack_bands, write_catalog, BandSpec, Chip, NormalizationStats, SplitName, SynthConfig,
};
use crate::detect::{
    export_geojson, extract_detections, filter_detections, predict_raster, read_detections, threshold_probability,
};
use crate::error::{Error, Result};
use crate::geodata::{read_annotations, read_raster, write_annotations, write_raster, Raster};
use crate::grid::Mask;
use crate::rng;
use crate::training::{ablate, evaluate, train};
use crate::unet::{build_unet, load_checkpoint, save_checkpoint, Checkpoint};
use crate::util::write_atomic;

pub const SYNTH_MANIFEST: &str = "manifest.json";
const NORMALIZATION_FILE: &str = "normalization.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub raster: String,
    pub annotations: String,
    pub dump_count: usize,
    pub dump_area_m2: f64,
}

/// Index written next to synthetic scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub scene_size: usize,
    pub scenes: Vec<SceneEntry>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} not found: {}", path.display())))
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<Value> {
    let dir = &cfg.paths.scenes_dir;
    let mut entries = Vec::with_capacity(cfg.scene_count);
    for i in 0..cfg.scene_count {
        let sc = SynthConfig {
            background_texture_seed: rng::derive_seed(cfg.seed, rng::SYNTH, i as u64)
                ^ cfg.synth.background_texture_seed,
            ..cfg.synth.clone()
        };
        let scene = crate::dataset::generate_synthetic(&sc)?;
        let stem = format!("scene_{i:03}");
        let raster_path = dir.join(format!("{stem}.json"));
        let ann_path = dir.join(format!("{stem}.geojson"));
        write_raster(&scene.raster, &raster_path)?;
        write_annotations(&scene.annotations, &ann_path)?;
        if !read_raster(&raster_path)?.bit_eq(&scene.raster)
            || read_annotations(&ann_path)?.polygons != scene.annotations
        {
            return Err(Error::CorruptPayload(format!("{stem} did not read back identically")));
        }
        info!("wrote {} with {} dumps", raster_path.display(), scene.annotations.len());
        entries.push(SceneEntry {
            raster: format!("{stem}.json"),
            annotations: format!("{stem}.geojson"),
            dump_count: scene.annotations.len(),
            dump_area_m2: scene.annotations.iter().map(|p| p.area()).sum(),
        });
    }
    let manifest = SynthManifest {
        seed: cfg.seed,
        scene_size: cfg.synth.scene_size,
        scenes: entries,
    };
    write_json(&dir.join(SYNTH_MANIFEST), &manifest)?;
    Ok(json!({
        "command": "synth",
        "scenes_dir": dir,
        "scene_count": manifest.scenes.len(),
        "scene_size": manifest.scene_size,
        "dump_count": manifest.scenes.iter().map(|s| s.dump_count).sum::<usize>(),
    }))
}

/// `(raster header, annotation file)` pairs named by the config.
fn scene_list(cfg: &RunConfig) -> Result<Vec<(PathBuf, PathBuf)>> {
    let pairs: Vec<(PathBuf, PathBuf)> = if cfg.paths.scenes.is_empty() {
        let path = cfg.paths.scenes_dir.join(SYNTH_MANIFEST);
        require_file(&path, "scene manifest")?;
        let manifest: SynthManifest = serde_json::from_slice(&std::fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        manifest
            .scenes
            .iter()
            .map(|s| {
                (
                    cfg.paths.scenes_dir.join(&s.raster),
                    cfg.paths.scenes_dir.join(&s.annotations),
                )
            })
            .collect()
    } else {
        cfg.paths
            .scenes
            .iter()
            .map(|p| (p.clone(), p.with_extension("geojson")))
            .collect()
    };
    for (r, a) in &pairs {
        require_file(r, "scene raster")?;
        require_file(a, "scene annotations")?;
    }
    Ok(pairs)
}

fn load_scene(raster: &Path, annotations: &Path) -> Result<(Raster, Mask, String)> {
    let image = read_raster(raster)?;
    let ann = read_annotations(annotations)?;
    let mask = rasterize_mask(&ann.polygons, &image.transform, image.width(), image.height());
    let name = raster
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((image, mask, name))
}

/// Chips from every configured scene, with the bands of `spec` (raw bands if `None`).
fn scene_chips(cfg: &RunConfig, spec: Option<&BandSpec>) -> Result<Vec<Chip>> {
    let mut chips = Vec::new();
    for (i, (r, a)) in scene_list(cfg)?.iter().enumerate() {
        let (image, mask, name) = load_scene(r, a)?;
        let image = match spec {
            Some(s) => stack_bands(&image, s)?,
            None => image,
        };
        let seed = rng::derive_seed(cfg.seed, rng::CHIP, i as u64);
        chips.extend(extract_chips(&image, &mask, &cfg.chip, seed, &name)?);
    }
    Ok(chips)
}

pub fn cmd_chip(cfg: &RunConfig) -> Result<Value> {
    let chips = scene_chips(cfg, Some(&cfg.bands))?;
    let positive = chips.iter().filter(|c| c.is_positive()).count();
    if positive == 0 {
        warn!("no positive chips were found");
    }
    let assignment = if chips.is_empty() {
        warn!("chip catalog is empty");
        Vec::new()
    } else {
        split_assignment(chips.len(), cfg.split.test_fraction, cfg.split.val_fraction, cfg.seed)?
    };
    let dir = &cfg.paths.catalog_dir;
    let index = write_catalog(dir, &chips, &assignment, cfg.seed)?;
    let train: Vec<Chip> = chips
        .iter()
        .zip(&assignment)
        .filter(|(_, s)| **s == SplitName::Train)
        .map(|(c, _)| c.clone())
        .collect();
    if !train.is_empty() {
        fit_normalization(&train)?.save(&dir.join(NORMALIZATION_FILE))?;
    }
    if read_catalog(dir)?.index != index {
        return Err(Error::CorruptPayload(
            "catalog index did not read back identically".into(),
        ));
    }
    let count = |s: SplitName| assignment.iter().filter(|&&a| a == s).count();
    Ok(json!({
        "command": "chip",
        "catalog_dir": dir,
        "chips": chips.len(),
        "positive": positive,
        "negative": chips.len() - positive,
        "train": count(SplitName::Train),
        "val": count(SplitName::Val),
        "test": count(SplitName::Test),
    }))
}

fn normalize(chips: &[Chip], stats: &NormalizationStats) -> Result<Vec<Chip>> {
    chips.iter().map(|c| apply_normalization(c, stats)).collect()
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Value> {
    let dir = &cfg.paths.catalog_dir;
    let catalog = read_catalog(dir)?;
    if catalog.chips.is_empty() {
        return Err(Error::Empty(format!("chip catalog {} has no chips", dir.display())));
    }
    if catalog.index.band_names != cfg.bands.names() {
        return Err(Error::config(
            "bands",
            format!(
                "catalog has {:?}, config asks for {:?}",
                catalog.index.band_names,
                cfg.bands.names()
            ),
        ));
    }
    let mut split = catalog.split();
    let norm_path = dir.join(NORMALIZATION_FILE);
    let stats = if norm_path.is_file() {
        NormalizationStats::load(&norm_path)?
    } else {
        fit_normalization(&split.train)?
    };
    split.train = normalize(&split.train, &stats)?;
    split.val = normalize(&split.val, &stats)?;
    split.test = normalize(&split.test, &stats)?;
    info!(
        "training on {} chips ({} val, {} test)",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let params = build_unet(&cfg.model, cfg.seed)?;
    let (params, report) = train(params, &cfg.model, &split, &cfg.train)?;
    let best = &report.epochs[report.best_epoch - 1];
    let ckpt = Checkpoint {
        config: cfg.model,
        parameters: params,
        normalization: stats,
        pos_weight: report.pos_weight,
        metadata: json!({
            "seed": cfg.seed,
            "hyperparams": cfg.train,
            "epochs_run": report.stopping_epoch,
            "best_epoch": report.best_epoch,
            "best_val_loss": best.val_loss,
            "best_val_mean_iou": best.val_mean_iou,
            "test": report.test,
        }),
    };
    save_checkpoint(&cfg.paths.checkpoint, &ckpt)?;
    if load_checkpoint(&cfg.paths.checkpoint)? != ckpt {
        return Err(Error::CorruptPayload("checkpoint did not read back identically".into()));
    }
    write_json(&cfg.paths.train_report, &report)?;
    write_atomic(
        &cfg.paths.train_report.with_extension("txt"),
        report.to_text().as_bytes(),
    )?;
    info!("\n{}", report.to_text());
    Ok(json!({
        "command": "train",
        "checkpoint": cfg.paths.checkpoint,
        "epochs_run": report.stopping_epoch,
        "best_epoch": report.best_epoch,
        "pos_weight": report.pos_weight,
        "val_loss": best.val_loss,
        "val_mean_iou": best.val_mean_iou,
        "test_loss": report.test.as_ref().map(|m| m.loss),
        "test_mean_iou": report.test.as_ref().map(|m| m.mean_iou),
    }))
}

fn load_ckpt(cfg: &RunConfig) -> Result<Checkpoint> {
    require_file(&cfg.paths.checkpoint, "checkpoint")?;
    load_checkpoint(&cfg.paths.checkpoint)
}

pub fn cmd_evaluate(cfg: &RunConfig, which: SplitName, threshold: f64) -> Result<Value> {
    let ckpt = load_ckpt(cfg)?;
    let catalog = read_catalog(&cfg.paths.catalog_dir)?;
    if catalog.index.band_names != ckpt.band_names() {
        return Err(Error::SchemaMismatch(format!(
            "band mismatch: checkpoint uses {:?}, catalog has {:?}",
            ckpt.band_names(),
            catalog.index.band_names
        )));
    }
    let split = catalog.split();
    let chips = match which {
        SplitName::Train => split.train,
        SplitName::Val => split.val,
        SplitName::Test => split.test,
    };
    let chips = normalize(&chips, &ckpt.normalization)?;
    let metrics = evaluate(&ckpt.parameters, &ckpt.config, &chips, threshold, ckpt.pos_weight)?;
    write_json(&cfg.paths.metrics, &metrics)?;
    Ok(json!({
        "command": "evaluate",
        "split": which,
        "chips": chips.len(),
        "threshold": threshold,
        "loss": metrics.loss,
        "mean_iou": metrics.mean_iou,
        "per_chip_iou": metrics.per_chip_iou,
    }))
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<Value> {
    let ckpt = load_ckpt(cfg)?;
    let input = cfg
        .paths
        .predict_input
        .as_ref()
        .ok_or_else(|| Error::config("paths.predict_input", "no input raster given (use --input)"))?;
    require_file(input, "input raster")?;
    let raster = read_raster(input)?;
    let prob = predict_raster(
        &ckpt.parameters,
        &ckpt.config,
        &raster,
        &ckpt.normalization,
        &cfg.inference,
    )?;
    write_raster(&prob, &cfg.paths.probability)?;
    if !read_raster(&cfg.paths.probability)?.bit_eq(&prob) {
        return Err(Error::CorruptPayload(
            "probability raster did not read back identically".into(),
        ));
    }
    let above = threshold_probability(&prob, cfg.postprocess.probability_threshold)?.count_ones();
    Ok(json!({
        "command": "predict",
        "probability": cfg.paths.probability,
        "width": prob.width(),
        "height": prob.height(),
        "threshold": cfg.postprocess.probability_threshold,
        "pixels_above_threshold": above,
    }))
}

pub fn cmd_postprocess(cfg: &RunConfig) -> Result<Value> {
    require_file(&cfg.paths.probability, "probability raster")?;
    let prob = read_raster(&cfg.paths.probability)?;
    let (mask, dets) = extract_detections(&prob, &cfg.postprocess)?;
    let found = dets.len();
    let kept = filter_detections(dets, &cfg.postprocess);
    export_geojson(&kept, &cfg.paths.detections)?;
    if read_detections(&cfg.paths.detections)? != kept {
        return Err(Error::CorruptPayload("detections did not read back identically".into()));
    }
    Ok(json!({
        "command": "postprocess",
        "detections_path": cfg.paths.detections,
        "pixels_above_threshold": mask.count_ones(),
        "regions": found,
        "detections": kept.len(),
        "total_area_m2": kept.iter().map(|d| d.area_m2).sum::<f64>(),
    }))
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<Value> {
    let chips = scene_chips(cfg, None)?;
    let split = split_dataset(chips, cfg.split.test_fraction, cfg.split.val_fraction, cfg.seed)?;
    let specs = BandSpec::ablation_presets();
    let (table, reports) = ablate(&split, &specs, &cfg.model, &cfg.train)?;
    let dir = &cfg.paths.ablation_dir;
    write_json(&dir.join("ablation.json"), &table)?;
    write_atomic(&dir.join("ablation.txt"), table.to_text().as_bytes())?;
    write_json(&dir.join("reports.json"), &reports)?;
    info!("\n{}", table.to_text());
    Ok(json!({
        "command": "ablate",
        "ablation_dir": dir,
        "evaluated_on": table.evaluated_on,
        "rows": table.rows,
    }))
}
