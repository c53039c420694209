use std::collections::BTreeMap;
use std::path::PathBuf;

use rarespot_core::annotations::{read_annotations, read_detections};
use rarespot_core::io::{load_rgb, read_manifest, sibling_with_ext, stem, write_json};
use rarespot_core::mining::{extract_patches, match_detections, write_patch_dir, ExtractOptions, Patch};
use serde::Serialize;

use super::{par_map, show, write_dir_config};
use crate::config::{need, MineSection, RunConfig};
use crate::error::{invalid, CliResult};

#[derive(Serialize)]
struct ImageMining {
    image: String,
    detections: usize,
    ground_truth: usize,
    true_positives: usize,
    false_positives: usize,
    false_negatives: usize,
    patches: usize,
}

#[derive(Serialize)]
struct MineReport {
    iou_threshold: f64,
    pad: u32,
    include_fp: bool,
    images: Vec<ImageMining>,
    true_positives: usize,
    false_positives: usize,
    false_negatives: usize,
    patches_by_origin: BTreeMap<String, usize>,
    images_without_detections: Vec<String>,
}

pub fn run(cfg: MineSection, seed: u64) -> CliResult<()> {
    let images = read_manifest(need(&cfg.images, "images")?)?;
    let dets = read_manifest(need(&cfg.dets, "dets")?)?;
    let out = need(&cfg.out, "out")?;
    let iou = cfg.iou.unwrap_or(0.5);
    if !(iou > 0.0 && iou <= 1.0) {
        return invalid(format!("--iou must be in (0, 1], got {iou}"));
    }
    let opts = ExtractOptions {
        pad: cfg.pad.unwrap_or(4),
        include_fp: cfg.include_fp.unwrap_or(true),
    };
    let mut by_stem: BTreeMap<String, PathBuf> = BTreeMap::new();
    for d in dets {
        if let Some(prev) = by_stem.insert(stem(&d), d.clone()) {
            return invalid(format!("detection files {} and {} share a stem", show(&prev), show(&d)));
        }
    }

    let results: Vec<(ImageMining, Vec<Patch>, bool)> = par_map(&images, |_, img_path| {
        let img = load_rgb(img_path)?;
        let (w, h) = img.dimensions();
        let name = stem(img_path);
        let gt_path = sibling_with_ext(img_path, "txt");
        let gts = if gt_path.exists() { read_annotations(&gt_path, w, h)? } else { Vec::new() };
        let (dets, found) = match by_stem.get(&name) {
            Some(p) => (read_detections(p, w, h)?, true),
            None => (Vec::new(), false),
        };
        let m = match_detections(&dets, &gts, iou);
        let patches = extract_patches(&img, &m, &gts, &name, &opts);
        let summary = ImageMining {
            image: show(img_path),
            detections: dets.len(),
            ground_truth: gts.len(),
            true_positives: m.true_positives.len(),
            false_positives: m.false_positives.len(),
            false_negatives: m.false_negatives.len(),
            patches: patches.len(),
        };
        Ok((summary, patches, found))
    })?;

    let mut patches = Vec::new();
    let mut summaries = Vec::new();
    let mut missing = Vec::new();
    for (s, p, found) in results {
        if !found {
            log::warn!("{}: no detection file, every ground-truth box is a miss", s.image);
            missing.push(s.image.clone());
        }
        patches.extend(p);
        summaries.push(s);
    }
    let index = write_patch_dir(&out, &patches)?;
    let mut by_origin = BTreeMap::new();
    for e in &index {
        *by_origin.entry(e.origin.to_string()).or_insert(0) += 1;
    }
    let report = MineReport {
        iou_threshold: iou,
        pad: opts.pad,
        include_fp: opts.include_fp,
        true_positives: summaries.iter().map(|s| s.true_positives).sum(),
        false_positives: summaries.iter().map(|s| s.false_positives).sum(),
        false_negatives: summaries.iter().map(|s| s.false_negatives).sum(),
        images: summaries,
        patches_by_origin: by_origin,
        images_without_detections: missing,
    };
    write_json(out.join("mine_report.json"), &report)?;
    log::info!(
        "{} patches (TP {}, FP {}, FN {})",
        index.len(),
        report.true_positives,
        report.false_positives,
        report.false_negatives
    );
    write_dir_config(
        &out,
        &RunConfig {
            master_seed: Some(seed),
            mine: cfg,
            ..Default::default()
        },
    )
}
