use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rarespot_core::annotations::write_annotations;
use rarespot_core::augment::{augment_batch, AugmentSettings, BatchSpec, PlacementRecord, SkipRecord};
use rarespot_core::io::{load_rgb, read_manifest, save_png, sibling_with_ext, write_json, write_manifest};
use rarespot_core::mining::read_patch_dir;
use rarespot_core::placement::PlacementPolicy;
use rarespot_core::poisson::BlendOptions;
use rarespot_core::transform::ThetaRanges;
use serde::Serialize;

use super::{file_name, make_dir, par_map, show, write_dir_config};
use crate::config::{need, AugmentSection, RunConfig};
use crate::error::CliResult;

#[derive(Serialize)]
struct ImageRecord {
    file: String,
    background: String,
    annotations: usize,
    placements: Vec<PlacementRecord>,
    skips: Vec<SkipRecord>,
}

#[derive(Serialize)]
struct AugmentReport {
    images: usize,
    backgrounds_available: usize,
    backgrounds_excluded: Vec<String>,
    with_replacement: bool,
    patches: usize,
    placements: usize,
    skips: usize,
    annotations: usize,
    placements_by_label: BTreeMap<String, usize>,
    placements_by_origin: BTreeMap<String, usize>,
    records: Vec<ImageRecord>,
}

fn settings(cfg: &AugmentSection) -> AugmentSettings {
    let d = AugmentSettings::default();
    let r = |v: Option<crate::config::Range>, d: (f64, f64)| v.map_or(d, Into::into);
    AugmentSettings {
        policy: PlacementPolicy {
            dirt_fraction: cfg.dirt_fraction.unwrap_or(d.policy.dirt_fraction),
            max_attempts: cfg.max_attempts.unwrap_or(d.policy.max_attempts),
            min_separation_iou: cfg.min_separation_iou.unwrap_or(d.policy.min_separation_iou),
            min_target_fraction: cfg.min_target_fraction.unwrap_or(d.policy.min_target_fraction),
        },
        theta: ThetaRanges {
            scale: r(cfg.scale, d.theta.scale),
            rotation_deg: r(cfg.rotation, d.theta.rotation_deg),
            brightness_delta: r(cfg.brightness, d.theta.brightness_delta),
            contrast_gain: r(cfg.contrast, d.theta.contrast_gain),
        },
        blend: BlendOptions {
            tolerance: cfg.blend_tolerance.unwrap_or(d.blend.tolerance),
            max_iterations: cfg.blend_max_iterations.unwrap_or(d.blend.max_iterations),
        },
    }
}

pub fn run(cfg: AugmentSection, seed: u64) -> CliResult<()> {
    let patch_dir = need(&cfg.patches, "patches")?;
    let out = need(&cfg.out, "out")?;
    let settings = settings(&cfg);
    settings.validate()?;
    let patches = read_patch_dir(&patch_dir)?;

    // a background with any annotation would hide real objects among the pasted ones
    let mut usable = Vec::new();
    let mut excluded = Vec::new();
    for p in read_manifest(need(&cfg.backgrounds, "backgrounds")?)? {
        let ann = sibling_with_ext(&p, "txt");
        let has_objects = ann.exists()
            && std::fs::read_to_string(&ann)
                .map_err(|e| crate::error::CliError::io(&ann, e))?
                .lines()
                .any(|l| !l.trim().is_empty());
        if has_objects {
            log::warn!("{}: has annotations, not used as a background", show(&p));
            excluded.push(show(&p));
        } else {
            usable.push(p);
        }
    }
    let backgrounds = par_map(&usable, |_, p| Ok(load_rgb(p)?))?;

    // one augmented image per distinct source image of the mined patches
    let sources: BTreeSet<&str> = patches.iter().map(|p| p.source_image.as_str()).collect();
    let spec = BatchSpec {
        num_images: cfg.num_images.unwrap_or(sources.len()),
        patches_per_image: cfg.patches_per_image.unwrap_or(8),
        settings,
        hsv: cfg.hsv.thresholds(),
    };
    let batch = augment_batch(&patches, &backgrounds, &spec, seed)?;

    make_dir(&out)?;
    let files: Vec<PathBuf> = par_map(&batch.images, |_, b| {
        let png = out.join(format!("aug_{:05}.png", b.index));
        let (w, h) = b.outcome.image.dimensions();
        save_png(&b.outcome.image, &png)?;
        write_annotations(sibling_with_ext(&png, "txt"), &b.outcome.annotations, w, h)?;
        Ok(png)
    })?;
    write_manifest(out.join("manifest.txt"), &files)?;

    let mut by_label = BTreeMap::new();
    let mut by_origin = BTreeMap::new();
    let mut records = Vec::with_capacity(batch.images.len());
    for (b, f) in batch.images.into_iter().zip(&files) {
        for p in &b.outcome.placements {
            *by_label.entry(p.label.to_string()).or_insert(0) += 1;
            *by_origin.entry(p.origin.to_string()).or_insert(0) += 1;
        }
        records.push(ImageRecord {
            file: show(&file_name(f)),
            background: show(&usable[b.background]),
            annotations: b.outcome.annotations.len(),
            placements: b.outcome.placements,
            skips: b.outcome.skips,
        });
    }
    let report = AugmentReport {
        images: records.len(),
        backgrounds_available: usable.len(),
        backgrounds_excluded: excluded,
        with_replacement: batch.with_replacement,
        patches: patches.len(),
        placements: records.iter().map(|r| r.placements.len()).sum(),
        skips: records.iter().map(|r| r.skips.len()).sum(),
        annotations: records.iter().map(|r| r.annotations).sum(),
        placements_by_label: by_label,
        placements_by_origin: by_origin,
        records,
    };
    write_json(out.join("augment_report.json"), &report)?;
    log::info!("{} images, {} placements, {} skipped", report.images, report.placements, report.skips);
    write_dir_config(
        &out,
        &RunConfig {
            master_seed: Some(seed),
            augment: cfg,
            ..Default::default()
        },
    )
}
