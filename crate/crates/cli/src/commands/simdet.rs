//! Detector stand-in: perturbed copies of a random subset of the ground
//! truth plus uniformly placed false alarms.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rarespot_core::annotations::{read_annotations, write_detections, BBox, Detection};
use rarespot_core::io::{image_dims, read_manifest, sibling_with_ext, stem, write_manifest};
use rarespot_core::rng::derive_seed;

use super::{make_dir, par_map, write_dir_config};
use crate::config::{need, RunConfig, SimdetSection};
use crate::error::{invalid, CliResult};

fn clipped(x0: f64, y0: f64, x1: f64, y1: f64, w: u32, h: u32) -> Option<BBox> {
    BBox::new(x0.max(0.0), y0.max(0.0), x1.min(w as f64), y1.min(h as f64)).ok()
}

pub fn run(cfg: SimdetSection, seed: u64) -> CliResult<()> {
    let images = read_manifest(need(&cfg.images, "images")?)?;
    let out = need(&cfg.out, "out")?;
    let recall = cfg.recall.unwrap_or(0.7);
    let fp_rate = cfg.false_positives.unwrap_or(1.5);
    if !(0.0..=1.0).contains(&recall) {
        return invalid(format!("--recall must be in [0, 1], got {recall}"));
    }
    if !(fp_rate >= 0.0 && fp_rate.is_finite()) {
        return invalid(format!("--false-positives must be non-negative, got {fp_rate}"));
    }
    make_dir(&out)?;
    let files: Vec<PathBuf> = par_map(&images, |k, img| {
        let (w, h) = image_dims(img)?;
        let gt_path = sibling_with_ext(img, "txt");
        let gts = if gt_path.exists() { read_annotations(&gt_path, w, h)? } else { Vec::new() };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let mut dets = Vec::new();
        for g in &gts {
            if !rng.gen_bool(recall) {
                continue;
            }
            let b = g.bbox;
            let (bw, bh) = (b.width(), b.height());
            let dx = rng.gen_range(-0.15..0.15) * bw;
            let dy = rng.gen_range(-0.15..0.15) * bh;
            let s = rng.gen_range(0.9..1.1);
            let (cx, cy) = b.center();
            if let Some(bb) = clipped(
                cx + dx - s * bw / 2.0,
                cy + dy - s * bh / 2.0,
                cx + dx + s * bw / 2.0,
                cy + dy + s * bh / 2.0,
                w,
                h,
            ) {
                dets.push(Detection::new(bb, g.class_id, rng.gen_range(0.4..0.99))?);
            }
        }
        let n_fp = fp_rate.floor() as usize + usize::from(rng.gen_bool(fp_rate.fract()));
        for _ in 0..n_fp {
            let side = rng.gen_range(10.0..24.0);
            let x = rng.gen_range(0.0..(w as f64 - side).max(1.0));
            let y = rng.gen_range(0.0..(h as f64 - side).max(1.0));
            if let Some(bb) = clipped(x, y, x + side, y + side, w, h) {
                dets.push(Detection::new(bb, rng.gen_range(0..2), rng.gen_range(0.05..0.8))?);
            }
        }
        let path = out.join(format!("{}.txt", stem(img)));
        write_detections(&path, &dets, w, h)?;
        Ok(path)
    })?;
    write_manifest(out.join("manifest.txt"), &files)?;
    write_dir_config(
        &out,
        &RunConfig {
            master_seed: Some(seed),
            simdet: cfg,
            ..Default::default()
        },
    )
}
