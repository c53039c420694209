//! Synthetic aerial scenes: grass with dirt patches, prairie dogs and
//! burrows clustered in colonies so that many tiles stay empty.

use std::f64::consts::TAU;
use std::path::PathBuf;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rarespot_core::annotations::{write_annotations, Annotation, BBox};
use rarespot_core::io::{save_png, write_manifest};
use rarespot_core::mining::iou;
use rarespot_core::rng::derive_seed;

use super::{make_dir, par_map, write_dir_config};
use crate::config::{need, RunConfig, SynthSection};
use crate::error::{invalid, CliResult};

const GRASS: [f64; 3] = [72.0, 112.0, 52.0];
const DIRT: [f64; 3] = [152.0, 127.0, 96.0];
const FUR: [f64; 3] = [178.0, 140.0, 92.0];
const MOUND: [f64; 3] = [165.0, 138.0, 106.0];
const HOLE: [f64; 3] = [52.0, 40.0, 32.0];

fn put(img: &mut RgbImage, x: i64, y: i64, c: [f64; 3], noise: f64) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        let px = c.map(|v| (v + noise).clamp(0.0, 255.0) as u8);
        img.put_pixel(x as u32, y as u32, Rgb(px));
    }
}

fn terrain(size: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let dir = rng.gen_range(0.0..TAU);
            let period = rng.gen_range(180.0..420.0);
            (dir, TAU / period, rng.gen_range(0.0..TAU))
        })
        .collect();
    let cut = rng.gen_range(0.3..0.9);
    let mut img = RgbImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let f: f64 = waves
                .iter()
                .map(|(d, k, p)| ((x as f64 * d.cos() + y as f64 * d.sin()) * k + p).sin())
                .sum();
            let base = if f > cut { DIRT } else { GRASS };
            let n = rng.gen_range(-10.0..10.0);
            put(&mut img, x as i64, y as i64, base, n);
        }
    }
    img
}

fn draw_prairie_dog(img: &mut RgbImage, cx: f64, cy: f64, rx: f64, ry: f64, rng: &mut ChaCha8Rng) {
    for y in (cy - ry).floor() as i64..=(cy + ry).ceil() as i64 {
        for x in (cx - rx).floor() as i64..=(cx + rx).ceil() as i64 {
            let d = ((x as f64 + 0.5 - cx) / rx).powi(2) + ((y as f64 + 0.5 - cy) / ry).powi(2);
            if d <= 1.0 {
                let shade = if d > 0.7 { -35.0 } else { 0.0 };
                put(img, x, y, FUR, shade + rng.gen_range(-6.0..6.0));
            }
        }
    }
}

fn draw_burrow(img: &mut RgbImage, cx: f64, cy: f64, r: f64, rng: &mut ChaCha8Rng) {
    for y in (cy - r).floor() as i64..=(cy + r).ceil() as i64 {
        for x in (cx - r).floor() as i64..=(cx + r).ceil() as i64 {
            let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt() / r;
            if d <= 1.0 {
                let c = if d < 0.45 { HOLE } else { MOUND };
                put(img, x, y, c, rng.gen_range(-6.0..6.0));
            }
        }
    }
}

/// Scene `k`: objects occupy a random non-empty subset of the image quarters.
fn scene(size: u32, rng: &mut ChaCha8Rng) -> CliResult<(RgbImage, Vec<Annotation>)> {
    let mut img = terrain(size, rng);
    let cell = size as f64 / 2.0;
    let mut colonies: Vec<(usize, usize)> = (0..4).filter(|_| rng.gen_bool(0.4)).map(|q| (q % 2, q / 2)).collect();
    if colonies.is_empty() {
        colonies.push((rng.gen_range(0..2), rng.gen_range(0..2)));
    }
    let margin = 28.0;
    let mut anns: Vec<Annotation> = Vec::new();
    for (qx, qy) in colonies {
        let wanted = [(1u32, rng.gen_range(1..=4)), (0, rng.gen_range(1..=4))];
        for (class_id, n) in wanted {
            let mut placed = 0;
            for _ in 0..50 * n {
                if placed == n {
                    break;
                }
                let cx = qx as f64 * cell + rng.gen_range(margin..cell - margin);
                let cy = qy as f64 * cell + rng.gen_range(margin..cell - margin);
                let (hw, hh) = if class_id == 1 {
                    let r = rng.gen_range(8.0..14.0);
                    (r, r)
                } else {
                    (rng.gen_range(4.0..6.0), rng.gen_range(6.0..9.0))
                };
                let bbox = BBox::new(cx - hw, cy - hh, cx + hw, cy + hh)?;
                let grown = BBox::new(bbox.x_min - 4.0, bbox.y_min - 4.0, bbox.x_max + 4.0, bbox.y_max + 4.0)?;
                if anns.iter().any(|a| iou(&a.bbox, &grown) > 0.0) {
                    continue;
                }
                if class_id == 1 {
                    draw_burrow(&mut img, cx, cy, hw, rng);
                } else {
                    draw_prairie_dog(&mut img, cx, cy, hw, hh, rng);
                }
                anns.push(Annotation::new(bbox, class_id));
                placed += 1;
            }
        }
    }
    Ok((img, anns))
}

pub fn run(cfg: SynthSection, seed: u64) -> CliResult<()> {
    let out = need(&cfg.out, "out")?;
    let n = cfg.images.unwrap_or(20);
    let size = cfg.size.unwrap_or(1024);
    if size < 128 {
        return invalid(format!("--size must be at least 128, got {size}"));
    }
    make_dir(&out)?;
    let ids: Vec<usize> = (0..n).collect();
    let files: Vec<PathBuf> = par_map(&ids, |_, &k| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let (img, anns) = scene(size, &mut rng)?;
        let png = out.join(format!("scene_{k:03}.png"));
        save_png(&img, &png)?;
        write_annotations(png.with_extension("txt"), &anns, size, size)?;
        Ok(png)
    })?;
    write_manifest(out.join("manifest.txt"), &files)?;
    write_dir_config(
        &out,
        &RunConfig {
            master_seed: Some(seed),
            synth: cfg,
            ..Default::default()
        },
    )
}
