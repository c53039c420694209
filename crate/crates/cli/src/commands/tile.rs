use std::path::{Path, PathBuf};

use rarespot_core::annotations::{read_annotations, write_annotations};
use rarespot_core::io::{load_rgb, read_manifest, save_png, sibling_with_ext, stem, write_json, write_manifest};
use rarespot_core::tiling::{tile_image, TileSpec};
use serde::Serialize;

use super::{make_dir, par_map, show, write_dir_config};
use crate::config::{TileSection, RunConfig};
use crate::error::{invalid, CliResult};

#[derive(Serialize)]
struct ImageTiles {
    image: String,
    width: u32,
    height: u32,
    boxes: usize,
    tiles: usize,
    empty_tiles: usize,
    tile_boxes: usize,
}

#[derive(Serialize)]
struct TileReport {
    tile_size: u32,
    overlap: u32,
    min_box_visibility: f64,
    images: Vec<ImageTiles>,
    tiles: usize,
    empty_tiles: usize,
}

struct Tiled {
    summary: ImageTiles,
    /// (tile image path, annotation path, has annotations)
    outputs: Vec<(PathBuf, PathBuf, bool)>,
}

fn tile_one(img_path: &Path, ann_path: &Path, out: &Path, spec: &TileSpec) -> CliResult<Tiled> {
    let img = load_rgb(img_path)?;
    let (w, h) = img.dimensions();
    let anns = if ann_path.exists() {
        read_annotations(ann_path, w, h)?
    } else {
        log::warn!("{}: no annotation file, tiling as background", show(ann_path));
        Vec::new()
    };
    let name = stem(img_path);
    let tiles = tile_image(&img, &anns, spec)?;
    let mut outputs = Vec::with_capacity(tiles.len());
    let mut tile_boxes = 0;
    for t in &tiles {
        let base = format!("{name}_{:05}_{:05}", t.offset.0, t.offset.1);
        let png = out.join(format!("{base}.png"));
        let txt = out.join(format!("{base}.txt"));
        save_png(&t.image, &png)?;
        write_annotations(&txt, &t.annotations, spec.tile_size, spec.tile_size)?;
        tile_boxes += t.annotations.len();
        outputs.push((png, txt, !t.annotations.is_empty()));
    }
    Ok(Tiled {
        summary: ImageTiles {
            image: show(img_path),
            width: w,
            height: h,
            boxes: anns.len(),
            tiles: tiles.len(),
            empty_tiles: outputs.iter().filter(|o| !o.2).count(),
            tile_boxes,
        },
        outputs,
    })
}

pub fn run(cfg: TileSection, seed: u64) -> CliResult<()> {
    let out = cfg.out()?;
    let spec = TileSpec {
        tile_size: cfg.size.unwrap_or(512),
        overlap: cfg.overlap.unwrap_or(0),
        min_box_visibility: cfg.min_visibility.unwrap_or(0.4),
    };
    spec.validate()?;
    let jobs: Vec<(PathBuf, PathBuf)> = match (&cfg.input, &cfg.manifest) {
        (Some(img), None) => vec![(img.clone(), cfg.ann.clone().unwrap_or_else(|| sibling_with_ext(img, "txt")))],
        (None, Some(m)) => {
            if cfg.ann.is_some() {
                return invalid("--ann only applies with --in");
            }
            read_manifest(m)?.into_iter().map(|p| {
                let a = sibling_with_ext(&p, "txt");
                (p, a)
            }).collect()
        }
        _ => return invalid("give exactly one of --in or --manifest"),
    };
    make_dir(&out)?;
    let results = par_map(&jobs, |_, (img, ann)| tile_one(img, ann, &out, &spec))?;

    let mut all = Vec::new();
    let mut anns = Vec::new();
    let mut empty = Vec::new();
    let mut labeled = Vec::new();
    for r in &results {
        for (png, txt, has) in &r.outputs {
            all.push(png.clone());
            anns.push(txt.clone());
            if *has { labeled.push(png.clone()) } else { empty.push(png.clone()) }
        }
    }
    write_manifest(out.join("manifest.txt"), &all)?;
    write_manifest(out.join("annotations.txt"), &anns)?;
    write_manifest(out.join("labeled.txt"), &labeled)?;
    write_manifest(out.join("empty.txt"), &empty)?;
    let report = TileReport {
        tile_size: spec.tile_size,
        overlap: spec.overlap,
        min_box_visibility: spec.min_box_visibility,
        tiles: all.len(),
        empty_tiles: empty.len(),
        images: results.into_iter().map(|r| r.summary).collect(),
    };
    write_json(out.join("tile_report.json"), &report)?;
    log::info!("{} tiles ({} empty) written to {}", report.tiles, report.empty_tiles, show(&out));
    write_dir_config(
        &out,
        &RunConfig {
            master_seed: Some(seed),
            tile: cfg,
            ..Default::default()
        },
    )
}
