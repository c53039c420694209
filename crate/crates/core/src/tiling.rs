//! Fixed-size tiling of large images with annotation clipping, and per-class
//! dataset statistics over tile sets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::annotations::{read_annotations, Annotation, BBox, ClassRegistry};
use crate::error::{Error, Result};
use crate::io::{image_dims, read_manifest, sibling_with_ext};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileSpec {
    pub tile_size: u32,
    pub overlap: u32,
    /// Clipped boxes are kept iff clipped area ≥ this fraction of the original.
    pub min_box_visibility: f64,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            tile_size: 512,
            overlap: 0,
            min_box_visibility: 0.4,
        }
    }
}

impl TileSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::InvalidArgument("tile size must be positive".into()));
        }
        if self.overlap >= self.tile_size {
            return Err(Error::InvalidArgument(format!(
                "overlap {} must be smaller than tile size {}",
                self.overlap, self.tile_size
            )));
        }
        if !(self.min_box_visibility > 0.0 && self.min_box_visibility <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "min_box_visibility {} outside (0, 1]",
                self.min_box_visibility
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> u32 {
        self.tile_size - self.overlap
    }
}

/// Tile origins along one axis: regular stride, with the last tile pulled
/// back so it ends exactly at the image edge.
pub fn axis_offsets(len: u32, tile: u32, stride: u32) -> Vec<u32> {
    if len < tile {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut x = 0;
    while x + tile <= len {
        out.push(x);
        x += stride;
    }
    let last = len - tile;
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Top-left corners of all tiles, row-major.
pub fn tile_layout(width: u32, height: u32, spec: &TileSpec) -> Result<Vec<(u32, u32)>> {
    spec.validate()?;
    if width < spec.tile_size || height < spec.tile_size {
        return Err(Error::InvalidArgument(format!(
            "image {width}x{height} smaller than tile size {}",
            spec.tile_size
        )));
    }
    let xs = axis_offsets(width, spec.tile_size, spec.stride());
    let ys = axis_offsets(height, spec.tile_size, spec.stride());
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect())
}

/// Annotations clipped to `window` and translated into its frame.
pub fn clip_annotations(anns: &[Annotation], window: &BBox, min_visibility: f64) -> Vec<Annotation> {
    anns.iter()
        .filter_map(|a| {
            let clipped = a.bbox.intersection(window)?;
            // small slack so exact ratios (e.g. a 50/50 split at 0.5) are kept
            if clipped.area() < min_visibility * a.bbox.area() * (1.0 - 1e-12) {
                return None;
            }
            Some(Annotation {
                bbox: clipped.translate(-window.x_min, -window.y_min),
                ..*a
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Tile {
    pub offset: (u32, u32),
    pub image: RgbImage,
    pub annotations: Vec<Annotation>,
}

pub fn tile_image(image: &RgbImage, anns: &[Annotation], spec: &TileSpec) -> Result<Vec<Tile>> {
    let layout = tile_layout(image.width(), image.height(), spec)?;
    let t = spec.tile_size;
    Ok(layout
        .into_iter()
        .map(|(x, y)| {
            let window = BBox {
                x_min: x as f64,
                y_min: y as f64,
                x_max: (x + t) as f64,
                y_max: (y + t) as f64,
            };
            Tile {
                offset: (x, y),
                image: image::imageops::crop_imm(image, x, y, t, t).to_image(),
                annotations: clip_annotations(anns, &window, spec.min_box_visibility),
            }
        })
        .collect())
}

/// One tile's worth of input to [`aggregate_stats`].
#[derive(Debug, Clone)]
pub struct TileRecord {
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: u32,
    pub name: Option<String>,
    pub count: usize,
    pub per_tile_mean: f64,
    pub width: Summary,
    pub height: Summary,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub tiles: usize,
    pub classes: Vec<ClassStats>,
    pub missing: Vec<PathBuf>,
}

impl DatasetStats {
    pub fn class(&self, class_id: u32) -> Option<&ClassStats> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }
}

#[derive(Default)]
struct Acc {
    count: usize,
    w: (f64, f64, f64),
    h: (f64, f64, f64),
}

impl Acc {
    fn push(&mut self, b: &BBox) {
        let (w, h) = (b.width(), b.height());
        if self.count == 0 {
            self.w = (w, 0.0, w);
            self.h = (h, 0.0, h);
        }
        self.count += 1;
        self.w = (self.w.0.min(w), self.w.1 + w, self.w.2.max(w));
        self.h = (self.h.0.min(h), self.h.1 + h, self.h.2.max(h));
    }

    fn summary(&self, (min, sum, max): (f64, f64, f64)) -> Summary {
        if self.count == 0 {
            return Summary::default();
        }
        Summary {
            min,
            mean: sum / self.count as f64,
            max,
        }
    }
}

/// Per-class counts, boxes-per-tile means and box size summaries. Every class
/// in `registry` is reported even when absent.
pub fn aggregate_stats(
    records: impl IntoIterator<Item = TileRecord>,
    registry: &ClassRegistry,
) -> DatasetStats {
    let mut tiles = 0usize;
    let mut per_class: BTreeMap<u32, Acc> = (0..registry.len() as u32).map(|c| (c, Acc::default())).collect();
    for rec in records {
        tiles += 1;
        for a in &rec.annotations {
            per_class.entry(a.class_id).or_default().push(&a.bbox);
        }
    }
    let classes = per_class
        .into_iter()
        .map(|(class_id, acc)| ClassStats {
            class_id,
            name: registry.name(class_id).map(str::to_string),
            count: acc.count,
            per_tile_mean: if tiles == 0 { 0.0 } else { acc.count as f64 / tiles as f64 },
            width: acc.summary(acc.w),
            height: acc.summary(acc.h),
        })
        .collect();
    DatasetStats {
        tiles,
        classes,
        missing: Vec::new(),
    }
}

/// Statistics over a tile manifest. Each entry is a tile image whose
/// annotation file shares its stem. Missing images are listed and skipped;
/// a missing annotation file is listed and the tile counted as empty.
pub fn dataset_stats(manifest: impl AsRef<Path>, registry: &ClassRegistry) -> Result<DatasetStats> {
    let entries = read_manifest(manifest)?;
    let mut missing = Vec::new();
    let mut records = Vec::with_capacity(entries.len());
    for img in entries {
        let (w, h) = match image_dims(&img) {
            Ok(d) => d,
            Err(e) if e.is_runtime() => {
                log::warn!("{}: {e}", img.display());
                missing.push(img);
                continue;
            }
            Err(e) => return Err(e),
        };
        let ann = sibling_with_ext(&img, "txt");
        let annotations = if ann.exists() {
            read_annotations(&ann, w, h)?
        } else {
            missing.push(ann);
            Vec::new()
        };
        records.push(TileRecord { annotations });
    }
    let mut stats = aggregate_stats(records, registry);
    stats.missing = missing;
    Ok(stats)
}
