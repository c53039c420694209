//! Detection/ground-truth matching and hard-example patch extraction.

use std::fmt;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::annotations::{Annotation, BBox, Detection};
use crate::error::{Error, Result};
use crate::io::{ensure_dir, load_rgb, read_json, save_png, write_json};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const PATCH_INDEX_FILE: &str = "patches.json";

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Detection indices ordered by descending confidence, ties by index.
pub fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy same-class assignment: in confidence order, each detection claims
/// the unmatched ground truth with the highest IoU ≥ `iou_thresh` (ties to
/// the lower GT index). Returns the claimed GT per detection, input order.
pub fn greedy_assign(dets: &[Detection], gts: &[Annotation], iou_thresh: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    let mut out = vec![None; dets.len()];
    for d in confidence_order(dets) {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.class_id != det.class_id {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox);
            if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[d] = Some(g);
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub true_positives: Vec<(Detection, Annotation)>,
    pub false_positives: Vec<Detection>,
    pub false_negatives: Vec<Annotation>,
    /// Matched GT index per detection, in input order.
    pub assignment: Vec<Option<usize>>,
    /// Whether each GT (input order) was matched.
    pub gt_matched: Vec<bool>,
}

pub fn match_detections(dets: &[Detection], gts: &[Annotation], iou_thresh: f64) -> MatchResult {
    let assignment = greedy_assign(dets, gts, iou_thresh);
    let mut gt_matched = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for d in confidence_order(dets) {
        match assignment[d] {
            Some(g) => {
                gt_matched[g] = true;
                result.true_positives.push((dets[d], gts[g]));
            }
            None => result.false_positives.push(dets[d]),
        }
    }
    result.false_negatives = gts
        .iter()
        .zip(&gt_matched)
        .filter(|(_, m)| !**m)
        .map(|(g, _)| *g)
        .collect();
    result.assignment = assignment;
    result.gt_matched = gt_matched;
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchOrigin {
    Labeled,
    Fp,
    Fn,
}

impl PatchOrigin {
    /// Whether a placed patch of this origin produces an annotation.
    pub fn is_annotated(self) -> bool {
        !matches!(self, PatchOrigin::Fp)
    }
}

impl fmt::Display for PatchOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchOrigin::Labeled => "labeled",
            PatchOrigin::Fp => "fp",
            PatchOrigin::Fn => "fn",
        })
    }
}

/// An image crop around one object. `mask` marks valid pixels (255) and
/// `object_box` locates the object inside the crop.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: RgbImage,
    pub mask: GrayImage,
    pub origin: PatchOrigin,
    /// GT class for labeled/FN, predicted class for FP.
    pub class_id: u32,
    pub source_image: String,
    pub source_bbox: BBox,
    pub object_box: BBox,
}

impl Patch {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn full_mask(w: u32, h: u32) -> GrayImage {
        GrayImage::from_pixel(w, h, Luma([255]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractOptions {
    pub pad: u32,
    /// When false, FP patches are dropped instead of kept as distractors.
    pub include_fp: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            pad: 4,
            include_fp: true,
        }
    }
}

/// Pixel crop rectangle `(x0, y0, x1, y1)` for `bbox ± pad`, clamped to the
/// image. `None` when nothing of the box lies inside the image.
pub fn crop_rect(bbox: &BBox, pad: u32, img_w: u32, img_h: u32) -> Option<(u32, u32, u32, u32)> {
    let pad = pad as f64;
    let x0 = (bbox.x_min.floor() - pad).max(0.0);
    let y0 = (bbox.y_min.floor() - pad).max(0.0);
    let x1 = (bbox.x_max.ceil() + pad).min(img_w as f64);
    let y1 = (bbox.y_max.ceil() + pad).min(img_h as f64);
    (x0 < x1 && y0 < y1).then_some((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
}

fn crop_patch(image: &RgbImage, bbox: &BBox, origin: PatchOrigin, class_id: u32, source: &str, pad: u32) -> Option<Patch> {
    let Some((x0, y0, x1, y1)) = crop_rect(bbox, pad, image.width(), image.height()) else {
        log::warn!("{source}: skipping degenerate {origin} crop for {bbox:?}");
        return None;
    };
    let (w, h) = (x1 - x0, y1 - y0);
    let frame = BBox {
        x_min: x0 as f64,
        y_min: y0 as f64,
        x_max: x1 as f64,
        y_max: y1 as f64,
    };
    let Some(inside) = bbox.intersection(&frame) else {
        log::warn!("{source}: skipping {origin} box outside the image {bbox:?}");
        return None;
    };
    Some(Patch {
        pixels: image::imageops::crop_imm(image, x0, y0, w, h).to_image(),
        mask: Patch::full_mask(w, h),
        origin,
        class_id,
        source_image: source.to_string(),
        source_bbox: *bbox,
        object_box: inside.translate(-(x0 as f64), -(y0 as f64)),
    })
}

/// Crops FN and FP boxes from `result`, plus labeled patches for the GTs
/// that were matched (FN GTs are only emitted once, as FN).
pub fn extract_patches(
    image: &RgbImage,
    result: &MatchResult,
    gts: &[Annotation],
    source_image: &str,
    opts: &ExtractOptions,
) -> Vec<Patch> {
    let mut out = Vec::new();
    for (g, matched) in gts.iter().zip(&result.gt_matched) {
        if *matched {
            out.extend(crop_patch(image, &g.bbox, PatchOrigin::Labeled, g.class_id, source_image, opts.pad));
        }
    }
    for g in &result.false_negatives {
        out.extend(crop_patch(image, &g.bbox, PatchOrigin::Fn, g.class_id, source_image, opts.pad));
    }
    if opts.include_fp {
        for d in &result.false_positives {
            out.extend(crop_patch(image, &d.bbox, PatchOrigin::Fp, d.class_id, source_image, opts.pad));
        }
    }
    out
}

/// One row of the patch index written next to the crops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchIndexEntry {
    pub file: String,
    pub origin: PatchOrigin,
    pub class_id: u32,
    pub source_image: String,
    pub source_box: BBox,
    pub object_box: BBox,
    pub width: u32,
    pub height: u32,
}

/// Writes PNG crops and `patches.json` into `dir`.
pub fn write_patch_dir(dir: impl AsRef<Path>, patches: &[Patch]) -> Result<Vec<PatchIndexEntry>> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let mut index = Vec::with_capacity(patches.len());
    for (k, p) in patches.iter().enumerate() {
        let file = format!("{k:05}_{}.png", p.origin);
        save_png(&p.pixels, dir.join(&file))?;
        index.push(PatchIndexEntry {
            file,
            origin: p.origin,
            class_id: p.class_id,
            source_image: p.source_image.clone(),
            source_box: p.source_bbox,
            object_box: p.object_box,
            width: p.width(),
            height: p.height(),
        });
    }
    write_json(dir.join(PATCH_INDEX_FILE), &index)?;
    Ok(index)
}

pub fn read_patch_dir(dir: impl AsRef<Path>) -> Result<Vec<Patch>> {
    let dir = dir.as_ref();
    let index_path: PathBuf = dir.join(PATCH_INDEX_FILE);
    let index: Vec<PatchIndexEntry> = read_json(&index_path)?;
    index
        .into_iter()
        .map(|e| {
            let pixels = load_rgb(dir.join(&e.file))?;
            if pixels.dimensions() != (e.width, e.height) {
                return Err(Error::format(
                    &index_path,
                    format!("{}: dims {:?} disagree with index", e.file, pixels.dimensions()),
                ));
            }
            Ok(Patch {
                mask: Patch::full_mask(e.width, e.height),
                pixels,
                origin: e.origin,
                class_id: e.class_id,
                source_image: e.source_image,
                source_bbox: e.source_box,
                object_box: e.object_box,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(bb: BBox, class_id: u32, conf: f64) -> Detection {
        Detection::new(bb, class_id, conf).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &b(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_match_and_leftovers() {
        let g = Annotation::new(b(0.0, 0.0, 10.0, 10.0), 0);
        let d = det(b(0.0, 0.0, 10.0, 9.0), 0, 0.7);
        let r = match_detections(&[d], &[g], 0.5);
        assert_eq!((r.true_positives.len(), r.false_positives.len(), r.false_negatives.len()), (1, 0, 0));
        let r = match_detections(&[d], &[], 0.5);
        assert_eq!(r.false_positives.len(), 1);
        let r = match_detections(&[], &[g], 0.5);
        assert_eq!(r.false_negatives.len(), 1);
    }

    #[test]
    fn class_mismatch_never_matches() {
        let g = Annotation::new(b(0.0, 0.0, 10.0, 10.0), 1);
        let r = match_detections(&[det(g.bbox, 0, 0.9)], &[g], 0.5);
        assert_eq!((r.true_positives.len(), r.false_positives.len(), r.false_negatives.len()), (0, 1, 1));
    }

    #[test]
    fn higher_confidence_wins_duplicate() {
        let g = Annotation::new(b(0.0, 0.0, 10.0, 10.0), 0);
        let low = det(b(0.0, 0.0, 10.0, 10.0), 0, 0.8);
        let high = det(b(1.0, 0.0, 10.0, 10.0), 0, 0.9);
        let r = match_detections(&[low, high], &[g], 0.5);
        assert_eq!(r.true_positives[0].0, high);
        assert_eq!(r.false_positives, vec![low]);
        assert_eq!(r.assignment, vec![None, Some(0)]);
    }

    #[test]
    fn equal_confidence_breaks_by_index() {
        let g = Annotation::new(b(0.0, 0.0, 10.0, 10.0), 0);
        let d0 = det(b(1.0, 0.0, 10.0, 10.0), 0, 0.5);
        let d1 = det(b(0.0, 0.0, 10.0, 10.0), 0, 0.5);
        let r = match_detections(&[d0, d1], &[g], 0.5);
        assert_eq!(r.assignment, vec![Some(0), None]);
    }

    #[test]
    fn fn_crop_with_pad() {
        let img = RgbImage::new(300, 300);
        let g = Annotation::new(b(100.0, 100.0, 130.0, 130.0), 0);
        let r = match_detections(&[], &[g], 0.5);
        let p = extract_patches(&img, &r, &[g], "img", &ExtractOptions::default());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].origin, PatchOrigin::Fn);
        assert_eq!(p[0].pixels.dimensions(), (38, 38));
        assert_eq!(p[0].object_box, b(4.0, 4.0, 34.0, 34.0));
        assert_eq!(crop_rect(&g.bbox, 4, 300, 300), Some((96, 96, 134, 134)));
    }

    #[test]
    fn corner_crop_is_clamped() {
        let img = RgbImage::new(50, 50);
        let g = Annotation::new(b(0.0, 0.0, 10.0, 10.0), 1);
        let r = match_detections(&[], &[g], 0.5);
        let p = extract_patches(&img, &r, &[g], "img", &ExtractOptions::default());
        assert_eq!(p[0].pixels.dimensions(), (14, 14));
        assert_eq!(p[0].object_box, b(0.0, 0.0, 10.0, 10.0));
    }

    #[test]
    fn empty_result_gives_no_patches() {
        let img = RgbImage::new(50, 50);
        let r = match_detections(&[], &[], 0.5);
        assert!(extract_patches(&img, &r, &[], "img", &ExtractOptions::default()).is_empty());
    }

    #[test]
    fn fp_patches_follow_flag() {
        let img = RgbImage::new(100, 100);
        let g = Annotation::new(b(10.0, 10.0, 20.0, 20.0), 0);
        let tp = det(g.bbox, 0, 0.9);
        let fp = det(b(60.0, 60.0, 70.0, 70.0), 1, 0.6);
        let r = match_detections(&[tp, fp], &[g], 0.5);
        let all = extract_patches(&img, &r, &[g], "img", &ExtractOptions::default());
        let origins: Vec<_> = all.iter().map(|p| (p.origin, p.class_id)).collect();
        assert_eq!(origins, vec![(PatchOrigin::Labeled, 0), (PatchOrigin::Fp, 1)]);
        let no_fp = extract_patches(&img, &r, &[g], "img", &ExtractOptions { include_fp: false, ..Default::default() });
        assert_eq!(no_fp.len(), 1);
    }

    #[test]
    fn patch_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(64, 64, |x, y| image::Rgb([x as u8, y as u8, 3]));
        let g = Annotation::new(b(10.0, 12.0, 30.0, 28.0), 0);
        let r = match_detections(&[], &[g], 0.5);
        let patches = extract_patches(&img, &r, &[g], "src", &ExtractOptions::default());
        write_patch_dir(dir.path(), &patches).unwrap();
        let back = read_patch_dir(dir.path()).unwrap();
        assert_eq!(back, patches);
    }
}
