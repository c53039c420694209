//! Detection matching and AP by exhaustive threshold sweep.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    let union = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Det {
    pub rect: Rect,
    pub class: u32,
    pub conf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gt {
    pub rect: Rect,
    pub class: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Image {
    pub dets: Vec<Det>,
    pub gts: Vec<Gt>,
}

/// True-positive flag per detection. Detections are visited from highest to
/// lowest confidence (equal confidence: lower index first); each claims the
/// free same-class GT of highest IoU at or above `thr` (equal IoU: lower
/// index).
pub fn greedy_tp(dets: &[Det], gts: &[Gt], thr: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // insertion sort keeps the tie rule explicit
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (dets[order[j - 1]], dets[order[j]]);
            if b.conf > a.conf {
                order.swap(j - 1, j);
                j -= 1;
            } else {
                break;
            }
        }
    }
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.class != dets[d].class {
                continue;
            }
            let v = iou(&dets[d].rect, &gt.rect);
            if v >= thr && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[d] = true;
        }
    }
    tp
}

/// Precision and recall when keeping only detections with confidence ≥ `t`,
/// each image re-matched from scratch.
pub fn pr_at(images: &[Image], class: u32, thr: f64, t: f64) -> Option<(f64, f64)> {
    let mut kept = 0usize;
    let mut tp = 0usize;
    let mut gts = 0usize;
    for im in images {
        let dets: Vec<Det> = im.dets.iter().filter(|d| d.class == class && d.conf >= t).copied().collect();
        let g: Vec<Gt> = im.gts.iter().filter(|g| g.class == class).copied().collect();
        gts += g.len();
        kept += dets.len();
        tp += greedy_tp(&dets, &g, thr).iter().filter(|x| **x).count();
    }
    if kept == 0 || gts == 0 {
        None
    } else {
        Some((tp as f64 / kept as f64, tp as f64 / gts as f64))
    }
}

/// All-point AP: area under `r ↦ max{precision at any threshold whose recall
/// is ≥ r}`, with every distinct confidence tried as a threshold.
pub fn ap_sweep(images: &[Image], class: u32, thr: f64) -> f64 {
    let mut confs: Vec<f64> = images
        .iter()
        .flat_map(|im| im.dets.iter().filter(|d| d.class == class).map(|d| d.conf))
        .collect();
    confs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    confs.dedup();
    let points: Vec<(f64, f64)> = confs.iter().filter_map(|&t| pr_at(images, class, thr, t)).collect();
    let mut recalls: Vec<f64> = points.iter().map(|p| p.1).collect();
    recalls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let env = points.iter().filter(|p| p.1 >= r).map(|p| p.0).fold(0.0, f64::max);
        ap += (r - prev) * env;
        prev = r;
    }
    ap
}
