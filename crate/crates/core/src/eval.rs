//! Precision, recall and AP@IoU evaluation of detections against ground
//! truth.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotations::{read_annotations, read_detections, Annotation, ClassRegistry, Detection};
use crate::error::{Error, Result};
use crate::io::{read_manifest, stem};
use crate::mining::greedy_assign;

/// Detections and ground truth of one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageEval {
    pub name: String,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<Annotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub class_id: u32,
    pub num_gt: usize,
    /// One point per detection, in descending-confidence order.
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn recall_defined(&self) -> bool {
        self.num_gt > 0
    }
}

/// True-positive flag for every detection of `class_id`, with its
/// confidence, ordered by descending confidence (ties by image then
/// detection index).
fn scored_matches(images: &[ImageEval], class_id: u32, iou_thresh: f64, min_conf: f64) -> (Vec<(f64, bool)>, usize) {
    let mut scored: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut num_gt = 0;
    for (im, img) in images.iter().enumerate() {
        let dets: Vec<Detection> = img
            .detections
            .iter()
            .filter(|d| d.class_id == class_id && d.confidence >= min_conf)
            .copied()
            .collect();
        let gts: Vec<Annotation> = img.ground_truth.iter().filter(|g| g.class_id == class_id).copied().collect();
        num_gt += gts.len();
        let assign = greedy_assign(&dets, &gts, iou_thresh);
        for (k, (d, a)) in dets.iter().zip(assign).enumerate() {
            scored.push((d.confidence, im, k, a.is_some()));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    (scored.into_iter().map(|(c, _, _, tp)| (c, tp)).collect(), num_gt)
}

pub fn pr_curve(images: &[ImageEval], class_id: u32, iou_thresh: f64) -> PrCurve {
    let (scored, num_gt) = scored_matches(images, class_id, iou_thresh, f64::NEG_INFINITY);
    let mut tp = 0usize;
    let points = if num_gt == 0 {
        Vec::new()
    } else {
        scored
            .iter()
            .enumerate()
            .map(|(k, &(confidence, is_tp))| {
                tp += is_tp as usize;
                PrPoint {
                    confidence,
                    precision: tp as f64 / (k + 1) as f64,
                    recall: tp as f64 / num_gt as f64,
                }
            })
            .collect()
    };
    PrCurve {
        class_id,
        num_gt,
        points,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApMethod {
    /// All-point interpolation: exact area under the precision envelope.
    #[default]
    Continuous,
    /// Mean of the envelope sampled at recall 0, 0.01, …, 1.
    Points101,
}

impl fmt::Display for ApMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApMethod::Continuous => "continuous",
            ApMethod::Points101 => "points101",
        })
    }
}

impl FromStr for ApMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" => Ok(ApMethod::Continuous),
            "points101" | "101" => Ok(ApMethod::Points101),
            other => Err(Error::InvalidArgument(format!("unknown AP method `{other}`"))),
        }
    }
}

/// Precision envelope: `env[k] = max_{j ≥ k} precision[j]`.
fn envelope(points: &[PrPoint]) -> Vec<f64> {
    let mut env: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for k in (0..env.len().saturating_sub(1)).rev() {
        env[k] = env[k].max(env[k + 1]);
    }
    env
}

pub fn average_precision(curve: &PrCurve, method: ApMethod) -> f64 {
    if curve.points.is_empty() {
        return 0.0;
    }
    let env = envelope(&curve.points);
    match method {
        ApMethod::Continuous => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (p, e) in curve.points.iter().zip(&env) {
                ap += (p.recall - prev_recall) * e;
                prev_recall = p.recall;
            }
            ap
        }
        ApMethod::Points101 => {
            let mut sum = 0.0;
            let mut k = 0;
            for t in 0..=100 {
                let r = t as f64 / 100.0;
                while k < curve.points.len() && curve.points[k].recall < r - 1e-12 {
                    k += 1;
                }
                if k < curve.points.len() {
                    sum += env[k];
                }
            }
            sum / 101.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// Confidence operating point for the reported precision/recall.
    pub conf_threshold: f64,
    pub ap_method: ApMethod,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            conf_threshold: 0.25,
            ap_method: ApMethod::Continuous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub class_id: u32,
    pub name: String,
    pub num_gt: usize,
    pub num_detections: usize,
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
    /// False when the class has no ground truth; `ap` is then reported as 0.
    pub ap_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub conf_threshold: f64,
    pub ap_method: ApMethod,
    pub images: usize,
    pub classes: Vec<ClassEval>,
    pub map: f64,
    pub unmatched: Vec<PathBuf>,
}

pub fn evaluate(images: &[ImageEval], classes: &ClassRegistry, opts: &EvalOptions) -> EvalReport {
    let per_class: Vec<ClassEval> = (0..classes.len() as u32)
        .map(|class_id| {
            let curve = pr_curve(images, class_id, opts.iou_threshold);
            let ap = average_precision(&curve, opts.ap_method);
            let (op, num_gt) = scored_matches(images, class_id, opts.iou_threshold, opts.conf_threshold);
            let tp = op.iter().filter(|(_, t)| *t).count();
            let num_detections = images
                .iter()
                .flat_map(|i| &i.detections)
                .filter(|d| d.class_id == class_id)
                .count();
            ClassEval {
                class_id,
                name: classes.name(class_id).unwrap_or_default().to_string(),
                num_gt,
                num_detections,
                precision: if op.is_empty() { 0.0 } else { tp as f64 / op.len() as f64 },
                recall: if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 },
                ap,
                ap_defined: num_gt > 0,
            }
        })
        .collect();
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
    };
    EvalReport {
        iou_threshold: opts.iou_threshold,
        conf_threshold: opts.conf_threshold,
        ap_method: opts.ap_method,
        images: images.len(),
        classes: per_class,
        map,
        unmatched: Vec::new(),
    }
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let width = self.classes.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        writeln!(
            s,
            "{:<width$}  {:>6}  {:>6}  {:>9}  {:>9}  {:>8}",
            "class", "gt", "dets", "precision", "recall", "AP@50"
        )
        .unwrap();
        for c in &self.classes {
            writeln!(
                s,
                "{:<width$}  {:>6}  {:>6}  {:>9.3}  {:>9.3}  {:>8.3}{}",
                c.name,
                c.num_gt,
                c.num_detections,
                c.precision,
                c.recall,
                c.ap,
                if c.ap_defined { "" } else { "  (no gt)" }
            )
            .unwrap();
        }
        writeln!(s, "{:<width$}  {:>6}  {:>6}  {:>9}  {:>9}  {:>8.3}", "all", "", "", "", "", self.map).unwrap();
        writeln!(
            s,
            "iou={} conf={} method={} images={}",
            self.iou_threshold, self.conf_threshold, self.ap_method, self.images
        )
        .unwrap();
        s
    }
}

/// Pairs detection and ground-truth files by stem. Geometry is read in
/// normalised units, which leaves IoU unchanged. Entries present on only one
/// side are reported in `unmatched`; a GT file without detections still
/// counts (all its objects are missed).
pub fn load_eval_set(dets_manifest: &Path, gts_manifest: &Path) -> Result<(Vec<ImageEval>, Vec<PathBuf>)> {
    let dets: BTreeMap<String, PathBuf> = read_manifest(dets_manifest)?.into_iter().map(|p| (stem(&p), p)).collect();
    let gts: BTreeMap<String, PathBuf> = read_manifest(gts_manifest)?.into_iter().map(|p| (stem(&p), p)).collect();
    let mut unmatched = Vec::new();
    let mut images = Vec::new();
    for (name, gpath) in &gts {
        let ground_truth = read_annotations(gpath, 1, 1)?;
        let detections = match dets.get(name) {
            Some(dpath) => read_detections(dpath, 1, 1)?,
            None => {
                unmatched.push(gpath.clone());
                Vec::new()
            }
        };
        images.push(ImageEval {
            name: name.clone(),
            detections,
            ground_truth,
        });
    }
    unmatched.extend(dets.iter().filter(|(n, _)| !gts.contains_key(*n)).map(|(_, p)| p.clone()));
    Ok((images, unmatched))
}

pub fn evaluate_manifests(
    dets_manifest: &Path,
    gts_manifest: &Path,
    classes: &ClassRegistry,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (images, unmatched) = load_eval_set(dets_manifest, gts_manifest)?;
    let mut report = evaluate(&images, classes, opts);
    report.unmatched = unmatched;
    Ok(report)
}
