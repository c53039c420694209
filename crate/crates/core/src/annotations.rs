//! Bounding boxes, ground-truth annotations, detections and their
//! normalised text formats.
//!
//! Annotation lines are `class_id cx cy w h`; detection lines are
//! `class_id conf cx cy w h`. Geometry is normalised to `[0, 1]` by the image
//! dims and written with six decimals.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLASS_PRAIRIE_DOG: u32 = 0;
pub const CLASS_BURROW: u32 = 1;

/// Axis-aligned box in pixel coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite box {b:?}")));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidArgument(format!("degenerate box {b:?}")));
        }
        Ok(b)
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Overlap region, or `None` when the boxes do not share positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x_min.max(other.x_min);
        let y0 = self.y_min.max(other.y_min);
        let x1 = self.x_max.min(other.x_max);
        let y1 = self.y_max.min(other.y_max);
        (x0 < x1 && y0 < y1).then_some(BBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        })
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Normalised `(cx, cy, w, h)` for an image of the given dims.
    pub fn to_normalized(&self, image_w: f64, image_h: f64) -> (f64, f64, f64, f64) {
        let (cx, cy) = self.center();
        (cx / image_w, cy / image_h, self.width() / image_w, self.height() / image_h)
    }

    pub fn from_normalized(cx: f64, cy: f64, w: f64, h: f64, image_w: f64, image_h: f64) -> Result<Self> {
        let (cx, cy, w, h) = (cx * image_w, cy * image_h, w * image_w, h * image_h);
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    #[default]
    Labeled,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BBox,
    pub class_id: u32,
    #[serde(default)]
    pub source: AnnotationSource,
}

impl Annotation {
    pub fn new(bbox: BBox, class_id: u32) -> Self {
        Self {
            bbox,
            class_id,
            source: AnnotationSource::Labeled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: u32, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            bbox,
            class_id,
            confidence,
        })
    }
}

/// Ordered class names; the position is the class id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRegistry(pub Vec<String>);

impl Default for ClassRegistry {
    fn default() -> Self {
        Self(vec!["prairie_dog".into(), "burrow".into()])
    }
}

impl ClassRegistry {
    pub fn parse_list(s: &str) -> Result<Self> {
        let names: Vec<String> = s
            .split(',')
            .map(|n| n.trim().to_string())
            .filter(|n| !n.is_empty())
            .collect();
        if names.is_empty() {
            return Err(Error::InvalidArgument("class list is empty".into()));
        }
        Ok(Self(names))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, class_id: u32) -> bool {
        (class_id as usize) < self.0.len()
    }

    pub fn name(&self, class_id: u32) -> Option<&str> {
        self.0.get(class_id as usize).map(String::as_str)
    }
}

fn parse_fields<const N: usize>(line: &str, path: &Path, lineno: usize) -> Result<(u32, [f64; N])> {
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        msg,
    };
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != N + 1 {
        return Err(err(format!("expected {} fields, found {}", N + 1, toks.len())));
    }
    let class_id = toks[0]
        .parse::<u32>()
        .map_err(|_| err(format!("bad class id `{}`", toks[0])))?;
    let mut vals = [0.0; N];
    for (v, t) in vals.iter_mut().zip(&toks[1..]) {
        *v = t.parse::<f64>().map_err(|_| err(format!("bad number `{t}`")))?;
        if !v.is_finite() {
            return Err(err(format!("non-finite number `{t}`")));
        }
    }
    Ok((class_id, vals))
}

fn geometry(
    vals: [f64; 4],
    image_w: u32,
    image_h: u32,
    path: &Path,
    lineno: usize,
) -> Result<BBox> {
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        msg,
    };
    if let Some(v) = vals.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(err(format!("normalised coordinate {v} outside [0, 1]")));
    }
    let [cx, cy, w, h] = vals;
    if w <= 0.0 || h <= 0.0 {
        return Err(err(format!("degenerate box w={w} h={h}")));
    }
    BBox::from_normalized(cx, cy, w, h, image_w as f64, image_h as f64).map_err(|e| err(e.to_string()))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_annotations(text: &str, path: &Path, image_w: u32, image_h: u32) -> Result<Vec<Annotation>> {
    content_lines(text)
        .map(|(n, line)| {
            let (class_id, vals) = parse_fields::<4>(line, path, n)?;
            Ok(Annotation::new(geometry(vals, image_w, image_h, path, n)?, class_id))
        })
        .collect()
}

pub fn parse_detections(text: &str, path: &Path, image_w: u32, image_h: u32) -> Result<Vec<Detection>> {
    content_lines(text)
        .map(|(n, line)| {
            let (class_id, [conf, cx, cy, w, h]) = parse_fields::<5>(line, path, n)?;
            if !(0.0..=1.0).contains(&conf) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n,
                    msg: format!("confidence {conf} outside [0, 1]"),
                });
            }
            let bbox = geometry([cx, cy, w, h], image_w, image_h, path, n)?;
            Ok(Detection {
                bbox,
                class_id,
                confidence: conf,
            })
        })
        .collect()
}

pub fn format_annotations(anns: &[Annotation], image_w: u32, image_h: u32) -> String {
    let mut s = String::new();
    for a in anns {
        let (cx, cy, w, h) = a.bbox.to_normalized(image_w as f64, image_h as f64);
        writeln!(s, "{} {cx:.6} {cy:.6} {w:.6} {h:.6}", a.class_id).unwrap();
    }
    s
}

pub fn format_detections(dets: &[Detection], image_w: u32, image_h: u32) -> String {
    let mut s = String::new();
    for d in dets {
        let (cx, cy, w, h) = d.bbox.to_normalized(image_w as f64, image_h as f64);
        writeln!(s, "{} {:.6} {cx:.6} {cy:.6} {w:.6} {h:.6}", d.class_id, d.confidence).unwrap();
    }
    s
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_annotations(path: impl AsRef<Path>, image_w: u32, image_h: u32) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    parse_annotations(&read_text(path)?, path, image_w, image_h)
}

pub fn write_annotations(path: impl AsRef<Path>, anns: &[Annotation], image_w: u32, image_h: u32) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_annotations(anns, image_w, image_h)).map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: impl AsRef<Path>, image_w: u32, image_h: u32) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    parse_detections(&read_text(path)?, path, image_w, image_h)
}

pub fn write_detections(path: impl AsRef<Path>, dets: &[Detection], image_w: u32, image_h: u32) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_detections(dets, image_w, image_h)).map_err(|e| Error::io(path, e))
}
