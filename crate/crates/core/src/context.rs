//! Habitat context maps from HSV thresholds.

use std::fmt;
use std::path::Path;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{save_png, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Habitat {
    Other,
    Dirt,
    Grass,
}

impl Habitat {
    pub fn label_value(self) -> u8 {
        match self {
            Habitat::Other => 0,
            Habitat::Dirt => 128,
            Habitat::Grass => 255,
        }
    }

    fn slot(self) -> usize {
        match self {
            Habitat::Other => 0,
            Habitat::Dirt => 1,
            Habitat::Grass => 2,
        }
    }

    const BY_SLOT: [Habitat; 3] = [Habitat::Other, Habitat::Dirt, Habitat::Grass];
}

impl fmt::Display for Habitat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Habitat::Other => "other",
            Habitat::Dirt => "dirt",
            Habitat::Grass => "grass",
        })
    }
}

/// `(h, s, v)` with hue in degrees `[0, 360)` and `s, v` in `[0, 1]`.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let r = r as f64 / 255.0;
    let g = g as f64 / 255.0;
    let b = b as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h % 360.0, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HsvThresholds {
    pub grass_hue: (f64, f64),
    pub grass_min_saturation: f64,
    pub grass_min_value: f64,
    pub dirt_max_saturation: f64,
    pub dirt_value: (f64, f64),
    /// Side of the square majority filter; 0 or 1 disables smoothing.
    pub smoothing: u32,
}

impl Default for HsvThresholds {
    fn default() -> Self {
        Self {
            grass_hue: (60.0, 170.0),
            grass_min_saturation: 0.15,
            grass_min_value: 0.1,
            dirt_max_saturation: 0.5,
            dirt_value: (0.15, 0.95),
            smoothing: 3,
        }
    }
}

impl HsvThresholds {
    pub fn classify(&self, h: f64, s: f64, v: f64) -> Habitat {
        let grass = h >= self.grass_hue.0
            && h <= self.grass_hue.1
            && s >= self.grass_min_saturation
            && v >= self.grass_min_value;
        if grass {
            Habitat::Grass
        } else if s < self.dirt_max_saturation && v >= self.dirt_value.0 && v <= self.dirt_value.1 {
            Habitat::Dirt
        } else {
            Habitat::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextMap {
    width: u32,
    height: u32,
    labels: Vec<Habitat>,
    pub thresholds: HsvThresholds,
}

impl ContextMap {
    pub fn from_labels(width: u32, height: u32, labels: Vec<Habitat>, thresholds: HsvThresholds) -> Self {
        assert_eq!(labels.len(), (width * height) as usize, "label count must match dims");
        Self {
            width,
            height,
            labels,
            thresholds,
        }
    }

    pub fn uniform(width: u32, height: u32, label: Habitat) -> Self {
        Self::from_labels(width, height, vec![label; (width * height) as usize], HsvThresholds::default())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> Habitat {
        self.labels[(y * self.width + x) as usize]
    }

    pub fn labels(&self) -> &[Habitat] {
        &self.labels
    }

    pub fn count(&self, label: Habitat) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    pub fn to_label_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([self.get(x, y).label_value()]))
    }

    /// Writes the label PNG and a JSON sidecar with the thresholds and counts.
    pub fn save(&self, png_path: impl AsRef<Path>) -> Result<()> {
        let png_path = png_path.as_ref();
        save_png(&self.to_label_image(), png_path)?;
        write_json(png_path.with_extension("json"), &self.sidecar())
    }

    pub fn sidecar(&self) -> ContextSidecar {
        ContextSidecar {
            width: self.width,
            height: self.height,
            thresholds: self.thresholds,
            label_values: LabelValues::default(),
            pixels_dirt: self.count(Habitat::Dirt),
            pixels_grass: self.count(Habitat::Grass),
            pixels_other: self.count(Habitat::Other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelValues {
    pub dirt: u8,
    pub grass: u8,
    pub other: u8,
}

impl Default for LabelValues {
    fn default() -> Self {
        Self {
            dirt: Habitat::Dirt.label_value(),
            grass: Habitat::Grass.label_value(),
            other: Habitat::Other.label_value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSidecar {
    pub width: u32,
    pub height: u32,
    pub thresholds: HsvThresholds,
    pub label_values: LabelValues,
    pub pixels_dirt: usize,
    pub pixels_grass: usize,
    pub pixels_other: usize,
}

/// Plurality vote in a `k×k` window clipped at the borders; a pixel keeps
/// its own label unless another label strictly outnumbers it.
fn majority_smooth(width: u32, height: u32, labels: &[Habitat], k: u32) -> Vec<Habitat> {
    let r = (k / 2) as i64;
    let (w, h) = (width as i64, height as i64);
    let mut out = Vec::with_capacity(labels.len());
    for y in 0..h {
        for x in 0..w {
            let mut counts = [0u32; 3];
            for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    counts[labels[(yy * w + xx) as usize].slot()] += 1;
                }
            }
            let own = labels[(y * w + x) as usize];
            let mut best = own;
            for (slot, &c) in counts.iter().enumerate() {
                if c > counts[best.slot()] {
                    best = Habitat::BY_SLOT[slot];
                }
            }
            out.push(best);
        }
    }
    out
}

pub fn build_context_map(image: &RgbImage, thresholds: &HsvThresholds) -> ContextMap {
    let labels: Vec<Habitat> = image
        .pixels()
        .map(|p| {
            let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
            thresholds.classify(h, s, v)
        })
        .collect();
    let labels = if thresholds.smoothing > 1 {
        majority_smooth(image.width(), image.height(), &labels, thresholds.smoothing)
    } else {
        labels
    };
    ContextMap::from_labels(image.width(), image.height(), labels, *thresholds)
}
