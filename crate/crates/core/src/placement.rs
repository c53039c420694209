//! Context-guided placement of patches on a background.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::BBox;
use crate::context::{ContextMap, Habitat};
use crate::error::{Error, Result};
use crate::mining::iou;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementPolicy {
    /// Probability that a patch targets dirt; the remainder targets grass.
    pub dirt_fraction: f64,
    pub max_attempts: u32,
    /// Largest IoU allowed against any occupied box.
    pub min_separation_iou: f64,
    /// Share of the footprint that must carry the target label.
    pub min_target_fraction: f64,
}

impl Default for PlacementPolicy {
    fn default() -> Self {
        Self {
            dirt_fraction: 0.9,
            max_attempts: 50,
            min_separation_iou: 0.0,
            min_target_fraction: 0.8,
        }
    }
}

impl PlacementPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dirt_fraction) {
            return Err(Error::InvalidArgument(format!("dirt_fraction {} outside [0, 1]", self.dirt_fraction)));
        }
        if !(0.0..=1.0).contains(&self.min_separation_iou) {
            return Err(Error::InvalidArgument(format!(
                "min_separation_iou {} outside [0, 1]",
                self.min_separation_iou
            )));
        }
        if !(self.min_target_fraction > 0.0 && self.min_target_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "min_target_fraction {} outside (0, 1]",
                self.min_target_fraction
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidArgument("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub top_left: (u32, u32),
    pub bbox: BBox,
    pub label: Habitat,
}

/// Outcome of one placement draw; `placement` is `None` when no admissible
/// position was found within the attempt budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementDraw {
    pub target: Habitat,
    pub placement: Option<Placement>,
}

/// Summed-area tables for dirt and grass over a context map.
pub struct PlacementSampler<'a> {
    cmap: &'a ContextMap,
    dirt: Vec<u32>,
    grass: Vec<u32>,
}

fn integral(cmap: &ContextMap, label: Habitat) -> Vec<u32> {
    let (w, h) = (cmap.width() as usize, cmap.height() as usize);
    let mut s = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += (cmap.get(x as u32, y as u32) == label) as u32;
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

impl<'a> PlacementSampler<'a> {
    pub fn new(cmap: &'a ContextMap) -> Self {
        Self {
            cmap,
            dirt: integral(cmap, Habitat::Dirt),
            grass: integral(cmap, Habitat::Grass),
        }
    }

    /// Pixels labelled `label` inside `[x, x+w) × [y, y+h)`.
    pub fn count(&self, label: Habitat, x: u32, y: u32, w: u32, h: u32) -> u32 {
        let table = match label {
            Habitat::Dirt => &self.dirt,
            Habitat::Grass => &self.grass,
            Habitat::Other => {
                let total = w * h;
                return total - self.count(Habitat::Dirt, x, y, w, h) - self.count(Habitat::Grass, x, y, w, h);
            }
        };
        let stride = self.cmap.width() as usize + 1;
        let at = |xx: u32, yy: u32| table[yy as usize * stride + xx as usize];
        at(x + w, y + h) + at(x, y) - at(x + w, y) - at(x, y + h)
    }

    /// Draws a target label, then up to `max_attempts` uniformly random
    /// top-left positions keeping a one-pixel margin to the image border.
    /// Accepted positions are uniform over all admissible ones.
    pub fn sample(
        &self,
        patch_dims: (u32, u32),
        policy: &PlacementPolicy,
        occupied: &[BBox],
        rng: &mut impl Rng,
    ) -> PlacementDraw {
        let target = if rng.gen_bool(policy.dirt_fraction) {
            Habitat::Dirt
        } else {
            Habitat::Grass
        };
        let (pw, ph) = patch_dims;
        let (w, h) = (self.cmap.width(), self.cmap.height());
        if pw == 0 || ph == 0 || pw + 2 > w || ph + 2 > h {
            return PlacementDraw { target, placement: None };
        }
        let need = (policy.min_target_fraction * (pw * ph) as f64).ceil() as u32;
        for _ in 0..policy.max_attempts {
            let x = rng.gen_range(1..=w - pw - 1);
            let y = rng.gen_range(1..=h - ph - 1);
            if self.count(target, x, y, pw, ph) < need {
                continue;
            }
            let bbox = BBox {
                x_min: x as f64,
                y_min: y as f64,
                x_max: (x + pw) as f64,
                y_max: (y + ph) as f64,
            };
            if occupied.iter().any(|o| iou(o, &bbox) > policy.min_separation_iou) {
                continue;
            }
            return PlacementDraw {
                target,
                placement: Some(Placement {
                    top_left: (x, y),
                    bbox,
                    label: target,
                }),
            };
        }
        PlacementDraw { target, placement: None }
    }
}

pub fn sample_placement(
    cmap: &ContextMap,
    patch_dims: (u32, u32),
    policy: &PlacementPolicy,
    occupied: &[BBox],
    rng: &mut impl Rng,
) -> PlacementDraw {
    PlacementSampler::new(cmap).sample(patch_dims, policy, occupied, rng)
}
