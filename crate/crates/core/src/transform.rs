//! Per-patch geometric and photometric augmentation (scale, in-plane
//! rotation, value-channel brightness/contrast).

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::annotations::BBox;
use crate::context::rgb_to_hsv;
use crate::error::{Error, Result};
use crate::mining::Patch;

pub const SCALE_BOUNDS: (f64, f64) = (0.9, 1.1);
pub const ROTATION_BOUNDS: (f64, f64) = (-90.0, 90.0);
pub const BRIGHTNESS_BOUNDS: (f64, f64) = (-0.1, 0.1);
pub const CONTRAST_BOUNDS: (f64, f64) = (0.9, 1.1);
pub const MIN_PATCH_SIDE: u32 = 4;

fn within(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub scale: f64,
    pub rotation_deg: f64,
    /// Value-channel offset as a fraction of full scale.
    pub brightness_delta: f64,
    pub contrast_gain: f64,
    pub seed: u64,
}

impl AugmentParams {
    pub fn new(scale: f64, rotation_deg: f64, brightness_delta: f64, contrast_gain: f64, seed: u64) -> Result<Self> {
        let p = Self {
            scale,
            rotation_deg,
            brightness_delta,
            contrast_gain,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation_deg: 0.0,
            brightness_delta: 0.0,
            contrast_gain: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("scale", self.scale, SCALE_BOUNDS),
            ("rotation_deg", self.rotation_deg, ROTATION_BOUNDS),
            ("brightness_delta", self.brightness_delta, BRIGHTNESS_BOUNDS),
            ("contrast_gain", self.contrast_gain, CONTRAST_BOUNDS),
        ];
        for (name, v, bounds) in checks {
            if !within(v, bounds) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {v} outside [{}, {}]",
                    bounds.0, bounds.1
                )));
            }
        }
        Ok(())
    }
}

/// Sampling ranges for [`AugmentParams`]; each must lie inside the fixed
/// parameter bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaRanges {
    pub scale: (f64, f64),
    pub rotation_deg: (f64, f64),
    pub brightness_delta: (f64, f64),
    pub contrast_gain: (f64, f64),
}

impl Default for ThetaRanges {
    fn default() -> Self {
        Self {
            scale: SCALE_BOUNDS,
            rotation_deg: ROTATION_BOUNDS,
            brightness_delta: BRIGHTNESS_BOUNDS,
            contrast_gain: CONTRAST_BOUNDS,
        }
    }
}

impl ThetaRanges {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("scale", self.scale, SCALE_BOUNDS),
            ("rotation_deg", self.rotation_deg, ROTATION_BOUNDS),
            ("brightness_delta", self.brightness_delta, BRIGHTNESS_BOUNDS),
            ("contrast_gain", self.contrast_gain, CONTRAST_BOUNDS),
        ];
        for (name, (lo, hi), bounds) in checks {
            if !(lo <= hi && within(lo, bounds) && within(hi, bounds)) {
                return Err(Error::InvalidArgument(format!(
                    "{name} range [{lo}, {hi}] must be ordered and inside [{}, {}]",
                    bounds.0, bounds.1
                )));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl RngCore) -> AugmentParams {
        fn draw(rng: &mut impl RngCore, (lo, hi): (f64, f64)) -> f64 {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..=hi)
            }
        }
        AugmentParams {
            scale: draw(rng, self.scale),
            rotation_deg: draw(rng, self.rotation_deg),
            brightness_delta: draw(rng, self.brightness_delta),
            contrast_gain: draw(rng, self.contrast_gain),
            seed: rng.next_u64(),
        }
    }
}

/// Half-up rounding of a scaled side length.
pub fn scaled_len(len: u32, scale: f64) -> u32 {
    (len as f64 * scale + 0.5).floor().max(0.0) as u32
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let p = |xx: u32, yy: u32| img.get_pixel(xx, yy)[c] as f64;
        *o = (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0)) + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1));
    }
    out
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn scale_patch(p: &Patch, scale: f64) -> Result<Patch> {
    let (w, h) = p.pixels.dimensions();
    let (nw, nh) = (scaled_len(w, scale), scaled_len(h, scale));
    if nw < MIN_PATCH_SIDE || nh < MIN_PATCH_SIDE {
        return Err(Error::InvalidArgument(format!("scaled patch {nw}x{nh} is smaller than 4x4")));
    }
    if (nw, nh) == (w, h) {
        return Ok(p.clone());
    }
    let (sx, sy) = (w as f64 / nw as f64, h as f64 / nh as f64);
    let src = |o: u32, s: f64| (o as f64 + 0.5) * s - 0.5;
    let pixels = RgbImage::from_fn(nw, nh, |x, y| {
        let v = bilinear(&p.pixels, src(x, sx), src(y, sy));
        Rgb([to_u8(v[0]), to_u8(v[1]), to_u8(v[2])])
    });
    let mask = GrayImage::from_fn(nw, nh, |x, y| {
        let mx = (src(x, sx).round().clamp(0.0, (w - 1) as f64)) as u32;
        let my = (src(y, sy).round().clamp(0.0, (h - 1) as f64)) as u32;
        *p.mask.get_pixel(mx, my)
    });
    let (kx, ky) = (nw as f64 / w as f64, nh as f64 / h as f64);
    let b = p.object_box;
    Ok(Patch {
        pixels,
        mask,
        object_box: BBox {
            x_min: b.x_min * kx,
            y_min: b.y_min * ky,
            x_max: b.x_max * kx,
            y_max: b.y_max * ky,
        },
        ..p.clone()
    })
}

/// Counter-clockwise (as displayed) rotation of an offset from the centre,
/// with the y axis pointing down.
fn rotate_offset(dx: f64, dy: f64, cos: f64, sin: f64) -> (f64, f64) {
    (dx * cos + dy * sin, -dx * sin + dy * cos)
}

fn rotated_box(b: &BBox, (w, h): (u32, u32), (nw, nh): (u32, u32), cos: f64, sin: f64) -> BBox {
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (ncx, ncy) = (nw as f64 / 2.0, nh as f64 / 2.0);
    let corners = [(b.x_min, b.y_min), (b.x_max, b.y_min), (b.x_min, b.y_max), (b.x_max, b.y_max)];
    let mut out = BBox {
        x_min: f64::INFINITY,
        y_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for (x, y) in corners {
        let (rx, ry) = rotate_offset(x - cx, y - cy, cos, sin);
        let (x, y) = (rx + ncx, ry + ncy);
        out.x_min = out.x_min.min(x);
        out.y_min = out.y_min.min(y);
        out.x_max = out.x_max.max(x);
        out.y_max = out.y_max.max(y);
    }
    out.x_min = out.x_min.clamp(0.0, nw as f64);
    out.x_max = out.x_max.clamp(0.0, nw as f64);
    out.y_min = out.y_min.clamp(0.0, nh as f64);
    out.y_max = out.y_max.clamp(0.0, nh as f64);
    out
}

/// Exact quarter turn; `ccw` selects the direction.
fn quarter_turn(p: &Patch, ccw: bool) -> Patch {
    let (w, h) = p.pixels.dimensions();
    let src = |x: u32, y: u32| if ccw { (w - 1 - y, x) } else { (y, h - 1 - x) };
    let pixels = RgbImage::from_fn(h, w, |x, y| {
        let (sx, sy) = src(x, y);
        *p.pixels.get_pixel(sx, sy)
    });
    let mask = GrayImage::from_fn(h, w, |x, y| {
        let (sx, sy) = src(x, y);
        *p.mask.get_pixel(sx, sy)
    });
    let sin = if ccw { 1.0 } else { -1.0 };
    Patch {
        pixels,
        mask,
        object_box: rotated_box(&p.object_box, (w, h), (h, w), 0.0, sin),
        ..p.clone()
    }
}

fn rotate_patch(p: &Patch, deg: f64) -> Result<Patch> {
    if deg == 0.0 {
        return Ok(p.clone());
    }
    if deg == 90.0 || deg == -90.0 {
        return Ok(quarter_turn(p, deg > 0.0));
    }
    let (w, h) = p.pixels.dimensions();
    let (sin, cos) = deg.to_radians().sin_cos();
    let side = |len: f64| (len - 1e-9).round().max(1.0) as u32;
    let nw = side(w as f64 * cos.abs() + h as f64 * sin.abs());
    let nh = side(w as f64 * sin.abs() + h as f64 * cos.abs());
    if nw < MIN_PATCH_SIDE || nh < MIN_PATCH_SIDE {
        return Err(Error::InvalidArgument(format!("rotated patch {nw}x{nh} is smaller than 4x4")));
    }
    // pixel-index centres
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (ncx, ncy) = ((nw as f64 - 1.0) / 2.0, (nh as f64 - 1.0) / 2.0);
    let tol = 1e-9;
    let mut pixels = RgbImage::new(nw, nh);
    let mut mask = GrayImage::new(nw, nh);
    for y in 0..nh {
        for x in 0..nw {
            // inverse rotation back into the source
            let (dx, dy) = rotate_offset(x as f64 - ncx, y as f64 - ncy, cos, -sin);
            let (sx, sy) = (dx + cx, dy + cy);
            let inside = sx >= -tol && sy >= -tol && sx <= (w - 1) as f64 + tol && sy <= (h - 1) as f64 + tol;
            if !inside {
                continue;
            }
            let mx = sx.round().clamp(0.0, (w - 1) as f64) as u32;
            let my = sy.round().clamp(0.0, (h - 1) as f64) as u32;
            if p.mask.get_pixel(mx, my)[0] == 0 {
                continue;
            }
            let v = bilinear(&p.pixels, sx, sy);
            pixels.put_pixel(x, y, Rgb([to_u8(v[0]), to_u8(v[1]), to_u8(v[2])]));
            mask.put_pixel(x, y, Luma([255]));
        }
    }
    Ok(Patch {
        pixels,
        mask,
        object_box: rotated_box(&p.object_box, (w, h), (nw, nh), cos, sin),
        ..p.clone()
    })
}

/// `v' = clamp(gain·(v − 0.5) + 0.5 + delta)` on the HSV value channel with
/// hue and saturation held fixed.
pub fn adjust_illumination(img: &RgbImage, brightness_delta: f64, contrast_gain: f64) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y);
        let (_, _, v) = rgb_to_hsv(p[0], p[1], p[2]);
        let nv = (contrast_gain * (v - 0.5) + 0.5 + brightness_delta).clamp(0.0, 1.0);
        if v == 0.0 {
            let g = to_u8(nv * 255.0);
            return Rgb([g, g, g]);
        }
        let k = nv / v;
        Rgb([to_u8(p[0] as f64 * k), to_u8(p[1] as f64 * k), to_u8(p[2] as f64 * k)])
    })
}

/// Scale → rotate → illumination. The object box follows the geometry as an
/// axis-aligned bound.
pub fn transform_patch(p: &Patch, theta: &AugmentParams) -> Result<Patch> {
    theta.validate()?;
    if p.width() < MIN_PATCH_SIDE || p.height() < MIN_PATCH_SIDE {
        return Err(Error::InvalidArgument(format!(
            "patch {}x{} is smaller than 4x4",
            p.width(),
            p.height()
        )));
    }
    let scaled = scale_patch(p, theta.scale)?;
    let mut rotated = rotate_patch(&scaled, theta.rotation_deg)?;
    if theta.brightness_delta != 0.0 || theta.contrast_gain != 1.0 {
        rotated.pixels = adjust_illumination(&rotated.pixels, theta.brightness_delta, theta.contrast_gain);
    }
    Ok(rotated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::PatchOrigin;

    fn patch(w: u32, h: u32) -> Patch {
        Patch {
            pixels: RgbImage::from_fn(w, h, |x, y| Rgb([(x * 5) as u8, (y * 7) as u8, ((x * y) % 200) as u8 + 20])),
            mask: Patch::full_mask(w, h),
            origin: PatchOrigin::Fn,
            class_id: 0,
            source_image: "t".into(),
            source_bbox: BBox::new(0.0, 0.0, w as f64, h as f64).unwrap(),
            object_box: {
                let (ix, iy) = ((w / 4).min(4) as f64, (h / 4).min(4) as f64);
                BBox::new(ix, iy, w as f64 - ix, h as f64 - iy).unwrap()
            },
        }
    }

    #[test]
    fn identity_is_pixel_exact() {
        let p = patch(21, 17);
        assert_eq!(transform_patch(&p, &AugmentParams::identity()).unwrap(), p);
    }

    #[test]
    fn neutral_illumination_is_exact() {
        let p = patch(20, 20);
        assert_eq!(adjust_illumination(&p.pixels, 0.0, 1.0), p.pixels);
    }

    #[test]
    fn scale_rounds_half_up() {
        assert_eq!(scaled_len(40, 1.1), 44);
        assert_eq!(scaled_len(5, 0.9), 5);
        assert_eq!(scaled_len(15, 0.9), 14);
        let t = AugmentParams::new(1.1, 0.0, 0.0, 1.0, 0).unwrap();
        let out = transform_patch(&patch(40, 40), &t).unwrap();
        assert_eq!(out.pixels.dimensions(), (44, 44));
        assert!((out.object_box.x_max - 36.0 * 1.1).abs() < 1e-9);
    }

    #[test]
    fn four_quarter_turns_restore() {
        let p = patch(24, 24);
        let t = AugmentParams::new(1.0, 90.0, 0.0, 1.0, 0).unwrap();
        let mut q = p.clone();
        for _ in 0..4 {
            q = transform_patch(&q, &t).unwrap();
            assert_eq!(q.pixels.dimensions(), (24, 24));
        }
        assert_eq!(q.pixels, p.pixels);
        assert_eq!(q.object_box, p.object_box);
    }

    #[test]
    fn quarter_turn_direction() {
        let p = patch(10, 6);
        let q = transform_patch(&p, &AugmentParams::new(1.0, 90.0, 0.0, 1.0, 0).unwrap()).unwrap();
        assert_eq!(q.pixels.dimensions(), (6, 10));
        // top-right source pixel lands top-left
        assert_eq!(q.pixels.get_pixel(0, 0), p.pixels.get_pixel(9, 0));
        let r = transform_patch(&p, &AugmentParams::new(1.0, -90.0, 0.0, 1.0, 0).unwrap()).unwrap();
        assert_eq!(r.pixels.get_pixel(0, 0), p.pixels.get_pixel(0, 5));
    }

    #[test]
    fn general_rotation_grows_aabb_and_masks_corners() {
        let p = patch(40, 40);
        let q = transform_patch(&p, &AugmentParams::new(1.0, 45.0, 0.0, 1.0, 0).unwrap()).unwrap();
        assert_eq!(q.pixels.dimensions(), (57, 57));
        assert_eq!(q.mask.get_pixel(0, 0)[0], 0);
        assert_eq!(q.mask.get_pixel(28, 28)[0], 255);
        let b = q.object_box;
        assert!(b.x_min >= 0.0 && b.x_max <= 57.0);
        // the 32x32 object box rotated by 45° spans 32·√2
        assert!((b.width() - 32.0 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn brightness_and_contrast_move_value() {
        let img = RgbImage::from_pixel(4, 4, Rgb([100, 50, 50]));
        let brighter = adjust_illumination(&img, 0.1, 1.0);
        assert!(brighter.get_pixel(0, 0)[0] > 100);
        let black = RgbImage::from_pixel(4, 4, Rgb([0, 0, 0]));
        let lifted = adjust_illumination(&black, 0.1, 1.0);
        assert_eq!(lifted.get_pixel(0, 0)[0], lifted.get_pixel(0, 0)[2]);
    }

    #[test]
    fn rejects_tiny_and_out_of_range() {
        assert!(transform_patch(&patch(3, 8), &AugmentParams::identity()).is_err());
        assert!(AugmentParams::new(1.2, 0.0, 0.0, 1.0, 0).is_err());
        assert!(AugmentParams::new(1.0, 91.0, 0.0, 1.0, 0).is_err());
        let bad = ThetaRanges {
            scale: (0.8, 1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
