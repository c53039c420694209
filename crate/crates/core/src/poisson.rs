//! Gradient-domain (seamless clone) blending.
//!
//! Inside the blend region Ω the output solves `Δf = Δg` per channel, where
//! `g` is the source patch, subject to `f = background` on the pixels
//! bordering Ω. Ω is the patch mask eroded by one pixel, so every neighbour
//! of Ω lies inside the patch rectangle. The 5-point system is symmetric
//! positive definite and solved with conjugate gradients.

use image::{GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendOptions {
    /// Stop once `‖r‖₂ ≤ tolerance·‖b‖₂`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for BlendOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

/// Sparse SPD operator `4·x_p − Σ_{q ∈ N(p) ∩ Ω} x_q` over the Ω pixels.
struct MaskedLaplacian {
    /// Ω-neighbour indices per unknown.
    neighbours: Vec<Vec<usize>>,
}

impl MaskedLaplacian {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (p, nb) in self.neighbours.iter().enumerate() {
            let mut v = 4.0 * x[p];
            for &q in nb {
                v -= x[q];
            }
            out[p] = v;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn conjugate_gradient(a: &MaskedLaplacian, b: &[f64], x: &mut [f64], opts: &BlendOptions) -> SolveStats {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    let mut ax = vec![0.0; n];
    a.apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    let mut rr = dot(&r, &r);
    let target = if b_norm > 0.0 { opts.tolerance * b_norm } else { 0.0 };
    if rr.sqrt() <= target || rr == 0.0 {
        return SolveStats {
            iterations: 0,
            relative_residual: if b_norm > 0.0 { rr.sqrt() / b_norm } else { rr.sqrt() },
            converged: true,
        };
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut it = 0;
    while it < opts.max_iterations {
        a.apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target || rr_new == 0.0 {
            rr = rr_new;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    let res = rr.sqrt();
    SolveStats {
        iterations: it,
        relative_residual: if b_norm > 0.0 { res / b_norm } else { res },
        converged: res <= target || rr == 0.0,
    }
}

/// Solved blend over the patch rectangle, before quantisation.
#[derive(Debug, Clone)]
pub struct BlendField {
    pub top_left: (u32, u32),
    pub width: u32,
    pub height: u32,
    /// Row-major over the patch rectangle; Ω pixels carry the solution,
    /// all other pixels the background value.
    pub values: Vec<[f64; 3]>,
    /// Ω membership, row-major over the patch rectangle.
    pub interior: Vec<bool>,
    pub stats: [SolveStats; 3],
}

impl BlendField {
    pub fn at(&self, x: u32, y: u32) -> [f64; 3] {
        self.values[(y * self.width + x) as usize]
    }

    pub fn is_interior(&self, x: u32, y: u32) -> bool {
        self.interior[(y * self.width + x) as usize]
    }
}

/// Ω: mask pixels whose 4-neighbours are all valid mask pixels inside the
/// patch rectangle.
pub fn blend_interior(mask: &GrayImage) -> Vec<bool> {
    let (w, h) = mask.dimensions();
    let valid = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && mask.get_pixel(x as u32, y as u32)[0] != 0;
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            out.push(valid(x, y) && valid(x - 1, y) && valid(x + 1, y) && valid(x, y - 1) && valid(x, y + 1));
        }
    }
    out
}

const NEIGHBOURS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

pub fn solve_blend(
    background: &RgbImage,
    patch: &RgbImage,
    top_left: (u32, u32),
    mask: &GrayImage,
    opts: &BlendOptions,
) -> Result<BlendField> {
    let (pw, ph) = patch.dimensions();
    if mask.dimensions() != (pw, ph) {
        return Err(Error::DimMismatch(format!(
            "mask {:?} vs patch {:?}",
            mask.dimensions(),
            (pw, ph)
        )));
    }
    let (bw, bh) = background.dimensions();
    let (x0, y0) = top_left;
    if x0 < 1 || y0 < 1 || x0 as u64 + pw as u64 + 1 > bw as u64 || y0 as u64 + ph as u64 + 1 > bh as u64 {
        return Err(Error::InvalidArgument(format!(
            "patch {pw}x{ph} at ({x0},{y0}) must sit strictly inside the {bw}x{bh} background"
        )));
    }
    let interior = blend_interior(mask);
    let mut index = vec![usize::MAX; interior.len()];
    let mut cells = Vec::new();
    for (k, &inside) in interior.iter().enumerate() {
        if inside {
            index[k] = cells.len();
            cells.push(((k as u32) % pw, (k as u32) / pw));
        }
    }
    if cells.is_empty() {
        return Err(Error::InvalidArgument("blend mask has an empty interior".into()));
    }
    let at = |x: u32, y: u32| (y * pw + x) as usize;
    let neighbours: Vec<Vec<usize>> = cells
        .iter()
        .map(|&(x, y)| {
            NEIGHBOURS
                .iter()
                .map(|(dx, dy)| at((x as i64 + dx) as u32, (y as i64 + dy) as u32))
                .filter(|&k| interior[k])
                .map(|k| index[k])
                .collect()
        })
        .collect();
    let op = MaskedLaplacian { neighbours };

    let bg = |x: u32, y: u32, c: usize| background.get_pixel(x0 + x, y0 + y)[c] as f64;
    let src = |x: u32, y: u32, c: usize| patch.get_pixel(x, y)[c] as f64;

    let mut values: Vec<[f64; 3]> = (0..ph)
        .flat_map(|y| (0..pw).map(move |x| (x, y)))
        .map(|(x, y)| [bg(x, y, 0), bg(x, y, 1), bg(x, y, 2)])
        .collect();
    let mut stats = [SolveStats {
        iterations: 0,
        relative_residual: 0.0,
        converged: true,
    }; 3];

    for c in 0..3 {
        let rhs: Vec<f64> = cells
            .iter()
            .map(|&(x, y)| {
                let g = src(x, y, c);
                let mut v = 0.0;
                for (dx, dy) in NEIGHBOURS {
                    let (nx, ny) = ((x as i64 + dx) as u32, (y as i64 + dy) as u32);
                    v += g - src(nx, ny, c);
                    if !interior[at(nx, ny)] {
                        v += bg(nx, ny, c);
                    }
                }
                v
            })
            .collect();
        let mut x: Vec<f64> = cells.iter().map(|&(x, y)| src(x, y, c)).collect();
        stats[c] = conjugate_gradient(&op, &rhs, &mut x, opts);
        if !stats[c].converged {
            log::warn!(
                "poisson solve channel {c}: stopped after {} iterations at relative residual {:.3e}",
                stats[c].iterations,
                stats[c].relative_residual
            );
        }
        for (&(px, py), v) in cells.iter().zip(x) {
            values[at(px, py)][c] = v;
        }
    }

    Ok(BlendField {
        top_left,
        width: pw,
        height: ph,
        values,
        interior,
        stats,
    })
}

/// Seamless-clone `patch` into `background` at `top_left`. Pixels outside Ω
/// are left untouched.
pub fn poisson_blend(
    background: &RgbImage,
    patch: &RgbImage,
    top_left: (u32, u32),
    mask: &GrayImage,
    opts: &BlendOptions,
) -> Result<RgbImage> {
    let field = solve_blend(background, patch, top_left, mask, opts)?;
    let mut out = background.clone();
    apply_field(&mut out, &field);
    Ok(out)
}

pub fn apply_field(out: &mut RgbImage, field: &BlendField) {
    let (x0, y0) = field.top_left;
    for y in 0..field.height {
        for x in 0..field.width {
            if field.is_interior(x, y) {
                let v = field.at(x, y);
                let q = |c: usize| v[c].round().clamp(0.0, 255.0) as u8;
                out.put_pixel(x0 + x, y0 + y, Rgb([q(0), q(1), q(2)]));
            }
        }
    }
}
