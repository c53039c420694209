//! Scalar-loop consistency loss with gradients via dense interpolation
//! matrices.

/// A `c×h×w` block stored as `[c][i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, v: vec![0.0; c * h * w] }
    }

    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.v[(c * self.h + i) * self.w + j]
    }

    pub fn at_mut(&mut self, c: usize, i: usize, j: usize) -> &mut f64 {
        &mut self.v[(c * self.h + i) * self.w + j]
    }
}

/// `dst×src` one-axis interpolation matrix.
pub fn axis_matrix(src: usize, dst: usize, bilinear: bool) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; src]; dst];
    for (o, row) in m.iter_mut().enumerate() {
        if bilinear {
            let mut x = (o as f64 + 0.5) * (src as f64) / (dst as f64) - 0.5;
            if x < 0.0 {
                x = 0.0;
            }
            let lo = x.floor() as usize;
            let lo = if lo > src - 1 { src - 1 } else { lo };
            let hi = if lo + 1 > src - 1 { src - 1 } else { lo + 1 };
            let t = x - lo as f64;
            if hi == lo {
                row[lo] += 1.0;
            } else {
                row[lo] += 1.0 - t;
                row[hi] += t;
            }
        } else {
            // integer scale factor: output o copies source o / factor
            let factor = dst / src;
            row[o / factor] = 1.0;
        }
    }
    m
}

pub fn upsample(x: &Map, h: usize, w: usize, bilinear: bool) -> Map {
    let uh = axis_matrix(x.h, h, bilinear);
    let uw = axis_matrix(x.w, w, bilinear);
    let mut out = Map::zeros(x.c, h, w);
    for c in 0..x.c {
        for o in 0..h {
            for p in 0..w {
                let mut s = 0.0;
                for a in 0..x.h {
                    for b in 0..x.w {
                        s += uh[o][a] * uw[p][b] * x.at(c, a, b);
                    }
                }
                *out.at_mut(c, o, p) = s;
            }
        }
    }
    out
}

/// Transpose of [`upsample`] applied to `g`.
pub fn upsample_adjoint(g: &Map, h: usize, w: usize, bilinear: bool) -> Map {
    let uh = axis_matrix(h, g.h, bilinear);
    let uw = axis_matrix(w, g.w, bilinear);
    let mut out = Map::zeros(g.c, h, w);
    for c in 0..g.c {
        for a in 0..h {
            for b in 0..w {
                let mut s = 0.0;
                for o in 0..g.h {
                    for p in 0..g.w {
                        s += uh[o][a] * uw[p][b] * g.at(c, o, p);
                    }
                }
                *out.at_mut(c, a, b) = s;
            }
        }
    }
    out
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Mse,
    Kl,
    Cos,
}

/// Per-pixel value and gradients of one term for channel vectors `a`, `b`.
pub fn pixel_term(term: Term, a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = a.len();
    match term {
        Term::Mse => {
            let mut v = 0.0;
            let mut ga = vec![0.0; n];
            let mut gb = vec![0.0; n];
            for k in 0..n {
                v += (a[k] - b[k]).powi(2);
                ga[k] = 2.0 * (a[k] - b[k]);
                gb[k] = -2.0 * (a[k] - b[k]);
            }
            (v, ga, gb)
        }
        Term::Kl => {
            let p = softmax(a);
            let q = softmax(b);
            let mut v = 0.0;
            for k in 0..n {
                v += p[k] * (p[k] / q[k]).ln();
            }
            // chain rule through the softmax Jacobian dp_m/da_k = p_m(δ_mk − p_k)
            let mut ga = vec![0.0; n];
            let mut gb = vec![0.0; n];
            for k in 0..n {
                for m in 0..n {
                    let dkl_dp = (p[m] / q[m]).ln() + 1.0;
                    let dp_da = p[m] * (if m == k { 1.0 } else { 0.0 } - p[k]);
                    ga[k] += dkl_dp * dp_da;
                    let dkl_dq = -p[m] / q[m];
                    let dq_db = q[m] * (if m == k { 1.0 } else { 0.0 } - q[k]);
                    gb[k] += dkl_dq * dq_db;
                }
            }
            (v, ga, gb)
        }
        Term::Cos => {
            let eps = 1e-12;
            let dot: f64 = (0..n).map(|k| a[k] * b[k]).sum();
            let na = (0..n).map(|k| a[k] * a[k]).sum::<f64>().sqrt();
            let nb = (0..n).map(|k| b[k] * b[k]).sum::<f64>().sqrt();
            let den = (na + eps) * (nb + eps);
            let v = 1.0 - dot / den;
            let mut ga = vec![0.0; n];
            let mut gb = vec![0.0; n];
            if na >= 1e-9 || nb >= 1e-9 {
                for k in 0..n {
                    // quotient rule on dot / ((|a|+ε)(|b|+ε))
                    let dden_da = if na > 0.0 { a[k] / na * (nb + eps) } else { 0.0 };
                    let dden_db = if nb > 0.0 { b[k] / nb * (na + eps) } else { 0.0 };
                    ga[k] = -(b[k] * den - dot * dden_da) / (den * den);
                    gb[k] = -(a[k] * den - dot * dden_db) / (den * den);
                }
            }
            (v, ga, gb)
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleLoss {
    pub mse: f64,
    pub kl: f64,
    pub cos: f64,
    pub total: f64,
    /// Gradient of the weighted total with respect to P3, P4, P5.
    pub grads: [Map; 3],
}

/// `pairs[t]` lists the level index pairs (0 = P3) for term `t` in the order
/// MSE, KL, cosine.
pub fn consistency(levels: &[Map; 3], pairs: &[Vec<(usize, usize)>; 3], weights: [f64; 3], bilinear: bool) -> OracleLoss {
    let (h, w) = (levels[0].h, levels[0].w);
    let up = [
        levels[0].clone(),
        upsample(&levels[1], h, w, bilinear),
        upsample(&levels[2], h, w, bilinear),
    ];
    let c = levels[0].c;
    let mut values = [0.0; 3];
    let mut g_up = [Map::zeros(c, h, w), Map::zeros(c, h, w), Map::zeros(c, h, w)];
    let terms = [Term::Mse, Term::Kl, Term::Cos];
    for t in 0..3 {
        for &(ia, ib) in &pairs[t] {
            for i in 0..h {
                for j in 0..w {
                    let a: Vec<f64> = (0..c).map(|k| up[ia].at(k, i, j)).collect();
                    let b: Vec<f64> = (0..c).map(|k| up[ib].at(k, i, j)).collect();
                    let (v, ga, gb) = pixel_term(terms[t], &a, &b);
                    values[t] += v / (h * w) as f64;
                    for k in 0..c {
                        *g_up[ia].at_mut(k, i, j) += weights[t] * ga[k] / (h * w) as f64;
                        *g_up[ib].at_mut(k, i, j) += weights[t] * gb[k] / (h * w) as f64;
                    }
                }
            }
        }
    }
    let [g3, g4, g5] = g_up;
    let grads = [
        g3,
        upsample_adjoint(&g4, levels[1].h, levels[1].w, bilinear),
        upsample_adjoint(&g5, levels[2].h, levels[2].w, bilinear),
    ];
    OracleLoss {
        mse: values[0],
        kl: values[1],
        cos: values[2],
        total: weights[0] * values[0] + weights[1] * values[1] + weights[2] * values[2],
        grads,
    }
}
