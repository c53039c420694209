//! Central finite-difference validation of the analytic loss gradients.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{
    consistency_loss, loss_cos, loss_kl, loss_mse, ConsistencyOptions, PairLoss,
};
use crate::tensor::{FeatureMap, PyramidSet};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for relative error, so coordinates whose true gradient
/// is ~0 are judged on absolute deviation.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradcheckOp {
    Mse,
    Kl,
    Cos,
    Combined,
}

impl fmt::Display for GradcheckOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradcheckOp::Mse => "mse",
            GradcheckOp::Kl => "kl",
            GradcheckOp::Cos => "cos",
            GradcheckOp::Combined => "combined",
        })
    }
}

impl FromStr for GradcheckOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Ok(GradcheckOp::Mse),
            "kl" => Ok(GradcheckOp::Kl),
            "cos" | "cosine" => Ok(GradcheckOp::Cos),
            "combined" => Ok(GradcheckOp::Combined),
            other => Err(Error::InvalidArgument(format!("unknown gradcheck op `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    pub op: GradcheckOp,
    /// `(C, H, W)`; for `combined` these are the P3 dims.
    pub dims: (usize, usize, usize),
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    #[serde(default)]
    pub loss: ConsistencyOptions,
}

impl GradcheckConfig {
    pub fn new(op: GradcheckOp, dims: (usize, usize, usize), seed: u64) -> Self {
        Self {
            op,
            dims,
            seed,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            loss: ConsistencyOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub op: GradcheckOp,
    pub dims: (usize, usize, usize),
    pub seed: u64,
    pub step: f64,
    pub coordinates: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Random map with entries uniform in `[-1, 1)`.
pub fn random_map(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Result<FeatureMap> {
    FeatureMap::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
}

pub fn random_pyramid(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Result<PyramidSet> {
    if !h.is_multiple_of(4) || !w.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "pyramid P3 dims {h}x{w} must be divisible by 4"
        )));
    }
    let p3 = random_map(rng, c, h, w)?;
    let p4 = random_map(rng, c, h / 2, w / 2)?;
    let p5 = random_map(rng, c, h / 4, w / 4)?;
    PyramidSet::new(p3, p4, p5)
}

/// Central differences of `f` over every coordinate of every input block.
pub fn numeric_gradient(
    inputs: &[FeatureMap],
    step: f64,
    f: impl Fn(&[FeatureMap]) -> Result<f64>,
) -> Result<Vec<Vec<f64>>> {
    let mut work: Vec<FeatureMap> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for b in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[b].values().len());
        for k in 0..inputs[b].values().len() {
            let x0 = inputs[b].values()[k];
            work[b].values_mut()[k] = x0 + step;
            let fp = f(&work)?;
            work[b].values_mut()[k] = x0 - step;
            let fm = f(&work)?;
            work[b].values_mut()[k] = x0;
            g.push((fp - fm) / (2.0 * step));
        }
        out.push(g);
    }
    Ok(out)
}

pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {}", cfg.step)));
    }
    let (c, h, w) = cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kl_dir = cfg.loss.kl_direction;

    let (inputs, analytic, numeric) = match cfg.op {
        GradcheckOp::Combined => {
            let pyr = random_pyramid(&mut rng, c, h, w)?;
            let report = consistency_loss(&pyr, &cfg.loss)?;
            let g = &report.grads.total;
            let analytic = vec![
                g.p3.values().to_vec(),
                g.p4.values().to_vec(),
                g.p5.values().to_vec(),
            ];
            let inputs = pyr.into_levels().to_vec();
            let numeric = numeric_gradient(&inputs, cfg.step, |x| {
                let p = PyramidSet::new(x[0].clone(), x[1].clone(), x[2].clone())?;
                Ok(consistency_loss(&p, &cfg.loss)?.l_total)
            })?;
            (inputs, analytic, numeric)
        }
        op => {
            let pair_fn = move |a: &FeatureMap, b: &FeatureMap| -> Result<PairLoss> {
                match op {
                    GradcheckOp::Mse => loss_mse(a, b),
                    GradcheckOp::Kl => loss_kl(a, b, kl_dir),
                    _ => loss_cos(a, b),
                }
            };
            let a = random_map(&mut rng, c, h, w)?;
            let b = random_map(&mut rng, c, h, w)?;
            let r = pair_fn(&a, &b)?;
            let analytic = vec![r.grad_a.values().to_vec(), r.grad_b.values().to_vec()];
            let inputs = vec![a, b];
            let numeric = numeric_gradient(&inputs, cfg.step, |x| Ok(pair_fn(&x[0], &x[1])?.value))?;
            (inputs, analytic, numeric)
        }
    };

    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut coordinates = 0;
    for (an, nu) in analytic.iter().zip(&numeric) {
        for (x, y) in an.iter().zip(nu) {
            let abs = (x - y).abs();
            let rel = abs / x.abs().max(y.abs()).max(RELATIVE_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
            coordinates += 1;
        }
    }
    debug_assert_eq!(coordinates, inputs.iter().map(|m| m.values().len()).sum::<usize>());

    Ok(GradcheckReport {
        op: cfg.op,
        dims: cfg.dims,
        seed: cfg.seed,
        step: cfg.step,
        coordinates,
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        tolerance: cfg.tolerance,
        passed: max_rel < cfg.tolerance,
    })
}
