//! Multi-scale feature consistency losses with analytic gradients.
//!
//! Each pairwise loss compares two maps of identical shape pixel by pixel
//! and is normalised by `1/(H·W)`:
//!
//! * MSE: `‖a(i,j) − b(i,j)‖²`
//! * KL: `KL(softmax(a(i,j)) ‖ softmax(b(i,j)))`
//! * cosine: `1 − cos(a(i,j), b(i,j))`
//!
//! [`consistency_loss`] upsamples `P4`/`P5` to the `P3` grid, evaluates each
//! term over its configured level pairs and combines them as
//! `α·MSE + β·KL + γ·cos`. Gradients are returned at the original level
//! resolutions (back-projected through the upsampling operator).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    ensure_same_dims, log_softmax, upsample, upsample_backward, FeatureMap, Level, PyramidSet,
    UpsampleMode,
};

/// Added to each vector norm in the cosine term.
pub const COS_NORM_EPS: f64 = 1e-12;
/// Below this norm on both sides the cosine gradient is treated as zero.
pub const COS_ZERO_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative, got {all:?}"
            )));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidArgument("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Ordered pair of pyramid levels compared by one loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LevelPair(pub Level, pub Level);

impl fmt::Display for LevelPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0.name(), self.1.name())
    }
}

impl FromStr for LevelPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['-', ':'])
            .ok_or_else(|| Error::InvalidArgument(format!("level pair `{s}` must look like p3-p4")))?;
        Ok(LevelPair(a.parse()?, b.parse()?))
    }
}

impl Serialize for LevelPair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LevelPair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingTopology {
    pub mse_pairs: Vec<LevelPair>,
    pub kl_pairs: Vec<LevelPair>,
    pub cos_pairs: Vec<LevelPair>,
}

const CHAIN: [LevelPair; 2] = [LevelPair(Level::P3, Level::P4), LevelPair(Level::P4, Level::P5)];
const ANCHORED: [LevelPair; 2] = [LevelPair(Level::P3, Level::P4), LevelPair(Level::P3, Level::P5)];

impl Default for PairingTopology {
    fn default() -> Self {
        Self::literal()
    }
}

impl PairingTopology {
    /// MSE and KL chain `P3↔P̃4, P̃4↔P̃5`; cosine anchors on `P3`.
    pub fn literal() -> Self {
        Self {
            mse_pairs: CHAIN.to_vec(),
            kl_pairs: CHAIN.to_vec(),
            cos_pairs: ANCHORED.to_vec(),
        }
    }

    /// Every term uses `P3↔P̃4, P̃4↔P̃5`.
    pub fn chain() -> Self {
        Self {
            mse_pairs: CHAIN.to_vec(),
            kl_pairs: CHAIN.to_vec(),
            cos_pairs: CHAIN.to_vec(),
        }
    }

    /// Every term uses `P3↔P̃4, P3↔P̃5`.
    pub fn anchored() -> Self {
        Self {
            mse_pairs: ANCHORED.to_vec(),
            kl_pairs: ANCHORED.to_vec(),
            cos_pairs: ANCHORED.to_vec(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "literal" => Ok(Self::literal()),
            "chain" => Ok(Self::chain()),
            "anchored" | "anchor" => Ok(Self::anchored()),
            other => Err(Error::InvalidArgument(format!(
                "unknown topology preset `{other}` (expected literal, chain or anchored)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, pairs) in [
            ("mse_pairs", &self.mse_pairs),
            ("kl_pairs", &self.kl_pairs),
            ("cos_pairs", &self.cos_pairs),
        ] {
            if pairs.is_empty() {
                return Err(Error::InvalidArgument(format!("{name} must not be empty")));
            }
            if let Some(p) = pairs.iter().find(|p| p.0 == p.1) {
                return Err(Error::InvalidArgument(format!("{name}: pair {p} compares a level with itself")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlDirection {
    /// `KL(first ‖ second)`, finer level first.
    #[default]
    Forward,
    Reverse,
}

impl FromStr for KlDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" => Ok(KlDirection::Forward),
            "reverse" => Ok(KlDirection::Reverse),
            other => Err(Error::InvalidArgument(format!("unknown KL direction `{other}`"))),
        }
    }
}

/// Value of a pairwise loss and its gradients with respect to both inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub grad_a: FeatureMap,
    pub grad_b: FeatureMap,
}

/// Walks pixels in a fixed order, handing each pixel's channel vectors to
/// `f`, which returns the pixel term and writes per-channel gradients.
fn pixelwise(
    a: &FeatureMap,
    b: &FeatureMap,
    mut f: impl FnMut(&[f64], &[f64], &mut [f64], &mut [f64]) -> f64,
) -> Result<PairLoss> {
    ensure_same_dims(a, b)?;
    let (channels, height, width) = a.dims();
    let norm = 1.0 / (height * width) as f64;
    let mut ga = vec![0.0; a.values().len()];
    let mut gb = vec![0.0; a.values().len()];
    let mut va = vec![0.0; channels];
    let mut vb = vec![0.0; channels];
    let mut da = vec![0.0; channels];
    let mut db = vec![0.0; channels];
    let mut total = 0.0;
    for i in 0..height {
        for j in 0..width {
            for c in 0..channels {
                va[c] = a.get(c, i, j);
                vb[c] = b.get(c, i, j);
            }
            da.iter_mut().chain(db.iter_mut()).for_each(|d| *d = 0.0);
            total += f(&va, &vb, &mut da, &mut db);
            for c in 0..channels {
                let k = a.index(c, i, j);
                ga[k] = da[c] * norm;
                gb[k] = db[c] * norm;
            }
        }
    }
    Ok(PairLoss {
        value: total * norm,
        grad_a: FeatureMap::from_parts_unchecked(channels, height, width, ga),
        grad_b: FeatureMap::from_parts_unchecked(channels, height, width, gb),
    })
}

pub fn loss_mse(a: &FeatureMap, b: &FeatureMap) -> Result<PairLoss> {
    pixelwise(a, b, |va, vb, da, db| {
        let mut sq = 0.0;
        for c in 0..va.len() {
            let d = va[c] - vb[c];
            sq += d * d;
            da[c] = 2.0 * d;
            db[c] = -2.0 * d;
        }
        sq
    })
}

/// `KL(softmax(a) ‖ softmax(b))` per pixel. With `p = softmax(a)`,
/// `q = softmax(b)`: `∂/∂a_k = p_k (ln p_k − ln q_k − KL)` and
/// `∂/∂b_k = q_k − p_k`.
pub fn loss_kl(a: &FeatureMap, b: &FeatureMap, direction: KlDirection) -> Result<PairLoss> {
    if direction == KlDirection::Reverse {
        let r = loss_kl(b, a, KlDirection::Forward)?;
        return Ok(PairLoss {
            value: r.value,
            grad_a: r.grad_b,
            grad_b: r.grad_a,
        });
    }
    pixelwise(a, b, |va, vb, da, db| {
        let lp = log_softmax(va);
        let lq = log_softmax(vb);
        let kl: f64 = lp.iter().zip(&lq).map(|(p, q)| p.exp() * (p - q)).sum();
        for c in 0..va.len() {
            let p = lp[c].exp();
            let q = lq[c].exp();
            da[c] = p * (lp[c] - lq[c] - kl);
            db[c] = q - p;
        }
        kl
    })
}

pub fn loss_cos(a: &FeatureMap, b: &FeatureMap) -> Result<PairLoss> {
    pixelwise(a, b, |va, vb, da, db| {
        let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sa = na + COS_NORM_EPS;
        let sb = nb + COS_NORM_EPS;
        let cos = dot / (sa * sb);
        if na < COS_ZERO_NORM && nb < COS_ZERO_NORM {
            return 1.0 - cos;
        }
        // d(1 - cos)/da = -(b/(sa·sb) - dot·a/(na·sa²·sb))
        let ka = if na > 0.0 { dot / (na * sa * sa * sb) } else { 0.0 };
        let kb = if nb > 0.0 { dot / (nb * sb * sb * sa) } else { 0.0 };
        for c in 0..va.len() {
            da[c] = -(vb[c] / (sa * sb) - ka * va[c]);
            db[c] = -(va[c] / (sa * sb) - kb * vb[c]);
        }
        1.0 - cos
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    Mse,
    Kl,
    Cos,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyOptions {
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub topology: PairingTopology,
    #[serde(default)]
    pub upsample: UpsampleMode,
    #[serde(default)]
    pub kl_direction: KlDirection,
}

/// Gradients for each pyramid level at its own resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGrads {
    pub p3: FeatureMap,
    pub p4: FeatureMap,
    pub p5: FeatureMap,
}

impl LevelGrads {
    pub fn level(&self, level: Level) -> &FeatureMap {
        match level {
            Level::P3 => &self.p3,
            Level::P4 => &self.p4,
            Level::P5 => &self.p5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub mse: LevelGrads,
    pub kl: LevelGrads,
    pub cos: LevelGrads,
    /// `α·mse + β·kl + γ·cos`
    pub total: LevelGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_mse: f64,
    pub l_kl: f64,
    pub l_cos: f64,
    pub l_total: f64,
    pub weights: LossWeights,
    pub grads: LossGrads,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub l_mse: f64,
    pub l_kl: f64,
    pub l_cos: f64,
    pub l_total: f64,
}

impl LossReport {
    pub fn summary(&self) -> LossSummary {
        LossSummary {
            l_mse: self.l_mse,
            l_kl: self.l_kl,
            l_cos: self.l_cos,
            l_total: self.l_total,
        }
    }
}

fn accumulate(dst: &mut FeatureMap, src: &FeatureMap, k: f64) {
    for (d, s) in dst.values_mut().iter_mut().zip(src.values()) {
        *d += k * s;
    }
}

fn term_over_pairs(
    term: LossTerm,
    levels: &[FeatureMap; 3],
    pairs: &[LevelPair],
    kl_direction: KlDirection,
) -> Result<(f64, [FeatureMap; 3])> {
    let (c, h, w) = levels[0].dims();
    let mut grads = [
        FeatureMap::zeros(c, h, w)?,
        FeatureMap::zeros(c, h, w)?,
        FeatureMap::zeros(c, h, w)?,
    ];
    let mut value = 0.0;
    for pair in pairs {
        let (ia, ib) = (pair.0.ordinal(), pair.1.ordinal());
        let r = match term {
            LossTerm::Mse => loss_mse(&levels[ia], &levels[ib])?,
            LossTerm::Kl => loss_kl(&levels[ia], &levels[ib], kl_direction)?,
            LossTerm::Cos => loss_cos(&levels[ia], &levels[ib])?,
        };
        value += r.value;
        accumulate(&mut grads[ia], &r.grad_a, 1.0);
        accumulate(&mut grads[ib], &r.grad_b, 1.0);
    }
    Ok((value, grads))
}

fn back_project(
    grads: [FeatureMap; 3],
    pyr: &PyramidSet,
    mode: UpsampleMode,
) -> Result<LevelGrads> {
    let [g3, g4, g5] = grads;
    Ok(LevelGrads {
        p3: g3,
        p4: upsample_backward(&g4, pyr.p4().height(), pyr.p4().width(), mode)?,
        p5: upsample_backward(&g5, pyr.p5().height(), pyr.p5().width(), mode)?,
    })
}

/// Weighted multi-scale consistency loss over a pyramid.
pub fn consistency_loss(pyr: &PyramidSet, opts: &ConsistencyOptions) -> Result<LossReport> {
    opts.weights.validate()?;
    opts.topology.validate()?;
    let (_, h, w) = pyr.p3().dims();
    let levels = [
        pyr.p3().clone(),
        upsample(pyr.p4(), h, w, opts.upsample)?,
        upsample(pyr.p5(), h, w, opts.upsample)?,
    ];
    let (l_mse, g_mse) = term_over_pairs(LossTerm::Mse, &levels, &opts.topology.mse_pairs, opts.kl_direction)?;
    let (l_kl, g_kl) = term_over_pairs(LossTerm::Kl, &levels, &opts.topology.kl_pairs, opts.kl_direction)?;
    let (l_cos, g_cos) = term_over_pairs(LossTerm::Cos, &levels, &opts.topology.cos_pairs, opts.kl_direction)?;

    let mse = back_project(g_mse, pyr, opts.upsample)?;
    let kl = back_project(g_kl, pyr, opts.upsample)?;
    let cos = back_project(g_cos, pyr, opts.upsample)?;

    let LossWeights { alpha, beta, gamma } = opts.weights;
    let combine = |l: Level| -> FeatureMap {
        let mut t = FeatureMap::zeros(
            mse.level(l).channels(),
            mse.level(l).height(),
            mse.level(l).width(),
        )
        .expect("dims already validated");
        accumulate(&mut t, mse.level(l), alpha);
        accumulate(&mut t, kl.level(l), beta);
        accumulate(&mut t, cos.level(l), gamma);
        t
    };
    let total = LevelGrads {
        p3: combine(Level::P3),
        p4: combine(Level::P4),
        p5: combine(Level::P5),
    };

    Ok(LossReport {
        l_mse,
        l_kl,
        l_cos,
        l_total: alpha * l_mse + beta * l_kl + gamma * l_cos,
        weights: opts.weights,
        grads: LossGrads { mse, kl, cos, total },
    })
}
