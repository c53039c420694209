//! Dense `C×H×W` feature maps for pyramid levels.
//!
//! Values are stored row-major in `[c][i][j]` order and kept in `f64`; the
//! on-disk container stores `f32` and widens on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"RSPT";
pub const TENSOR_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
/// magic + version + dtype + reserved + C + H + W
pub const TENSOR_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        let len = checked_len(channels, height, width)?;
        if values.len() != len {
            return Err(Error::DimMismatch(format!(
                "{channels}x{height}x{width} map needs {len} values, got {}",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {} at flat index {k}",
                values[k]
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        let len = checked_len(channels, height, width)?;
        Self::new(channels, height, width, vec![value; len])
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let len = checked_len(channels, height, width)?;
        let mut values = Vec::with_capacity(len);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    values.push(f(c, i, j));
                }
            }
        }
        Self::new(channels, height, width, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height + i) * self.width + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.values[self.index(c, i, j)]
    }

    /// Channel vector at pixel `(i, j)`.
    pub fn pixel(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, i, j)).collect()
    }

    pub fn same_dims(&self, other: &FeatureMap) -> bool {
        self.dims() == other.dims()
    }

    /// Element-wise `self + k·other`. Both maps must share dims.
    pub fn add_scaled(&self, other: &FeatureMap, k: f64) -> Result<FeatureMap> {
        ensure_same_dims(self, other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + k * b)
            .collect();
        FeatureMap::new(self.channels, self.height, self.width, values)
    }

    pub fn scale(&self, k: f64) -> Result<FeatureMap> {
        let values = self.values.iter().map(|v| v * k).collect();
        FeatureMap::new(self.channels, self.height, self.width, values)
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> Result<f64> {
        ensure_same_dims(self, other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Internal constructor for values known to be finite and correctly sized.
    pub(crate) fn from_parts_unchecked(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            values,
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

fn checked_len(channels: usize, height: usize, width: usize) -> Result<usize> {
    channels
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "dimension overflow for {channels}x{height}x{width}"
            ))
        })
}

pub(crate) fn ensure_same_dims(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::DimMismatch(format!(
            "{:?} vs {:?}",
            a.dims(),
            b.dims()
        )))
    }
}

/// Pyramid level identifiers. `P4`/`P5` refer to the upsampled forms when
/// used inside a loss pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    P3,
    P4,
    P5,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::P3, Level::P4, Level::P5];

    pub fn ordinal(self) -> usize {
        match self {
            Level::P3 => 0,
            Level::P4 => 1,
            Level::P5 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::P3 => "p3",
            Level::P4 => "p4",
            Level::P5 => "p5",
        }
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p3" => Ok(Level::P3),
            "p4" => Ok(Level::P4),
            "p5" => Ok(Level::P5),
            other => Err(Error::InvalidArgument(format!("unknown pyramid level `{other}`"))),
        }
    }
}

/// Three pyramid levels with a shared channel count and exact dyadic spatial
/// relation: `P4` is half and `P5` a quarter of `P3` in each spatial dim.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidSet {
    p3: FeatureMap,
    p4: FeatureMap,
    p5: FeatureMap,
}

impl PyramidSet {
    pub fn new(p3: FeatureMap, p4: FeatureMap, p5: FeatureMap) -> Result<Self> {
        let (c, h, w) = p3.dims();
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::DimMismatch(format!(
                "P3 spatial dims {h}x{w} must be divisible by 4"
            )));
        }
        if p4.dims() != (c, h / 2, w / 2) {
            return Err(Error::DimMismatch(format!(
                "P4 is {:?}, expected {:?}",
                p4.dims(),
                (c, h / 2, w / 2)
            )));
        }
        if p5.dims() != (c, h / 4, w / 4) {
            return Err(Error::DimMismatch(format!(
                "P5 is {:?}, expected {:?}",
                p5.dims(),
                (c, h / 4, w / 4)
            )));
        }
        Ok(Self { p3, p4, p5 })
    }

    pub fn p3(&self) -> &FeatureMap {
        &self.p3
    }

    pub fn p4(&self) -> &FeatureMap {
        &self.p4
    }

    pub fn p5(&self) -> &FeatureMap {
        &self.p5
    }

    pub fn level(&self, level: Level) -> &FeatureMap {
        match level {
            Level::P3 => &self.p3,
            Level::P4 => &self.p4,
            Level::P5 => &self.p5,
        }
    }

    pub fn into_levels(self) -> [FeatureMap; 3] {
        [self.p3, self.p4, self.p5]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Bilinear,
}

impl std::str::FromStr for UpsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nearest" => Ok(UpsampleMode::Nearest),
            "bilinear" => Ok(UpsampleMode::Bilinear),
            other => Err(Error::InvalidArgument(format!("unknown upsample mode `{other}`"))),
        }
    }
}

/// One-dimensional interpolation taps: output index `o` reads
/// `w0·src[i0] + w1·src[i1]`.
#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

fn axis_taps(src: usize, dst: usize, mode: UpsampleMode) -> Vec<Tap> {
    match mode {
        UpsampleMode::Nearest => (0..dst)
            .map(|o| {
                let i = (o * src) / dst;
                Tap {
                    i0: i,
                    i1: i,
                    w0: 1.0,
                    w1: 0.0,
                }
            })
            .collect(),
        UpsampleMode::Bilinear => {
            let ratio = src as f64 / dst as f64;
            (0..dst)
                .map(|o| {
                    // half-pixel centres, corners not aligned
                    let x = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
                    let i0 = (x.floor() as usize).min(src - 1);
                    let i1 = (i0 + 1).min(src - 1);
                    let frac = if i1 == i0 { 0.0 } else { x - i0 as f64 };
                    Tap {
                        i0,
                        i1,
                        w0: 1.0 - frac,
                        w1: frac,
                    }
                })
                .collect()
        }
    }
}

fn check_upsample_target(src: &FeatureMap, target_h: usize, target_w: usize) -> Result<()> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidArgument("upsample target dims must be positive".into()));
    }
    if target_h < src.height || target_w < src.width {
        return Err(Error::InvalidArgument(format!(
            "upsample target {target_h}x{target_w} smaller than source {}x{}",
            src.height, src.width
        )));
    }
    checked_len(src.channels, target_h, target_w).map(|_| ())
}

pub fn upsample(
    src: &FeatureMap,
    target_h: usize,
    target_w: usize,
    mode: UpsampleMode,
) -> Result<FeatureMap> {
    check_upsample_target(src, target_h, target_w)?;
    if (target_h, target_w) == (src.height, src.width) {
        return Ok(src.clone());
    }
    let rows = axis_taps(src.height, target_h, mode);
    let cols = axis_taps(src.width, target_w, mode);
    let mut out = Vec::with_capacity(src.channels * target_h * target_w);
    for c in 0..src.channels {
        for r in &rows {
            for q in &cols {
                let v = r.w0 * (q.w0 * src.get(c, r.i0, q.i0) + q.w1 * src.get(c, r.i0, q.i1))
                    + r.w1 * (q.w0 * src.get(c, r.i1, q.i0) + q.w1 * src.get(c, r.i1, q.i1));
                out.push(v);
            }
        }
    }
    Ok(FeatureMap::from_parts_unchecked(
        src.channels,
        target_h,
        target_w,
        out,
    ))
}

/// Adjoint of [`upsample`]: maps a gradient at the upsampled resolution back
/// onto the source grid. Nearest scatters-adds; bilinear applies the
/// transposed interpolation weights.
pub fn upsample_backward(
    grad_out: &FeatureMap,
    src_h: usize,
    src_w: usize,
    mode: UpsampleMode,
) -> Result<FeatureMap> {
    let (channels, target_h, target_w) = grad_out.dims();
    if src_h == 0 || src_w == 0 || src_h > target_h || src_w > target_w {
        return Err(Error::InvalidArgument(format!(
            "cannot back-project {target_h}x{target_w} onto {src_h}x{src_w}"
        )));
    }
    if (target_h, target_w) == (src_h, src_w) {
        return Ok(grad_out.clone());
    }
    let rows = axis_taps(src_h, target_h, mode);
    let cols = axis_taps(src_w, target_w, mode);
    let mut acc = vec![0.0; channels * src_h * src_w];
    let at = |c: usize, i: usize, j: usize| (c * src_h + i) * src_w + j;
    for c in 0..channels {
        for (oi, r) in rows.iter().enumerate() {
            for (oj, q) in cols.iter().enumerate() {
                let g = grad_out.get(c, oi, oj);
                acc[at(c, r.i0, q.i0)] += g * r.w0 * q.w0;
                acc[at(c, r.i0, q.i1)] += g * r.w0 * q.w1;
                acc[at(c, r.i1, q.i0)] += g * r.w1 * q.w0;
                acc[at(c, r.i1, q.i1)] += g * r.w1 * q.w1;
            }
        }
    }
    Ok(FeatureMap::from_parts_unchecked(channels, src_h, src_w, acc))
}

/// Numerically stable log-softmax of one channel vector.
pub(crate) fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    v.iter().map(|x| x - lse).collect()
}

pub(crate) fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

/// Per-pixel softmax over the channel axis.
pub fn channel_softmax(x: &FeatureMap) -> FeatureMap {
    let (channels, height, width) = x.dims();
    let mut out = vec![0.0; x.values.len()];
    let mut buf = vec![0.0; channels];
    for i in 0..height {
        for j in 0..width {
            for (c, b) in buf.iter_mut().enumerate() {
                *b = x.get(c, i, j);
            }
            for (c, p) in softmax(&buf).into_iter().enumerate() {
                out[x.index(c, i, j)] = p;
            }
        }
    }
    FeatureMap::from_parts_unchecked(channels, height, width, out)
}

/// Serialize into the `RSPT` container (values narrowed to `f32`).
pub fn encode_tensor(x: &FeatureMap) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(TENSOR_HEADER_LEN + 4 * x.values.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    buf.push(DTYPE_F32);
    buf.extend_from_slice(&[0u8; 3]);
    for d in [x.channels, x.height, x.width] {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for (k, &v) in x.values.iter().enumerate() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "value {v} at flat index {k} is not representable as f32"
            )));
        }
        buf.extend_from_slice(&narrowed.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<FeatureMap> {
    if bytes.len() < TENSOR_HEADER_LEN {
        return Err(Error::format(path, format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != TENSOR_MAGIC {
        return Err(Error::format(path, format!("bad magic {:?}", &bytes[0..4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != TENSOR_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    if bytes[8] != DTYPE_F32 {
        return Err(Error::format(path, format!("unsupported dtype {}", bytes[8])));
    }
    if bytes[9..12] != [0, 0, 0] {
        return Err(Error::format(path, "reserved bytes must be zero"));
    }
    let (c, h, w) = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
    let n = checked_len(c, h, w).map_err(|e| Error::format(path, e.to_string()))?;
    let expected = n
        .checked_mul(4)
        .and_then(|p| p.checked_add(TENSOR_HEADER_LEN))
        .ok_or_else(|| Error::format(path, "payload size overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, header {c}x{h}x{w} requires {}",
                bytes.len() - TENSOR_HEADER_LEN,
                expected - TENSOR_HEADER_LEN
            ),
        ));
    }
    let values: Vec<f64> = bytes[TENSOR_HEADER_LEN..]
        .chunks_exact(4)
        .map(|ch| f32::from_le_bytes(ch.try_into().unwrap()) as f64)
        .collect();
    FeatureMap::new(c, h, w, values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

pub fn write_tensor(x: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(x)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
