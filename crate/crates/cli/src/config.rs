//! Layered run configuration: built-in defaults, then the TOML config file,
//! then explicit flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{ArgAction, Args};
use rarespot_core::context::HsvThresholds;
use rarespot_core::eval::ApMethod;
use rarespot_core::gradcheck::GradcheckOp;
use rarespot_core::loss::{KlDirection, LossWeights, PairingTopology};
use rarespot_core::UpsampleMode;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CliError, CliResult};

/// Declares a config section whose fields are all optional, usable both as
/// clap flags and as a TOML table. `overlay` keeps `self`'s values and fills
/// gaps from `base`.
macro_rules! section {
    (
        $(#[$m:meta])*
        pub struct $name:ident {
            $( $(#[$fm:meta])* pub $f:ident : Option<$t:ty>, )*
            $( ; $( $(#[$nm:meta])* pub $n:ident : $nt:ty, )* )?
        }
    ) => {
        $(#[$m])*
        #[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $(
                $(#[$fm])*
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $f: Option<$t>,
            )*
            $( $(
                $(#[$nm])*
                #[serde(default, skip_serializing_if = "Section::is_empty")]
                pub $n: $nt,
            )* )?
        }

        impl Section for $name {
            fn overlay(self, base: Self) -> Self {
                Self {
                    $( $f: self.$f.or(base.$f), )*
                    $( $( $n: self.$n.overlay(base.$n), )* )?
                }
            }

            fn is_empty(&self) -> bool {
                true $( && self.$f.is_none() )* $( $( && self.$n.is_empty() )* )?
            }
        }
    };
}

pub trait Section: Sized {
    fn overlay(self, base: Self) -> Self;
    fn is_empty(&self) -> bool;
}

/// Inclusive numeric range written `lo,hi` on the command line and
/// `[lo, hi]` in TOML.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("range `{s}` must look like lo,hi"))?;
        let p = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number `{t}` in range `{s}`"));
        Ok(Range(p(a)?, p(b)?))
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.0, self.1)
    }
}

impl From<Range> for (f64, f64) {
    fn from(r: Range) -> Self {
        (r.0, r.1)
    }
}

/// `CxHxW` dims, e.g. `3x4x4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims(pub usize, pub usize, pub usize);

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        let nums: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
        match nums.as_deref() {
            Ok([c, h, w]) => Ok(Dims(*c, *h, *w)),
            _ => Err(format!("dims `{s}` must look like 3x4x4")),
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.0, self.1, self.2)
    }
}

impl Serialize for Dims {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Dims {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub(crate) fn need<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    match v {
        Some(v) => Ok(v.clone()),
        None => invalid(format!("missing required `--{flag}` (or config key `{}`)", flag.replace('-', "_"))),
    }
}

section! {
    pub struct TileSection {
        /// Single large image to tile.
        #[arg(long = "in", value_name = "PNG")]
        pub input: Option<PathBuf>,
        /// Annotation file for `--in` (defaults to the image stem with `.txt`).
        #[arg(long, value_name = "TXT")]
        pub ann: Option<PathBuf>,
        /// Manifest of large images; annotations are paired by stem.
        #[arg(long, value_name = "FILE")]
        pub manifest: Option<PathBuf>,
        /// Output directory for tiles, annotations and manifests [default: tiles].
        #[arg(long, value_name = "DIR")]
        pub out: Option<PathBuf>,
        #[arg(long)]
        pub size: Option<u32>,
        #[arg(long)]
        pub overlap: Option<u32>,
        /// Keep a clipped box iff its visible area is at least this fraction.
        #[arg(long)]
        pub min_visibility: Option<f64>,
    }
}

impl TileSection {
    pub fn defaults() -> Self {
        let d = rarespot_core::tiling::TileSpec::default();
        Self {
            out: Some(PathBuf::from("tiles")),
            size: Some(d.tile_size),
            overlap: Some(d.overlap),
            min_visibility: Some(d.min_box_visibility),
            ..Default::default()
        }
    }

    pub fn out(&self) -> CliResult<PathBuf> {
        need(&self.out, "out")
    }
}

section! {
    pub struct StatsSection {
        /// Manifest of tile images; annotations are paired by stem.
        #[arg(long, value_name = "FILE")]
        pub manifest: Option<PathBuf>,
        /// Comma-separated class names; position is the class id.
        #[arg(long)]
        pub classes: Option<String>,
        /// Write the JSON report here.
        #[arg(long, value_name = "JSON")]
        pub out: Option<PathBuf>,
    }
}

impl StatsSection {
    pub fn defaults() -> Self {
        Self {
            classes: Some(default_classes()),
            ..Default::default()
        }
    }

    pub fn manifest(&self) -> CliResult<PathBuf> {
        need(&self.manifest, "manifest")
    }
}

fn default_classes() -> String {
    rarespot_core::ClassRegistry::default().0.join(",")
}

section! {
    pub struct MineSection {
        /// Manifest of images; ground truth is paired by stem.
        #[arg(long, value_name = "FILE")]
        pub images: Option<PathBuf>,
        /// Manifest of detection files, paired with images by stem.
        #[arg(long, value_name = "FILE")]
        pub dets: Option<PathBuf>,
        /// Output patch directory.
        #[arg(long, value_name = "DIR")]
        pub out: Option<PathBuf>,
        #[arg(long)]
        pub iou: Option<f64>,
        /// Pixels of context around each crop.
        #[arg(long)]
        pub pad: Option<u32>,
        /// Keep false-positive crops as unlabeled distractors.
        #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
        pub include_fp: Option<bool>,
    }
}

impl MineSection {
    pub fn defaults() -> Self {
        let d = rarespot_core::mining::ExtractOptions::default();
        Self {
            iou: Some(rarespot_core::mining::DEFAULT_IOU_THRESHOLD),
            pad: Some(d.pad),
            include_fp: Some(d.include_fp),
            ..Default::default()
        }
    }
}

section! {
    pub struct HsvSection {
        #[arg(long, value_name = "LO,HI")]
        pub grass_hue: Option<Range>,
        #[arg(long)]
        pub grass_min_saturation: Option<f64>,
        #[arg(long)]
        pub grass_min_value: Option<f64>,
        #[arg(long)]
        pub dirt_max_saturation: Option<f64>,
        #[arg(long, value_name = "LO,HI")]
        pub dirt_value: Option<Range>,
        /// Majority filter side; 0 or 1 disables smoothing.
        #[arg(long)]
        pub smoothing: Option<u32>,
    }
}

impl HsvSection {
    pub fn defaults() -> Self {
        let d = HsvThresholds::default();
        Self {
            grass_hue: Some(Range(d.grass_hue.0, d.grass_hue.1)),
            grass_min_saturation: Some(d.grass_min_saturation),
            grass_min_value: Some(d.grass_min_value),
            dirt_max_saturation: Some(d.dirt_max_saturation),
            dirt_value: Some(Range(d.dirt_value.0, d.dirt_value.1)),
            smoothing: Some(d.smoothing),
        }
    }

    /// Requires a resolved section.
    pub fn thresholds(&self) -> HsvThresholds {
        let d = HsvThresholds::default();
        HsvThresholds {
            grass_hue: self.grass_hue.map_or(d.grass_hue, Into::into),
            grass_min_saturation: self.grass_min_saturation.unwrap_or(d.grass_min_saturation),
            grass_min_value: self.grass_min_value.unwrap_or(d.grass_min_value),
            dirt_max_saturation: self.dirt_max_saturation.unwrap_or(d.dirt_max_saturation),
            dirt_value: self.dirt_value.map_or(d.dirt_value, Into::into),
            smoothing: self.smoothing.unwrap_or(d.smoothing),
        }
    }
}

section! {
    pub struct ContextmapSection {
        /// Single background image.
        #[arg(long = "in", value_name = "PNG")]
        pub input: Option<PathBuf>,
        /// Manifest of background images.
        #[arg(long, value_name = "FILE")]
        pub manifest: Option<PathBuf>,
        /// Label PNG for `--in`, or output directory for `--manifest`.
        #[arg(long, value_name = "PATH")]
        pub out: Option<PathBuf>,
        ;
        #[command(flatten)]
        pub hsv: HsvSection,
    }
}

impl ContextmapSection {
    pub fn defaults() -> Self {
        Self {
            hsv: HsvSection::defaults(),
            ..Default::default()
        }
    }
}

section! {
    pub struct AugmentSection {
        /// Patch directory written by `mine`.
        #[arg(long, value_name = "DIR")]
        pub patches: Option<PathBuf>,
        /// Manifest of annotation-free background images.
        #[arg(long, value_name = "FILE")]
        pub backgrounds: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        pub out: Option<PathBuf>,
        /// Images to generate (defaults to the number of usable backgrounds).
        #[arg(long)]
        pub num_images: Option<usize>,
        #[arg(long)]
        pub patches_per_image: Option<usize>,
        #[arg(long)]
        pub dirt_fraction: Option<f64>,
        #[arg(long)]
        pub max_attempts: Option<u32>,
        #[arg(long)]
        pub min_separation_iou: Option<f64>,
        #[arg(long)]
        pub min_target_fraction: Option<f64>,
        #[arg(long, value_name = "LO,HI")]
        pub scale: Option<Range>,
        #[arg(long, value_name = "LO,HI", allow_hyphen_values = true)]
        pub rotation: Option<Range>,
        #[arg(long, value_name = "LO,HI", allow_hyphen_values = true)]
        pub brightness: Option<Range>,
        #[arg(long, value_name = "LO,HI")]
        pub contrast: Option<Range>,
        /// Relative residual at which the blend solver stops.
        #[arg(long)]
        pub blend_tolerance: Option<f64>,
        #[arg(long)]
        pub blend_max_iterations: Option<usize>,
        ;
        #[command(flatten)]
        pub hsv: HsvSection,
    }
}

impl AugmentSection {
    pub fn defaults() -> Self {
        use rarespot_core::augment::AugmentSettings;
        let d = AugmentSettings::default();
        let r = |(a, b): (f64, f64)| Some(Range(a, b));
        Self {
            patches_per_image: Some(8),
            dirt_fraction: Some(d.policy.dirt_fraction),
            max_attempts: Some(d.policy.max_attempts),
            min_separation_iou: Some(d.policy.min_separation_iou),
            min_target_fraction: Some(d.policy.min_target_fraction),
            scale: r(d.theta.scale),
            rotation: r(d.theta.rotation_deg),
            brightness: r(d.theta.brightness_delta),
            contrast: r(d.theta.contrast_gain),
            blend_tolerance: Some(d.blend.tolerance),
            blend_max_iterations: Some(d.blend.max_iterations),
            hsv: HsvSection::defaults(),
            ..Default::default()
        }
    }
}

section! {
    pub struct EvalSection {
        /// Manifest of detection files.
        #[arg(long, value_name = "FILE")]
        pub dets: Option<PathBuf>,
        /// Manifest of ground-truth annotation files.
        #[arg(long, value_name = "FILE")]
        pub gts: Option<PathBuf>,
        #[arg(long)]
        pub iou: Option<f64>,
        /// Confidence operating point for precision and recall.
        #[arg(long)]
        pub conf: Option<f64>,
        #[arg(long)]
        pub classes: Option<String>,
        /// `continuous` (all-point) or `points101`.
        #[arg(long)]
        pub ap_method: Option<ApMethod>,
        #[arg(long, value_name = "JSON")]
        pub out: Option<PathBuf>,
    }
}

impl EvalSection {
    pub fn defaults() -> Self {
        let d = rarespot_core::eval::EvalOptions::default();
        Self {
            iou: Some(d.iou_threshold),
            conf: Some(d.conf_threshold),
            classes: Some(default_classes()),
            ap_method: Some(d.ap_method),
            ..Default::default()
        }
    }
}

section! {
    pub struct WeightsSection {
        #[arg(long)]
        pub alpha: Option<f64>,
        #[arg(long)]
        pub beta: Option<f64>,
        #[arg(long)]
        pub gamma: Option<f64>,
        /// `literal`, `chain` or `anchored`.
        #[arg(long)]
        pub topology: Option<String>,
        /// `nearest` or `bilinear`.
        #[arg(long)]
        pub upsample: Option<UpsampleMode>,
        /// `forward` or `reverse`.
        #[arg(long)]
        pub kl_direction: Option<KlDirection>,
    }
}

impl WeightsSection {
    pub fn defaults() -> Self {
        let w = LossWeights::default();
        Self {
            alpha: Some(w.alpha),
            beta: Some(w.beta),
            gamma: Some(w.gamma),
            topology: Some("literal".into()),
            upsample: Some(UpsampleMode::default()),
            kl_direction: Some(KlDirection::default()),
        }
    }

    /// Requires a resolved section.
    pub fn options(&self) -> CliResult<rarespot_core::loss::ConsistencyOptions> {
        let weights = LossWeights::new(
            self.alpha.unwrap_or(1.0),
            self.beta.unwrap_or(1.0),
            self.gamma.unwrap_or(1.0),
        )?;
        let topology = PairingTopology::preset(self.topology.as_deref().unwrap_or("literal"))?;
        Ok(rarespot_core::loss::ConsistencyOptions {
            weights,
            topology,
            upsample: self.upsample.unwrap_or_default(),
            kl_direction: self.kl_direction.unwrap_or_default(),
        })
    }
}

section! {
    pub struct LossSection {
        #[arg(long, value_name = "RSPT")]
        pub p3: Option<PathBuf>,
        #[arg(long, value_name = "RSPT")]
        pub p4: Option<PathBuf>,
        #[arg(long, value_name = "RSPT")]
        pub p5: Option<PathBuf>,
        #[arg(long, value_name = "JSON")]
        pub out: Option<PathBuf>,
        /// Also write per-level gradient tensors here.
        #[arg(long, value_name = "DIR")]
        pub grad_dir: Option<PathBuf>,
        ;
        #[command(flatten)]
        pub weights: WeightsSection,
    }
}

impl LossSection {
    pub fn defaults() -> Self {
        Self {
            weights: WeightsSection::defaults(),
            ..Default::default()
        }
    }
}

section! {
    pub struct GradcheckSection {
        /// `mse`, `kl`, `cos` or `combined`.
        #[arg(long)]
        pub op: Option<GradcheckOp>,
        /// Input dims `CxHxW` (P3 dims for `combined`).
        #[arg(long)]
        pub dims: Option<Dims>,
        /// Finite-difference step.
        #[arg(long)]
        pub step: Option<f64>,
        /// Largest accepted relative error.
        #[arg(long)]
        pub tolerance: Option<f64>,
        #[arg(long, value_name = "JSON")]
        pub out: Option<PathBuf>,
        ;
        #[command(flatten)]
        pub weights: WeightsSection,
    }
}

impl GradcheckSection {
    pub fn defaults() -> Self {
        use rarespot_core::gradcheck::{DEFAULT_STEP, DEFAULT_TOLERANCE};
        Self {
            op: Some(GradcheckOp::Combined),
            dims: Some(Dims(3, 4, 4)),
            step: Some(DEFAULT_STEP),
            tolerance: Some(DEFAULT_TOLERANCE),
            weights: WeightsSection::defaults(),
            ..Default::default()
        }
    }
}

section! {
    pub struct SynthSection {
        #[arg(long, value_name = "DIR")]
        pub out: Option<PathBuf>,
        /// Number of images to generate.
        #[arg(long)]
        pub images: Option<usize>,
        /// Side length of each square image.
        #[arg(long)]
        pub size: Option<u32>,
    }
}

impl SynthSection {
    pub fn defaults() -> Self {
        Self {
            images: Some(20),
            size: Some(1024),
            ..Default::default()
        }
    }
}

section! {
    pub struct SimdetSection {
        /// Manifest of images whose paired annotations are the ground truth.
        #[arg(long, value_name = "FILE")]
        pub images: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        pub out: Option<PathBuf>,
        /// Probability that a ground-truth object is detected.
        #[arg(long)]
        pub recall: Option<f64>,
        /// Mean number of spurious detections per image.
        #[arg(long)]
        pub false_positives: Option<f64>,
    }
}

impl SimdetSection {
    pub fn defaults() -> Self {
        Self {
            recall: Some(0.7),
            false_positives: Some(1.5),
            ..Default::default()
        }
    }
}

/// Whole config file. Each subcommand reads only its own table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Section::is_empty")]
    pub tile: TileSection,
    #[serde(default, skip_serializing_if = "Section::is_empty")]
    pub stats: StatsSection,
    #[serde(default, skip_serializing_if = "Section::is_empty")]
    pub mine: MineSection,
    #[serde(default, skip_serializing_if = "Section::is_empty")]
    pub contextmap: ContextmapSection,
    #[serde(default, skip_serializing_if = "Section::is_empty")]
    pub augment: AugmentSection,
    #[serde(default, skip_serializing_if = "Section::is_empty")]
    pub eval: EvalSection,
    #[serde(default, skip_serializing_if = "Section::is_empty")]
    pub loss: LossSection,
    #[serde(default, skip_serializing_if = "Section::is_empty")]
    pub gradcheck: GradcheckSection,
    #[serde(default, skip_serializing_if = "Section::is_empty")]
    pub synth: SynthSection,
    #[serde(default, skip_serializing_if = "Section::is_empty")]
    pub simdet: SimdetSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("cannot serialise config: {e}")))
    }

    /// Writes the resolved config so the run can be replayed with `--config`.
    pub fn write(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, self.to_toml()?).map_err(|e| CliError::io(path, e))
    }
}

/// File name of the resolved-config sidecar inside an output directory.
pub const RESOLVED_CONFIG: &str = "run_config.toml";

/// Sidecar path for a single output file: `report.json` → `report.config.toml`.
pub fn sidecar_for(out: &Path) -> PathBuf {
    out.with_extension("config.toml")
}
