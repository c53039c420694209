//! Context-aware hard-sample augmentation: transform each patch, place it
//! in a habitat-consistent region of a background and blend it in.

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{Annotation, AnnotationSource, BBox};
use crate::context::{build_context_map, ContextMap, Habitat, HsvThresholds};
use crate::error::{Error, Result};
use crate::mining::{Patch, PatchOrigin};
use crate::placement::{PlacementPolicy, PlacementSampler};
use crate::poisson::{apply_field, solve_blend, BlendOptions};
use crate::rng::derive_seed;
use crate::transform::{transform_patch, AugmentParams, ThetaRanges};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSettings {
    #[serde(default)]
    pub policy: PlacementPolicy,
    #[serde(default)]
    pub theta: ThetaRanges,
    #[serde(default)]
    pub blend: BlendOptions,
}

impl AugmentSettings {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.theta.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub patch: usize,
    pub origin: PatchOrigin,
    pub class_id: u32,
    pub label: Habitat,
    pub bbox: BBox,
    pub annotation: Option<BBox>,
    pub theta: AugmentParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub patch: usize,
    pub origin: PatchOrigin,
    pub target: Option<Habitat>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub image: RgbImage,
    pub annotations: Vec<Annotation>,
    pub placements: Vec<PlacementRecord>,
    pub skips: Vec<SkipRecord>,
}

/// Blend `patches` into background `image`. Patches whose transform,
/// placement or blend fails are skipped and reported. `patch_ids` labels
/// each patch in the records (defaults to its position).
pub fn augment_image(
    image: &RgbImage,
    patches: &[Patch],
    cmap: &ContextMap,
    settings: &AugmentSettings,
    rng: &mut impl Rng,
) -> Result<AugmentOutcome> {
    let ids: Vec<usize> = (0..patches.len()).collect();
    augment_image_with_ids(image, patches, &ids, cmap, settings, rng)
}

fn augment_image_with_ids(
    image: &RgbImage,
    patches: &[Patch],
    patch_ids: &[usize],
    cmap: &ContextMap,
    settings: &AugmentSettings,
    rng: &mut impl Rng,
) -> Result<AugmentOutcome> {
    settings.validate()?;
    if cmap.width() != image.width() || cmap.height() != image.height() {
        return Err(Error::DimMismatch(format!(
            "context map {}x{} vs image {}x{}",
            cmap.width(),
            cmap.height(),
            image.width(),
            image.height()
        )));
    }
    let sampler = PlacementSampler::new(cmap);
    let mut out = image.clone();
    let mut occupied: Vec<BBox> = Vec::new();
    let mut annotations = Vec::new();
    let mut placements = Vec::new();
    let mut skips = Vec::new();

    for (patch, &id) in patches.iter().zip(patch_ids) {
        let skip = |target: Option<Habitat>, reason: String| SkipRecord {
            patch: id,
            origin: patch.origin,
            target,
            reason,
        };
        let theta = settings.theta.sample(rng);
        let moved = match transform_patch(patch, &theta) {
            Ok(p) => p,
            Err(e) => {
                skips.push(skip(None, format!("transform: {e}")));
                continue;
            }
        };
        let draw = sampler.sample((moved.width(), moved.height()), &settings.policy, &occupied, rng);
        let Some(place) = draw.placement else {
            skips.push(skip(Some(draw.target), "no admissible position".into()));
            continue;
        };
        let field = match solve_blend(&out, &moved.pixels, place.top_left, &moved.mask, &settings.blend) {
            Ok(f) => f,
            Err(e) => {
                skips.push(skip(Some(draw.target), format!("blend: {e}")));
                continue;
            }
        };
        apply_field(&mut out, &field);
        occupied.push(place.bbox);

        let (dx, dy) = (place.top_left.0 as f64, place.top_left.1 as f64);
        let ann_box = if patch.origin.is_annotated() {
            let b = moved.object_box.translate(dx, dy);
            match BBox::new(b.x_min, b.y_min, b.x_max, b.y_max) {
                Ok(b) => {
                    annotations.push(Annotation {
                        bbox: b,
                        class_id: patch.class_id,
                        source: AnnotationSource::Synthetic,
                    });
                    Some(b)
                }
                Err(e) => {
                    log::warn!("patch {id}: dropping degenerate annotation: {e}");
                    None
                }
            }
        } else {
            None
        };
        placements.push(PlacementRecord {
            patch: id,
            origin: patch.origin,
            class_id: patch.class_id,
            label: place.label,
            bbox: place.bbox,
            annotation: ann_box,
            theta,
        });
    }

    Ok(AugmentOutcome {
        image: out,
        annotations,
        placements,
        skips,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub num_images: usize,
    pub patches_per_image: usize,
    #[serde(default)]
    pub settings: AugmentSettings,
    #[serde(default)]
    pub hsv: HsvThresholds,
}

#[derive(Debug, Clone)]
pub struct BatchImage {
    pub index: usize,
    pub background: usize,
    pub outcome: AugmentOutcome,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub images: Vec<BatchImage>,
    /// Background indices drawn with replacement because the inventory was
    /// smaller than the requested image count.
    pub with_replacement: bool,
}

/// Generates `spec.num_images` augmented images. Image `k` draws all its
/// randomness from `derive_seed(master_seed, k)`, so results do not depend
/// on the rayon pool size.
pub fn augment_batch(
    patches: &[Patch],
    backgrounds: &[RgbImage],
    spec: &BatchSpec,
    master_seed: u64,
) -> Result<BatchOutput> {
    spec.settings.validate()?;
    if spec.num_images > 0 && backgrounds.is_empty() {
        return Err(Error::InvalidArgument("no background images available".into()));
    }
    if spec.patches_per_image > 0 && patches.is_empty() {
        return Err(Error::InvalidArgument("no patches available".into()));
    }

    let mut plan_rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, u64::MAX));
    let mut bg_order: Vec<usize> = (0..backgrounds.len()).collect();
    bg_order.shuffle(&mut plan_rng);
    let with_replacement = spec.num_images > backgrounds.len();
    if with_replacement {
        log::warn!(
            "{} images requested from {} backgrounds; sampling backgrounds with replacement",
            spec.num_images,
            backgrounds.len()
        );
    }
    let mut patch_order: Vec<usize> = (0..patches.len()).collect();
    patch_order.shuffle(&mut plan_rng);

    let plan: Vec<(usize, usize, Vec<usize>)> = (0..spec.num_images)
        .map(|k| {
            let bg = if with_replacement {
                let mut r = ChaCha8Rng::seed_from_u64(derive_seed(master_seed ^ 0x9e37_79b9, k as u64));
                r.gen_range(0..backgrounds.len())
            } else {
                bg_order[k]
            };
            let ids = (0..spec.patches_per_image)
                .map(|j| patch_order[(k * spec.patches_per_image + j) % patches.len()])
                .collect();
            (k, bg, ids)
        })
        .collect();

    let mut used: Vec<usize> = plan.iter().map(|p| p.1).collect();
    used.sort_unstable();
    used.dedup();
    let cmaps: Vec<(usize, ContextMap)> = used
        .par_iter()
        .map(|&b| (b, build_context_map(&backgrounds[b], &spec.hsv)))
        .collect();
    let cmap_of = |b: usize| &cmaps[cmaps.binary_search_by_key(&b, |c| c.0).unwrap()].1;

    let images = plan
        .par_iter()
        .map(|(k, bg, ids)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, *k as u64));
            let chosen: Vec<Patch> = ids.iter().map(|&i| patches[i].clone()).collect();
            let outcome = augment_image_with_ids(&backgrounds[*bg], &chosen, ids, cmap_of(*bg), &spec.settings, &mut rng)?;
            Ok(BatchImage {
                index: *k,
                background: *bg,
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(BatchOutput {
        images,
        with_replacement,
    })
}
