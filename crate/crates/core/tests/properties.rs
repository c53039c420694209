use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rarespot_core::annotations::{format_annotations, parse_annotations};
use rarespot_core::context::{hsv_to_rgb, rgb_to_hsv};
use rarespot_core::gradcheck::{gradcheck, random_map, random_pyramid, GradcheckConfig, GradcheckOp};
use rarespot_core::loss::{consistency_loss, loss_cos, loss_kl, ConsistencyOptions, KlDirection, LossWeights};
use rarespot_core::mining::match_detections;
use rarespot_core::tensor::{channel_softmax, decode_tensor, encode_tensor, upsample};
use rarespot_core::tiling::axis_offsets;
use rarespot_core::{Annotation, BBox, Detection, FeatureMap, PyramidSet, UpsampleMode};

fn map_strategy(max_c: usize, max_hw: usize) -> impl Strategy<Value = FeatureMap> {
    (1..=max_c, 1..=max_hw, 1..=max_hw).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-5.0f64..5.0, c * h * w).prop_map(move |v| FeatureMap::new(c, h, w, v).unwrap())
    })
}

fn pair_strategy() -> impl Strategy<Value = (FeatureMap, FeatureMap)> {
    (1usize..6, 1usize..5, 1usize..5).prop_flat_map(|(c, h, w)| {
        let n = c * h * w;
        (prop::collection::vec(-4.0f64..4.0, n), prop::collection::vec(-4.0f64..4.0, n)).prop_map(move |(a, b)| {
            (FeatureMap::new(c, h, w, a).unwrap(), FeatureMap::new(c, h, w, b).unwrap())
        })
    })
}

fn bbox_strategy() -> impl Strategy<Value = BBox> {
    (0.0f64..90.0, 0.0f64..90.0, 0.5f64..30.0, 0.5f64..30.0)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(x in map_strategy(6, 4), shift in -20.0f64..20.0) {
        let p = channel_softmax(&x);
        let q = channel_softmax(&FeatureMap::from_fn(x.channels(), x.height(), x.width(), |c, i, j| x.get(c, i, j) + shift).unwrap());
        for i in 0..x.height() {
            for j in 0..x.width() {
                let s: f64 = p.pixel(i, j).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(p.pixel(i, j).iter().all(|v| *v > 0.0));
            }
        }
        prop_assert!(p.max_abs_diff(&q).unwrap() < 1e-12);
    }

    #[test]
    fn kl_is_non_negative((a, b) in pair_strategy()) {
        prop_assert!(loss_kl(&a, &b, KlDirection::Forward).unwrap().value >= -1e-15);
        prop_assert!(loss_kl(&a, &b, KlDirection::Reverse).unwrap().value >= -1e-15);
    }

    #[test]
    fn cosine_ignores_positive_pixel_scale((a, b) in pair_strategy(), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = a.dims();
        let k: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.1..10.0)).collect();
        let scaled = FeatureMap::from_fn(c, h, w, |ch, i, j| a.get(ch, i, j) * k[i * w + j]).unwrap();
        let base = loss_cos(&a, &b).unwrap().value;
        let after = loss_cos(&scaled, &b).unwrap().value;
        prop_assert!((base - after).abs() < 1e-9);
    }

    #[test]
    fn total_is_linear_in_weights(seed in any::<u64>(), al in 0.0f64..3.0, be in 0.0f64..3.0, ga in 0.01f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pyr = random_pyramid(&mut rng, 3, 8, 8).unwrap();
        let opts = |w: LossWeights| ConsistencyOptions { weights: w, ..Default::default() };
        let r = consistency_loss(&pyr, &opts(LossWeights::new(al, be, ga).unwrap())).unwrap();
        let e = |w| consistency_loss(&pyr, &opts(w)).unwrap().l_total;
        let basis = al * e(LossWeights::new(1.0, 0.0, 0.0).unwrap())
            + be * e(LossWeights::new(0.0, 1.0, 0.0).unwrap())
            + ga * e(LossWeights::new(0.0, 0.0, 1.0).unwrap());
        prop_assert!((r.l_total - basis).abs() < 1e-12);
    }

    #[test]
    fn consistent_pyramid_has_zero_loss(seed in any::<u64>(), bilinear in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p5 = random_map(&mut rng, 4, 2, 2).unwrap();
        let mode = if bilinear { UpsampleMode::Bilinear } else { UpsampleMode::Nearest };
        // nearest copies are exact under any further nearest upsampling
        let p4 = upsample(&p5, 4, 4, UpsampleMode::Nearest).unwrap();
        let p3 = upsample(&p5, 8, 8, UpsampleMode::Nearest).unwrap();
        let pyr = PyramidSet::new(p3, p4, p5).unwrap();
        let opts = ConsistencyOptions { upsample: UpsampleMode::Nearest, ..Default::default() };
        prop_assert!(consistency_loss(&pyr, &opts).unwrap().l_total < 1e-9);
        let flat = FeatureMap::filled(4, 8, 8, 0.3).unwrap();
        let same = PyramidSet::new(flat, FeatureMap::filled(4, 4, 4, 0.3).unwrap(), FeatureMap::filled(4, 2, 2, 0.3).unwrap()).unwrap();
        let opts = ConsistencyOptions { upsample: mode, ..Default::default() };
        prop_assert!(consistency_loss(&same, &opts).unwrap().l_total < 1e-9);
    }

    #[test]
    fn tensor_round_trip_is_exact_for_f32_values(x in map_strategy(4, 6)) {
        let narrowed = FeatureMap::from_fn(x.channels(), x.height(), x.width(), |c, i, j| x.get(c, i, j) as f32 as f64).unwrap();
        let bytes = encode_tensor(&narrowed).unwrap();
        prop_assert_eq!(bytes.len(), 24 + 4 * narrowed.values().len());
        let back = decode_tensor(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back, narrowed);
    }

    #[test]
    fn annotation_text_round_trip(boxes in prop::collection::vec((bbox_strategy(), 0u32..2), 0..8)) {
        let anns: Vec<Annotation> = boxes.iter().map(|(b, c)| Annotation::new(*b, *c)).collect();
        let text = format_annotations(&anns, 160, 128);
        let back = parse_annotations(&text, Path::new("mem"), 160, 128).unwrap();
        prop_assert_eq!(back.len(), anns.len());
        for (a, b) in anns.iter().zip(&back) {
            prop_assert_eq!(a.class_id, b.class_id);
            for (u, v) in [(a.bbox.x_min, b.bbox.x_min), (a.bbox.y_min, b.bbox.y_min), (a.bbox.x_max, b.bbox.x_max), (a.bbox.y_max, b.bbox.y_max)] {
                prop_assert!((u - v).abs() < 1e-6 * 160.0 + 1e-9);
            }
        }
    }

    #[test]
    fn matching_partitions_detections_and_truth(
        gts in prop::collection::vec((bbox_strategy(), 0u32..2), 0..6),
        dets in prop::collection::vec((bbox_strategy(), 0u32..2, 0.0f64..=1.0), 0..6),
        thr in 0.05f64..0.95,
    ) {
        let gts: Vec<Annotation> = gts.iter().map(|(b, c)| Annotation::new(*b, *c)).collect();
        let dets: Vec<Detection> = dets.iter().map(|(b, c, s)| Detection::new(*b, *c, *s).unwrap()).collect();
        let m = match_detections(&dets, &gts, thr);
        prop_assert_eq!(dets.len(), m.true_positives.len() + m.false_positives.len());
        prop_assert_eq!(gts.len(), m.true_positives.len() + m.false_negatives.len());
        let mut claimed: Vec<usize> = m.assignment.iter().flatten().copied().collect();
        claimed.sort_unstable();
        claimed.dedup();
        prop_assert_eq!(claimed.len(), m.true_positives.len());
    }

    #[test]
    fn tile_offsets_cover_axis(len in 64u32..3000, tile in 16u32..512, overlap_frac in 0.0f64..0.9) {
        prop_assume!(len >= tile);
        let overlap = ((tile as f64) * overlap_frac) as u32;
        let stride = tile - overlap;
        let offs = axis_offsets(len, tile, stride);
        prop_assert_eq!(offs[0], 0);
        prop_assert_eq!(*offs.last().unwrap() + tile, len);
        for w in offs.windows(2) {
            prop_assert!(w[1] > w[0] && w[1] - w[0] <= stride);
        }
    }

    #[test]
    fn hsv_round_trip(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
        let (h, s, v) = rgb_to_hsv(r, g, b);
        prop_assert!((0.0..360.0).contains(&h) && (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&v));
        let (rr, gg, bb) = hsv_to_rgb(h, s, v);
        prop_assert!(((rr * 255.0).round() as u8, (gg * 255.0).round() as u8, (bb * 255.0).round() as u8) == (r, g, b));
    }
}

#[test]
fn gradients_pass_for_ten_seeds() {
    for seed in 0..10 {
        for op in [GradcheckOp::Mse, GradcheckOp::Kl, GradcheckOp::Cos, GradcheckOp::Combined] {
            let r = gradcheck(&GradcheckConfig::new(op, (3, 4, 4), seed)).unwrap();
            assert!(r.passed, "{op:?} seed {seed}: rel {:e}", r.max_rel_error);
        }
    }
}
