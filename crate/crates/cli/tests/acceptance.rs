//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rarespot_core::context::{ContextMap, Habitat, HsvThresholds};
use rarespot_core::eval::{average_precision, evaluate, pr_curve, ApMethod, EvalOptions, ImageEval};
use rarespot_core::gradcheck::{gradcheck, random_map, random_pyramid, GradcheckConfig, GradcheckOp};
use rarespot_core::loss::{
    consistency_loss, loss_cos, loss_kl, ConsistencyOptions, KlDirection, LevelPair, LossWeights, PairingTopology,
};
use rarespot_core::mining::match_detections;
use rarespot_core::placement::{PlacementPolicy, PlacementSampler};
use rarespot_core::poisson::{poisson_blend, solve_blend, BlendOptions};
use rarespot_core::tensor::{upsample, write_tensor};
use rarespot_core::tiling::{dataset_stats, tile_image, TileSpec};
use rarespot_core::transform::ThetaRanges;
use rarespot_core::{Annotation, BBox, ClassRegistry, Detection, FeatureMap, Level, PyramidSet, UpsampleMode};
use rarespot_oracles::{eval as eval_oracle, loss as loss_oracle, poisson as poisson_oracle};
use walkdir::WalkDir;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradients() -> Result<String, String> {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        for op in [GradcheckOp::Mse, GradcheckOp::Kl, GradcheckOp::Cos, GradcheckOp::Combined] {
            let mut cfg = GradcheckConfig::new(op, (3, 4, 4), seed);
            cfg.step = 1e-5;
            cfg.tolerance = 1e-4;
            let r = gradcheck(&cfg).map_err(|e| e.to_string())?;
            ensure(r.passed, || format!("{op} seed {seed}: relative error {:e}", r.max_rel_error))?;
            worst = worst.max(r.max_rel_error);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("max relative error {worst:.2e} over 4 ops x 10 seeds in {secs:.2} s"))
}

fn to_map(x: &FeatureMap) -> loss_oracle::Map {
    let (c, h, w) = x.dims();
    loss_oracle::Map { c, h, w, v: x.values().to_vec() }
}

fn oracle_pairs(t: &PairingTopology) -> [Vec<(usize, usize)>; 3] {
    let conv = |ps: &[LevelPair]| ps.iter().map(|p| (p.0.ordinal(), p.1.ordinal())).collect();
    [conv(&t.mse_pairs), conv(&t.kl_pairs), conv(&t.cos_pairs)]
}

fn loss_oracle_equivalence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let pyr = random_pyramid(&mut rng, 8, 8, 8).map_err(|e| e.to_string())?;
    let levels = [to_map(pyr.p3()), to_map(pyr.p4()), to_map(pyr.p5())];
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (name, topology) in [
        ("literal", PairingTopology::literal()),
        ("chain", PairingTopology::chain()),
        ("anchored", PairingTopology::anchored()),
    ] {
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            let opts = ConsistencyOptions {
                weights: LossWeights::new(0.8, 1.2, 0.5).unwrap(),
                topology: topology.clone(),
                upsample: mode,
                ..Default::default()
            };
            let r = consistency_loss(&pyr, &opts).map_err(|e| e.to_string())?;
            let o = loss_oracle::consistency(&levels, &oracle_pairs(&topology), [0.8, 1.2, 0.5], mode == UpsampleMode::Bilinear);
            let mut err = [r.l_mse - o.mse, r.l_kl - o.kl, r.l_cos - o.cos, r.l_total - o.total]
                .iter()
                .fold(0.0f64, |m, d| m.max(d.abs()));
            for (l, g) in [Level::P3, Level::P4, Level::P5].into_iter().zip(&o.grads) {
                err = err.max(max_diff(r.grads.total.level(l).values(), &g.v));
            }
            ensure(err < 1e-9, || format!("{name}/{mode:?}: deviation {err:e}"))?;
            worst = worst.max(err);
            cases += 1;
        }
    }
    Ok(format!("{cases} topology/upsample cases, max deviation {worst:.2e}"))
}

fn loss_invariants() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let e = |e: rarespot_core::Error| e.to_string();

    // identical after upsampling: nearest copies of a coarse map, and per-channel constants for bilinear
    let p5 = random_map(&mut rng, 4, 2, 2).map_err(e)?;
    let p4 = upsample(&p5, 4, 4, UpsampleMode::Nearest).map_err(e)?;
    let p3 = upsample(&p4, 8, 8, UpsampleMode::Nearest).map_err(e)?;
    let same = PyramidSet::new(p3, p4, p5).map_err(e)?;
    let near = consistency_loss(&same, &ConsistencyOptions::default()).map_err(e)?.l_total;
    let consts = [0.3, -1.2, 2.0, 0.7];
    let flat = |h, w| FeatureMap::from_fn(4, h, w, |c, _, _| consts[c]).unwrap();
    let flat_pyr = PyramidSet::new(flat(8, 8), flat(4, 4), flat(2, 2)).map_err(e)?;
    let bil_opts = ConsistencyOptions { upsample: UpsampleMode::Bilinear, ..Default::default() };
    let bil = consistency_loss(&flat_pyr, &bil_opts).map_err(e)?.l_total;
    ensure(near.abs() < 1e-9 && bil.abs() < 1e-9, || format!("identical pyramids gave {near:e} / {bil:e}"))?;

    let mut min_kl = f64::INFINITY;
    for _ in 0..1000 {
        let (c, h, w) = (rng.gen_range(1..8), rng.gen_range(1..5), rng.gen_range(1..5));
        let a = random_map(&mut rng, c, h, w).map_err(e)?.scale(rng.gen_range(0.1..6.0)).map_err(e)?;
        let b = random_map(&mut rng, c, h, w).map_err(e)?.scale(rng.gen_range(0.1..6.0)).map_err(e)?;
        for dir in [KlDirection::Forward, KlDirection::Reverse] {
            min_kl = min_kl.min(loss_kl(&a, &b, dir).map_err(e)?.value);
        }
    }
    ensure(min_kl >= 0.0, || format!("negative KL {min_kl:e}"))?;

    let mut cos_dev: f64 = 0.0;
    for _ in 0..200 {
        let (c, h, w) = (rng.gen_range(1..8), rng.gen_range(1..5), rng.gen_range(1..5));
        let a = random_map(&mut rng, c, h, w).map_err(e)?;
        let b = random_map(&mut rng, c, h, w).map_err(e)?;
        let sa: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.01..100.0)).collect();
        let sb: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.01..100.0)).collect();
        let a2 = FeatureMap::from_fn(c, h, w, |k, i, j| a.get(k, i, j) * sa[i * w + j]).unwrap();
        let b2 = FeatureMap::from_fn(c, h, w, |k, i, j| b.get(k, i, j) * sb[i * w + j]).unwrap();
        let d = (loss_cos(&a, &b).map_err(e)?.value - loss_cos(&a2, &b2).map_err(e)?.value).abs();
        cos_dev = cos_dev.max(d);
    }
    ensure(cos_dev < 1e-9, || format!("cosine changed by {cos_dev:e} under rescaling"))?;

    let mut lin_dev: f64 = 0.0;
    for _ in 0..50 {
        let pyr = random_pyramid(&mut rng, 3, 8, 8).map_err(e)?;
        let w1 = [rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)];
        let w2 = [rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)];
        let total = |w: [f64; 3]| -> Result<f64, String> {
            let opts = ConsistencyOptions { weights: LossWeights::new(w[0], w[1], w[2]).map_err(e)?, ..Default::default() };
            Ok(consistency_loss(&pyr, &opts).map_err(e)?.l_total)
        };
        let sum = [w1[0] + w2[0], w1[1] + w2[1], w1[2] + w2[2]];
        lin_dev = lin_dev.max((total(sum)? - total(w1)? - total(w2)?).abs());
        let r = consistency_loss(&pyr, &ConsistencyOptions { weights: LossWeights::new(w1[0], w1[1], w1[2]).map_err(e)?, ..Default::default() }).map_err(e)?;
        lin_dev = lin_dev.max((r.l_total - (w1[0] * r.l_mse + w1[1] * r.l_kl + w1[2] * r.l_cos)).abs());
    }
    ensure(lin_dev <= 1e-12, || format!("weight linearity off by {lin_dev:e}"))?;
    Ok(format!(
        "identical {:.1e}, min KL {min_kl:.2e} over 1000 pairs, cosine drift {cos_dev:.1e}, linearity {lin_dev:.1e}",
        near.abs().max(bil.abs())
    ))
}

fn random_rgb(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

fn channel(img: &RgbImage, x0: u32, y0: u32, w: u32, h: u32, c: usize) -> Vec<f64> {
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| img.get_pixel(x0 + x, y0 + y)[c] as f64)
        .collect()
}

fn poisson() -> Result<String, String> {
    let e = |e: rarespot_core::Error| e.to_string();
    let opts = BlendOptions::default();
    let full = |w, h| GrayImage::from_pixel(w, h, Luma([255]));
    for (bgv, pv) in [([12u8, 200, 99], [250u8, 0, 7]), ([0, 0, 0], [255, 255, 255])] {
        let bg = RgbImage::from_pixel(48, 40, Rgb(bgv));
        let out = poisson_blend(&bg, &RgbImage::from_pixel(32, 32, Rgb(pv)), (7, 3), &full(32, 32), &opts).map_err(e)?;
        ensure(out == bg, || "constant-into-constant changed the background".into())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let bg = RgbImage::from_fn(64, 64, |x, y| {
        let f = |k: f64| (127.0 + 90.0 * (x as f64 * 0.17 * k + y as f64 * 0.11).sin()) as u8;
        Rgb([f(1.0), f(1.5), f(2.0)])
    });
    let mut residual: f64 = 0.0;
    for _ in 0..2 {
        let patch = random_rgb(&mut rng, 32, 32);
        let field = solve_blend(&bg, &patch, (16, 16), &full(32, 32), &opts).map_err(e)?;
        for c in 0..3 {
            let f: Vec<f64> = field.values.iter().map(|v| v[c]).collect();
            let g = channel(&patch, 0, 0, 32, 32, c);
            for (k, inside) in field.interior.iter().enumerate() {
                if *inside {
                    residual = residual.max(
                        (poisson_oracle::laplacian_at(&f, 32, k) - poisson_oracle::laplacian_at(&g, 32, k)).abs(),
                    );
                }
            }
        }
    }
    ensure(residual < 1e-3, || format!("Laplacian residual {residual:e}"))?;

    let mut dense: f64 = 0.0;
    for trial in 0..4 {
        let bg = random_rgb(&mut rng, 16, 14);
        let patch = random_rgb(&mut rng, 8, 8);
        let mut mask = full(8, 8);
        if trial % 2 == 1 {
            for y in 0..3 {
                for x in 5..8 {
                    mask.put_pixel(x, y, Luma([0]));
                }
            }
        }
        let field = solve_blend(&bg, &patch, (4, 3), &mask, &opts).map_err(e)?;
        for c in 0..3 {
            let want = poisson_oracle::blend_channel(
                8,
                8,
                &field.interior,
                &channel(&patch, 0, 0, 8, 8, c),
                &channel(&bg, 4, 3, 8, 8, c),
            );
            let got: Vec<f64> = field.values.iter().map(|v| v[c]).collect();
            dense = dense.max(max_diff(&got, &want));
        }
    }
    ensure(dense < 1e-6, || format!("8x8 deviates from dense solve by {dense:e}"))?;

    let bg = random_rgb(&mut rng, 80, 80);
    let patch = random_rgb(&mut rng, 64, 64);
    let t = Instant::now();
    let field = solve_blend(&bg, &patch, (8, 8), &full(64, 64), &opts).map_err(e)?;
    let secs = t.elapsed().as_secs_f64();
    ensure(field.stats.iter().all(|s| s.converged), || "64x64 solve did not converge".into())?;
    ensure(secs < 5.0, || format!("64x64 solve took {secs:.2} s"))?;
    Ok(format!("bitwise constants, residual {residual:.1e}, dense {dense:.1e}, 64x64 in {secs:.3} s"))
}

fn placement() -> Result<String, String> {
    let (w, h) = (128u32, 128u32);
    let labels = (0..w * h).map(|k| if k % w < w / 2 { Habitat::Dirt } else { Habitat::Grass }).collect();
    let cmap = ContextMap::from_labels(w, h, labels, HsvThresholds::default());
    let sampler = PlacementSampler::new(&cmap);
    let policy = PlacementPolicy { dirt_fraction: 0.9, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let (mut placed, mut dirt) = (0usize, 0usize);
    while placed < 10_000 {
        if let Some(p) = sampler.sample((10, 10), &policy, &[], &mut rng).placement {
            placed += 1;
            dirt += (p.label == Habitat::Dirt) as usize;
        }
    }
    let share = dirt as f64 / placed as f64;
    let sigma = (0.9 * 0.1 / placed as f64).sqrt();
    let z = (share - 0.9) / sigma;
    ensure(z.abs() <= 3.0, || format!("dirt share {share:.4} is {z:.2} sigma from 0.9"))?;
    Ok(format!("dirt share {share:.4} over {placed} placements ({z:+.2} sigma)"))
}

fn theta_ranges() -> Result<String, String> {
    let ranges = ThetaRanges::default();
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let (mut smin, mut smax, mut rmin, mut rmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for _ in 0..100_000 {
        let t = ranges.sample(&mut rng);
        ensure((0.9..=1.1).contains(&t.scale), || format!("scale {}", t.scale))?;
        ensure((-90.0..=90.0).contains(&t.rotation_deg), || format!("rotation {}", t.rotation_deg))?;
        t.validate().map_err(|e| e.to_string())?;
        (smin, smax) = (smin.min(t.scale), smax.max(t.scale));
        (rmin, rmax) = (rmin.min(t.rotation_deg), rmax.max(t.rotation_deg));
    }
    Ok(format!("scale [{smin:.4}, {smax:.4}], rotation [{rmin:.2}, {rmax:.2}] over 100000 draws"))
}

fn random_rect(rng: &mut impl Rng) -> (BBox, eval_oracle::Rect) {
    let x0 = rng.gen_range(0.0..40.0);
    let y0 = rng.gen_range(0.0..40.0);
    let x1 = x0 + rng.gen_range(4.0..20.0);
    let y1 = y0 + rng.gen_range(4.0..20.0);
    (BBox::new(x0, y0, x1, y1).unwrap(), eval_oracle::Rect { x0, y0, x1, y1 })
}

fn random_image(rng: &mut impl Rng, max_boxes: usize) -> (ImageEval, eval_oracle::Image) {
    let mut ours = ImageEval::default();
    let mut theirs = eval_oracle::Image::default();
    let n_gt = rng.gen_range(0..=max_boxes / 2);
    let n_det = rng.gen_range(0..=max_boxes - n_gt);
    for _ in 0..n_gt {
        let (b, r) = random_rect(rng);
        let class = rng.gen_range(0..2);
        ours.ground_truth.push(Annotation::new(b, class));
        theirs.gts.push(eval_oracle::Gt { rect: r, class });
    }
    for _ in 0..n_det {
        let (b, r) = if !theirs.gts.is_empty() && rng.gen_bool(0.7) {
            let g = theirs.gts[rng.gen_range(0..theirs.gts.len())].rect;
            let mut j = || rng.gen_range(-3.0..3.0);
            let (x0, y0) = (g.x0 + j(), g.y0 + j());
            let r = eval_oracle::Rect { x0, y0, x1: (g.x1 + j()).max(x0 + 1.0), y1: (g.y1 + j()).max(y0 + 1.0) };
            (BBox::new(r.x0, r.y0, r.x1, r.y1).unwrap(), r)
        } else {
            random_rect(rng)
        };
        let class = rng.gen_range(0..2);
        let conf = rng.gen_range(0.0..1.0);
        ours.detections.push(Detection::new(b, class, conf).unwrap());
        theirs.dets.push(eval_oracle::Det { rect: r, class, conf });
    }
    (ours, theirs)
}

fn eval_ap() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst: f64 = 0.0;
    for instance in 0..1000 {
        let n = rng.gen_range(1..=2);
        let (ours, theirs): (Vec<_>, Vec<_>) = (0..n).map(|_| random_image(&mut rng, 6)).unzip();
        for class in 0..2 {
            let got = average_precision(&pr_curve(&ours, class, 0.5), ApMethod::Continuous);
            let want = eval_oracle::ap_sweep(&theirs, class, 0.5);
            let d = (got - want).abs();
            ensure(d <= 1e-12, || format!("instance {instance} class {class}: {got} vs {want}"))?;
            worst = worst.max(d);
        }
    }
    let b = |x: f64| BBox::new(x, 0.0, x + 10.0, 10.0).unwrap();
    let img = ImageEval {
        name: "hand".into(),
        detections: vec![
            Detection::new(b(0.0), 0, 0.9).unwrap(),
            Detection::new(b(100.0), 0, 0.8).unwrap(),
            Detection::new(b(50.0), 0, 0.7).unwrap(),
        ],
        ground_truth: vec![Annotation::new(b(0.0), 0), Annotation::new(b(50.0), 0)],
    };
    let ap = evaluate(&[img], &ClassRegistry(vec!["pd".into()]), &EvalOptions::default()).map;
    ensure((ap - 5.0 / 6.0).abs() < 1e-12, || format!("hand case AP {ap}"))?;
    Ok(format!("1000 instances, max deviation {worst:.1e}; hand case AP {ap:.6}"))
}

fn mining_partition() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let mut matched = 0usize;
    for set in 0..1000 {
        let (img, _) = random_image(&mut rng, 12);
        let mut prev = usize::MAX;
        for step in 0..=20 {
            let thr = 0.05 + 0.045 * step as f64;
            let m = match_detections(&img.detections, &img.ground_truth, thr);
            let tp = m.true_positives.len();
            ensure(img.detections.len() == tp + m.false_positives.len(), || format!("set {set}: dets != TP+FP"))?;
            ensure(img.ground_truth.len() == tp + m.false_negatives.len(), || format!("set {set}: gts != TP+FN"))?;
            ensure(tp <= prev, || format!("set {set}: TP rose from {prev} to {tp} at IoU {thr:.3}"))?;
            prev = tp;
            matched += tp;
        }
    }
    Ok(format!("1000 sets x 21 thresholds, {matched} TP assignments checked"))
}

fn tiling() -> Result<String, String> {
    let e = |e: rarespot_core::Error| e.to_string();
    let img = RgbImage::from_fn(1024, 1024, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let anns: Vec<Annotation> = (0..400)
        .map(|_| {
            let (x, y) = (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
            let w = rng.gen_range(2.0..24.0f64).min(1024.0 - x);
            let h = rng.gen_range(2.0..24.0f64).min(1024.0 - y);
            Annotation::new(BBox::new(x, y, x + w, y + h).unwrap(), rng.gen_range(0..2))
        })
        .collect();
    let tiles = tile_image(&img, &anns, &TileSpec::default()).map_err(e)?;
    ensure(tiles.len() == 4, || format!("{} tiles", tiles.len()))?;
    let mut interior = 0;
    for a in &anns {
        let b = a.bbox;
        let (tx, ty) = ((b.x_min / 512.0).floor(), (b.y_min / 512.0).floor());
        if b.x_max > (tx + 1.0) * 512.0 || b.y_max > (ty + 1.0) * 512.0 {
            continue;
        }
        interior += 1;
        let off = ((tx * 512.0) as u32, (ty * 512.0) as u32);
        let want = b.translate(-tx * 512.0, -ty * 512.0);
        let tile = tiles.iter().find(|t| t.offset == off).ok_or("missing tile")?;
        ensure(tile.annotations.iter().any(|t| t.class_id == a.class_id && t.bbox == want), || {
            format!("interior box {b:?} lost")
        })?;
    }

    // sparse manifest on disk: every tile shares one 512x512 PNG encoding
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let proto = dir.path().join("proto.png");
    RgbImage::new(512, 512).save(&proto).map_err(|e| e.to_string())?;
    let png = fs::read(&proto).map_err(|e| e.to_string())?;
    let (n_tiles, n_boxes) = (24_767usize, 1_850usize);
    let mut manifest = String::new();
    let mut written = 0;
    for t in 0..n_tiles {
        let name = format!("t{t:05}");
        fs::write(dir.path().join(format!("{name}.png")), &png).map_err(|e| e.to_string())?;
        let mut ann = String::new();
        for _ in (0..n_boxes).filter(|k| k * n_tiles / n_boxes == t) {
            ann.push_str("0 0.5 0.5 0.03 0.03\n");
            written += 1;
        }
        fs::write(dir.path().join(format!("{name}.txt")), ann).map_err(|e| e.to_string())?;
        manifest.push_str(&format!("{name}.png\n"));
    }
    fs::write(dir.path().join("manifest.txt"), manifest).map_err(|e| e.to_string())?;
    let stats = dataset_stats(dir.path().join("manifest.txt"), &ClassRegistry::default()).map_err(e)?;
    let pd = stats.class(0).ok_or("no class 0")?;
    let mean = format!("{:.4}", pd.per_tile_mean);
    ensure(written == n_boxes && pd.count == n_boxes && stats.tiles == n_tiles, || {
        format!("{} boxes over {} tiles", pd.count, stats.tiles)
    })?;
    ensure(mean == "0.0747", || format!("mean {mean}/tile"))?;
    Ok(format!("4 tiles, {interior} interior boxes kept; {n_boxes} boxes / {n_tiles} tiles = {mean}/tile"))
}

fn rarespot(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rarespot"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| format!("cannot run rarespot: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "`rarespot {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// synth → tile → simdet → mine → contextmap → augment → eval, all paths
/// relative to `dir`.
fn chain(dir: &Path, images: &str, extra: &[&str]) -> Result<(), String> {
    let steps: [&[&str]; 7] = [
        &["synth", "--out", "syn", "--images", images],
        &["tile", "--manifest", "syn/manifest.txt", "--out", "tiles"],
        &["simdet", "--images", "tiles/manifest.txt", "--out", "dets"],
        &["mine", "--images", "tiles/manifest.txt", "--dets", "dets/manifest.txt", "--out", "patches"],
        &["contextmap", "--manifest", "tiles/empty.txt", "--out", "ctx"],
        &["augment", "--patches", "patches", "--backgrounds", "tiles/empty.txt", "--out", "aug"],
        &["eval", "--dets", "dets/manifest.txt", "--gts", "tiles/annotations.txt", "--out", "eval/report.json"],
    ];
    for s in steps {
        let args: Vec<&str> = extra.iter().chain(s.iter()).copied().collect();
        rarespot(dir, &args)?;
    }
    Ok(())
}

fn tree(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| e.to_string())?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).unwrap().to_string_lossy().into_owned();
            files.push((rel, fs::read(entry.path()).map_err(|e| e.to_string())?));
        }
    }
    Ok(files)
}

fn determinism() -> Result<String, String> {
    let n = std::thread::available_parallelism().map_or(4, |n| n.get()).max(4).to_string();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    chain(a.path(), "4", &["--seed", "2025", "--workers", "1"])?;
    chain(b.path(), "4", &["--seed", "2025", "--workers", &n])?;
    let (ta, tb) = (tree(a.path())?, tree(b.path())?);
    ensure(ta.len() == tb.len(), || format!("{} vs {} files", ta.len(), tb.len()))?;
    for ((pa, ba), (pb, bb)) in ta.iter().zip(&tb) {
        ensure(pa == pb, || format!("file sets differ at {pa} / {pb}"))?;
        ensure(ba == bb, || format!("{pa} differs between 1 and {n} workers"))?;
    }
    Ok(format!("{} files byte-identical at 1 and {n} workers", ta.len()))
}

fn smoke() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let t = Instant::now();
    chain(d, "20", &["--seed", "7"])?;
    rarespot(d, &["stats", "--manifest", "tiles/manifest.txt", "--out", "stats.json"])?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pyr = random_pyramid(&mut rng, 8, 16, 16).map_err(|e| e.to_string())?;
    fs::create_dir_all(d.join("feat")).map_err(|e| e.to_string())?;
    for (name, x) in ["p3", "p4", "p5"].iter().zip([pyr.p3(), pyr.p4(), pyr.p5()]) {
        write_tensor(x, d.join("feat").join(format!("{name}.rspt"))).map_err(|e| e.to_string())?;
    }
    rarespot(d, &["loss", "--p3", "feat/p3.rspt", "--p4", "feat/p4.rspt", "--p5", "feat/p5.rspt", "--out", "loss.json"])?;
    rarespot(d, &["gradcheck", "--seed", "7", "--out", "gradcheck.json"])?;
    let secs = t.elapsed().as_secs_f64();

    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("eval/report.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let map = report["map"].as_f64().ok_or("eval report has no mAP")?;
    let classes = report["classes"].as_array().ok_or("eval report has no classes")?;
    ensure((0.0..=1.0).contains(&map) && classes.len() == 2, || format!("eval report mAP {map}, {} classes", classes.len()))?;
    let augmented = fs::read_dir(d.join("aug"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".png"))
        .count();
    ensure(augmented >= 15, || format!("only {augmented} augmented images"))?;
    let loss: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("loss.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(loss["l_total"].as_f64().is_some_and(f64::is_finite), || "loss report lacks l_total".into())?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("20 images, {augmented} augmented, mAP@50 {map:.3}, {secs:.1} s"))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 11] = [
        ("gradient correctness", gradients),
        ("loss oracle equivalence", loss_oracle_equivalence),
        ("loss invariants", loss_invariants),
        ("poisson blend", poisson),
        ("placement statistics", placement),
        ("augmentation ranges", theta_ranges),
        ("evaluation oracle", eval_ap),
        ("mining partition", mining_partition),
        ("tiling", tiling),
        ("determinism", determinism),
        ("end-to-end smoke", smoke),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let ms = t.elapsed().as_millis();
        match result {
            Ok(detail) => println!("PASS {:>2} {name} ({ms} ms): {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({ms} ms): {why}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
