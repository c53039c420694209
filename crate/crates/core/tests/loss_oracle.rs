use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rarespot_core::gradcheck::random_pyramid;
use rarespot_core::loss::{consistency_loss, ConsistencyOptions, LossWeights, PairingTopology};
use rarespot_core::tensor::{upsample, upsample_backward};
use rarespot_core::{FeatureMap, Level, PyramidSet, UpsampleMode};
use rarespot_oracles::loss::{self as oracle, Map};

fn to_map(x: &FeatureMap) -> Map {
    let (c, h, w) = x.dims();
    Map { c, h, w, v: x.values().to_vec() }
}

fn pairs(topology: &PairingTopology) -> [Vec<(usize, usize)>; 3] {
    let idx = |l: Level| l.ordinal();
    let conv = |ps: &[rarespot_core::loss::LevelPair]| ps.iter().map(|p| (idx(p.0), idx(p.1))).collect();
    [conv(&topology.mse_pairs), conv(&topology.kl_pairs), conv(&topology.cos_pairs)]
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check(pyr: &PyramidSet, opts: &ConsistencyOptions) -> f64 {
    let r = consistency_loss(pyr, opts).unwrap();
    let levels = [to_map(pyr.p3()), to_map(pyr.p4()), to_map(pyr.p5())];
    let w = opts.weights;
    let o = oracle::consistency(
        &levels,
        &pairs(&opts.topology),
        [w.alpha, w.beta, w.gamma],
        opts.upsample == UpsampleMode::Bilinear,
    );
    let mut worst = [
        (r.l_mse - o.mse).abs(),
        (r.l_kl - o.kl).abs(),
        (r.l_cos - o.cos).abs(),
        (r.l_total - o.total).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    for (l, g) in [Level::P3, Level::P4, Level::P5].into_iter().zip(&o.grads) {
        worst = worst.max(max_diff(r.grads.total.level(l).values(), &g.v));
    }
    worst
}

#[test]
fn matches_scalar_oracle_all_topologies_and_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let pyr = random_pyramid(&mut rng, 8, 8, 8).unwrap();
        for topology in [PairingTopology::literal(), PairingTopology::chain(), PairingTopology::anchored()] {
            for upsample in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
                let opts = ConsistencyOptions {
                    weights: LossWeights::new(0.7, 1.3, 0.4).unwrap(),
                    topology: topology.clone(),
                    upsample,
                    ..Default::default()
                };
                let err = check(&pyr, &opts);
                assert!(err < 1e-9, "{topology:?} {upsample:?}: {err:e}");
            }
        }
    }
}

#[test]
fn bilinear_two_by_two_against_oracle() {
    let x = FeatureMap::new(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let up = upsample(&x, 4, 4, UpsampleMode::Bilinear).unwrap();
    let o = oracle::upsample(&to_map(&x), 4, 4, true);
    assert!(max_diff(up.values(), &o.v) < 1e-15);
    // interior entries: rows/cols sample at 0.25 and 0.75
    assert!((up.get(0, 1, 1) - 0.75).abs() < 1e-15);
    assert!((up.get(0, 1, 2) - 1.25).abs() < 1e-15);
    assert!((up.get(0, 2, 1) - 1.75).abs() < 1e-15);
    assert!((up.get(0, 2, 2) - 2.25).abs() < 1e-15);
}

#[test]
fn upsample_backward_is_oracle_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = rarespot_core::gradcheck::random_map(&mut rng, 3, 8, 12).unwrap();
    for (mode, bilinear) in [(UpsampleMode::Nearest, false), (UpsampleMode::Bilinear, true)] {
        for (h, w) in [(4, 6), (2, 3)] {
            let ours = upsample_backward(&g, h, w, mode).unwrap();
            let theirs = oracle::upsample_adjoint(&to_map(&g), h, w, bilinear);
            assert!(max_diff(ours.values(), &theirs.v) < 1e-12);
        }
    }
}
