//! Invariants of the network stages, metrics, loss and baseline.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stereonet::autograd::Tape;
use stereonet::baseline::{parabola_offset, parabola_refine};
use stereonet::cost_volume::{hard_argmin, soft_argmin};
use stereonet::eval::{bad_pixel_ratio, depth_error_bound, epe, subpixel_precision};
use stereonet::features::{build_tower, extract_features, TowerSpec};
use stereonet::training::{hierarchical_loss, robust_loss, robust_loss_grad, LOSS_SCALE};
use stereonet::{DisparityMap, Error, Tensor};

fn map(values: Vec<f32>, w: usize) -> DisparityMap {
    let h = values.len() / w;
    DisparityMap::new(Tensor::new(&[h, w], values).unwrap(), 0).unwrap()
}

proptest! {
    #[test]
    fn soft_argmin_stays_in_candidate_range(seed in 0u64..10_000, d in 1usize..9, spread in 0.1f32..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let costs = Tensor::from_fn(&[3, 4, d], |_| rng.random_range(-spread..spread));
        let out = soft_argmin(&costs, 0).unwrap();
        prop_assert!(out.values.data().iter().all(|&v| v >= 0.0 && v <= (d - 1) as f32));
    }

    #[test]
    fn soft_argmin_ignores_per_pixel_offsets(seed in 0u64..10_000, d in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let costs = Tensor::from_fn(&[2, 5, d], |_| rng.random_range(-5.0f64..5.0));
        let offsets: Vec<f64> = (0..10).map(|_| rng.random_range(-100.0..100.0)).collect();
        let shifted = Tensor::from_fn(&[2, 5, d], |i| costs.data()[i] + offsets[i / d]);
        let a = soft_argmin(&costs, 0).unwrap();
        let b = soft_argmin(&shifted, 0).unwrap();
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            prop_assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn soft_matches_hard_with_a_clear_winner(seed in 0u64..10_000, d in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut costs = Tensor::from_fn(&[3, 3, d], |_| rng.random_range(20.0f32..40.0));
        for p in 0..9 {
            let win = rng.random_range(0..d);
            costs.data_mut()[p * d + win] = 0.0;
        }
        let soft = soft_argmin(&costs, 0).unwrap();
        let hard = hard_argmin(&costs, 0).unwrap();
        for (s, h) in soft.values.data().iter().zip(hard.values.data()) {
            prop_assert!((s - h).abs() < 1e-6, "{s} vs {h}");
        }
    }

    #[test]
    fn robust_loss_is_a_smoothed_l1(x in -1e3f64..1e3) {
        let c = LOSS_SCALE;
        prop_assert_eq!(robust_loss(x, c), robust_loss(-x, c));
        prop_assert!(robust_loss(x, c) >= 0.0);
        prop_assert!(robust_loss_grad(x, c).abs() < 1.0 / c);
        if x > 0.0 {
            prop_assert!(robust_loss(x * 1.01 + 1e-3, c) > robust_loss(x, c));
        }
    }

    #[test]
    fn parabola_offset_is_bounded_and_offset_free(a in -1e3f64..1e3, b in -1e3f64..1e3, c in -1e3f64..1e3, k in -1e3f64..1e3) {
        let o = parabola_offset(a, b, c);
        prop_assert!((-0.5..=0.5).contains(&o));
        prop_assert!((parabola_offset(a + k, b + k, c + k) - o).abs() < 1e-9);
    }

    #[test]
    fn metric_invariants(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt: Vec<f32> = (0..48).map(|_| rng.random_range(0.0..30.0)).collect();
        let pred: Vec<f32> = gt.iter().map(|g| g + rng.random_range(-4.0f32..4.0)).collect();
        let mask: Vec<bool> = (0..48).map(|_| rng.random_bool(0.8)).collect();
        prop_assume!(mask.iter().any(|&m| m));
        let (p, g) = (map(pred, 8), map(gt, 8));
        prop_assert!(epe(&p, &g, &mask).unwrap() >= 0.0);
        prop_assert_eq!(epe(&g, &g, &mask).unwrap(), 0.0);
        let ratios: Vec<f64> = [0.5, 1.0, 2.0, 3.0].iter().map(|&t| bad_pixel_ratio(&p, &g, &mask, t).unwrap()).collect();
        prop_assert!(ratios.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(ratios.iter().all(|r| (0.0..=100.0).contains(r)));
        match subpixel_precision(&p, &g, &mask) {
            Ok(v) => prop_assert!((0.0..=1.0).contains(&v)),
            Err(e) => prop_assert!(matches!(e, Error::NoCorrectMatches)),
        }
    }

    #[test]
    fn depth_error_scaling(d in 0.01f64..2.0, z in 0.5f64..50.0, b in 0.05f64..1.0, f in 50.0f64..2000.0) {
        let e = depth_error_bound(d, z, b, f).unwrap();
        let rel = |x: f64, y: f64| ((x - y) / y).abs() < 1e-12;
        prop_assert!(rel(depth_error_bound(2.0 * d, z, b, f).unwrap(), 2.0 * e));
        prop_assert!(rel(depth_error_bound(d, 2.0 * z, b, f).unwrap(), 4.0 * e));
        prop_assert!(rel(depth_error_bound(d, z, 2.0 * b, f).unwrap(), 0.5 * e));
    }
}

#[test]
fn parabola_refine_is_shift_invariant_in_index() {
    let curve = [9.0f32, 4.0, 1.0, 3.0, 8.0];
    let padded = [20.0f32, 20.0, 9.0, 4.0, 1.0, 3.0, 8.0];
    assert!((parabola_refine(&padded, 4) - 2.0 - parabola_refine(&curve, 2)).abs() < 1e-12);
}

#[test]
fn hierarchical_loss_values() {
    let gt = Tensor::<f64>::from_fn(&[4, 8], |i| (i % 5) as f64);
    let mask = vec![true; 32];
    let mut tape = Tape::new();
    let exact = tape.constant(gt.clone());
    let l = hierarchical_loss(&mut tape, &[(0, exact), (0, exact)], &gt, &mask).unwrap();
    assert_eq!(tape.value(l)[0], 0.0);

    // A level-1 map of constant 1 is upsampled with value scaling to 2 px.
    let zeros = Tensor::<f64>::zeros(&[4, 8]);
    let mut tape = Tape::new();
    let coarse = tape.constant(Tensor::full(&[2, 4], 1.0));
    let fine = tape.constant(Tensor::full(&[4, 8], 2.0));
    let l = hierarchical_loss(&mut tape, &[(1, coarse), (0, fine)], &zeros, &mask).unwrap();
    assert!((tape.value(l)[0] - 2.0 * (2f64.sqrt() - 1.0)).abs() < 1e-12);

    let mut tape = Tape::new();
    let v = tape.constant(zeros.clone());
    assert!(matches!(
        hierarchical_loss(&mut tape, &[(0, v)], &zeros, &[false; 32]),
        Err(Error::EmptyMask)
    ));
}

/// With a vanishing scale, `c·ρ(x/c)` tends to `|x|`, so a single-level loss
/// rescaled by `c` tracks the end-point error.
#[test]
fn robust_mean_approaches_epe() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gt = Tensor::<f64>::from_fn(&[4, 6], |_| rng.random_range(0.0..10.0));
    let pred = Tensor::<f64>::from_fn(&[4, 6], |_| rng.random_range(0.0..10.0));
    let mask: Vec<bool> = (0..24).map(|i| i % 4 != 1).collect();
    let c = 1e-7;
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let l = tape.robust_mean(p, &gt, &mask, c).unwrap();
    let as_map = |t: &Tensor<f64>| map(t.data().iter().map(|&v| v as f32).collect(), 6);
    let e = epe(&as_map(&pred), &as_map(&gt), &mask).unwrap();
    assert!((c * tape.value(l)[0] - e).abs() < 1e-5, "{} vs {e}", c * tape.value(l)[0]);
}

#[test]
fn siamese_towers_share_weights() {
    let spec = TowerSpec::new(2);
    let (mut store, tower) = build_tower(&spec, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = Tensor::from_fn(&[16, 24, 3], |_| rng.random_range(-1.0f32..1.0));
    let a = extract_features(&img, &store, &tower).unwrap();
    assert_eq!(a, extract_features(&img, &store, &tower).unwrap());

    // One gradient buffer per weight collects both branches.
    let right = Tensor::from_fn(&[16, 24, 3], |_| rng.random_range(-1.0f32..1.0));
    let grads = |store: &mut stereonet::ParamStore<f32>, use_l: bool, use_r: bool| {
        store.zero_grad();
        let mut tape = Tape::new();
        let mut terms = Vec::new();
        for (img, on, seed) in [(&img, use_l, 1.0f64), (&right, use_r, -0.7)] {
            if on {
                let x = tape.constant(img.clone());
                let f = tower.forward(&mut tape, store, x).unwrap();
                let sq = tape.mul(f, f).unwrap();
                let s = tape.sum(sq).unwrap();
                terms.push(tape.scale(s, seed).unwrap());
            }
        }
        let total = terms.iter().skip(1).fold(terms[0], |a, &b| tape.add(a, b).unwrap());
        tape.backward(total, store).unwrap();
        store.iter().map(|p| p.grad.clone()).collect::<Vec<_>>()
    };
    let both = grads(&mut store, true, true);
    let left_only = grads(&mut store, true, false);
    let right_only = grads(&mut store, false, true);
    for ((b, l), r) in both.iter().zip(&left_only).zip(&right_only) {
        for ((x, y), z) in b.data().iter().zip(l.data()).zip(r.data()) {
            assert!((x - (y + z)).abs() <= 1e-3 * (1.0 + x.abs()), "{x} vs {y} + {z}");
        }
    }

    let first = store.iter_mut().next().unwrap();
    first.value.data_mut()[0] += 0.5;
    assert_ne!(a, extract_features(&img, &store, &tower).unwrap());
}

#[test]
fn same_seed_gives_identical_parameters() {
    let spec = TowerSpec::new(3);
    let (a, _) = build_tower(&spec, 42);
    let (b, _) = build_tower(&spec, 42);
    let (c, _) = build_tower(&spec, 43);
    let eq = |x: &stereonet::ParamStore<f32>, y: &stereonet::ParamStore<f32>| x.iter().zip(y.iter()).all(|(p, q)| p.value == q.value);
    assert!(eq(&a, &b));
    assert!(!eq(&a, &c));
}

/// Shifting the image by `2^K` columns shifts interior features by one
/// coarse column. Per-call normalization statistics see slightly different
/// border content, so agreement is approximate.
#[test]
fn tower_is_translation_equivariant_in_the_interior() {
    let k = 3;
    let (store, tower) = build_tower(&TowerSpec::new(k), 9);
    let (h, w) = (32, 512);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let wide = Tensor::from_fn(&[h, w + 8, 3], |_| rng.random_range(-1.0f32..1.0));
    let crop = |x0: usize| Tensor::from_fn(&[h, w, 3], |i| {
        let (y, x, c) = (i / (w * 3), (i / 3) % w, i % 3);
        wide.data()[(y * (w + 8) + x + x0) * 3 + c]
    });
    let a = extract_features(&crop(8), &store, &tower).unwrap();
    let b = extract_features(&crop(0), &store, &tower).unwrap();
    let [fh, fw, fc] = [a.shape()[0], a.shape()[1], a.shape()[2]];
    let margin = 16;
    let scale = a.max_abs();
    let mut worst = 0.0f32;
    for y in 0..fh {
        for x in margin..fw - margin {
            for c in 0..fc {
                worst = worst.max((a.at(&[y, x, c]) - b.at(&[y, x + 1, c])).abs());
            }
        }
    }
    assert!(worst < 0.05 * scale, "interior mismatch {worst} vs feature scale {scale}");
}
