//! Analytic gradients against central finite differences.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stereonet::autograd::{Tape, Var};
use stereonet::gradcheck::finite_diff_check;
use stereonet::kernels::AxisMap;
use stereonet::{Result, Tensor};

const TOL: f64 = 1e-5;
const H: f64 = 1e-6;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `Σ w ⊙ y` with fixed random `w`, so every output element matters.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = tape.constant(random(tape.shape(y), seed ^ 0xABCD));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn check(point: &Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>) {
    let r = finite_diff_check(f, point, H).unwrap();
    assert!(r.max_rel_error < TOL, "max relative error {:.3e}", r.max_rel_error);
}

/// Moves entries within `margin` of zero away from the ReLU kink.
fn away_from_zero(t: Tensor<f64>, margin: f64) -> Tensor<f64> {
    t.map(|v| if v.abs() < margin { v.signum() * margin + v } else { v })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn conv2d_input_and_weight(seed in 0u64..1000, stride in 1usize..3, dilation in 1usize..3) {
        let x = random(&[7, 9, 3], seed);
        let w = random(&[3, 3, 3, 2], seed + 1);
        let b = random(&[2], seed + 2);
        check(&x, |t, v| {
            let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
            let y = t.conv(v, w, b, stride, dilation)?;
            project(t, y, seed)
        });
        check(&w, |t, wv| {
            let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
            let y = t.conv(x, wv, b, stride, dilation)?;
            project(t, y, seed)
        });
    }

    #[test]
    fn conv3d(seed in 0u64..1000) {
        let x = random(&[4, 5, 3, 2], seed);
        let w = random(&[3, 3, 3, 2, 2], seed + 1);
        let b = random(&[2], seed + 2);
        check(&x, |t, v| {
            let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
            let y = t.conv(v, w, b, 1, 1)?;
            project(t, y, seed)
        });
        check(&b, |t, bv| {
            let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
            let y = t.conv(x, w, bv, 1, 1)?;
            project(t, y, seed)
        });
    }

    #[test]
    fn batch_norm(seed in 0u64..1000) {
        let x = random(&[4, 5, 3], seed);
        let g = random(&[3], seed + 1);
        let b = random(&[3], seed + 2);
        check(&x, |t, v| {
            let (g, b) = (t.constant(g.clone()), t.constant(b.clone()));
            let y = t.batch_norm(v, g, b, 1e-3)?;
            project(t, y, seed)
        });
        check(&g, |t, gv| {
            let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
            let y = t.batch_norm(x, gv, b, 1e-3)?;
            project(t, y, seed)
        });
    }

    #[test]
    fn leaky_relu(seed in 0u64..1000, alpha in 0.0f64..0.5) {
        let x = away_from_zero(random(&[5, 6], seed), 10.0 * H);
        check(&x, |t, v| {
            let y = t.leaky_relu(v, alpha)?;
            project(t, y, seed)
        });
    }

    #[test]
    fn elementwise(seed in 0u64..1000, factor in -3.0f64..3.0) {
        let x = random(&[3, 4, 2], seed);
        let other = random(&[3, 4, 2], seed + 1);
        check(&x, |t, v| {
            let o = t.constant(other.clone());
            let a = t.add(v, o)?;
            let m = t.mul(a, v)?;
            let s = t.scale(m, factor)?;
            let r = t.reshape(s, &[12, 2])?;
            project(t, r, seed)
        });
    }

    #[test]
    fn resize(seed in 0u64..1000, oh in 2usize..11, ow in 2usize..11) {
        let x = random(&[5, 4, 2], seed);
        check(&x, |t, v| {
            let y = t.resize(v, oh, ow)?;
            project(t, y, seed)
        });
    }

    #[test]
    fn resample_with_offsets(seed in 0u64..1000, scale in 0.2f64..2.0, offset in -0.9f64..0.9) {
        let x = random(&[5, 4, 2], seed);
        let maps = [AxisMap { scale, offset }, AxisMap { scale: 1.0, offset: offset / 2.0 }];
        check(&x, |t, v| {
            let y = t.resample(v, 6, 4, maps)?;
            project(t, y, seed)
        });
    }

    #[test]
    fn concat(seed in 0u64..1000) {
        let x = random(&[3, 4, 2], seed);
        let other = random(&[3, 4, 3], seed + 1);
        check(&x, |t, v| {
            let o = t.constant(other.clone());
            let y = t.concat(&[o, v, o])?;
            project(t, y, seed)
        });
    }

    #[test]
    fn cost_volume(seed in 0u64..1000, d in 1usize..5) {
        let l = random(&[3, 6, 2], seed);
        let r = random(&[3, 6, 2], seed + 1);
        check(&l, |t, v| {
            let rv = t.constant(r.clone());
            let y = t.cost_volume(v, rv, d)?;
            project(t, y, seed)
        });
        check(&r, |t, v| {
            let lv = t.constant(l.clone());
            let y = t.cost_volume(lv, v, d)?;
            project(t, y, seed)
        });
    }

    #[test]
    fn soft_argmin_and_softmax(seed in 0u64..1000, axis in 0usize..3) {
        let x = random(&[3, 4, 5], seed).map(|v| 3.0 * v);
        check(&x, |t, v| {
            let y = t.soft_argmin(v)?;
            project(t, y, seed)
        });
        check(&x, |t, v| {
            let y = t.softmax(v, axis)?;
            project(t, y, seed)
        });
    }

    #[test]
    fn robust_mean(seed in 0u64..1000, scale in 0.5f64..3.0) {
        let x = random(&[4, 5], seed).map(|v| 4.0 * v);
        let target = random(&[4, 5], seed + 1);
        let mask: Vec<bool> = (0..20).map(|i| (i + seed as usize) % 3 != 0).collect();
        check(&x, |t, v| t.robust_mean(v, &target, &mask, scale));
    }
}

#[test]
fn unrefined_model_end_to_end() {
    let worst = common::unrefined_model_max_rel_error();
    assert!(worst < 1e-3, "max relative error {worst:.3e}");
}

#[test]
fn fixed_op_suite() {
    for (name, err) in common::op_suite(17) {
        assert!(err < TOL, "{name}: {err:.3e}");
    }
}
