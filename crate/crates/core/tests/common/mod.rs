//! Gradient oracles shared by the gradient tests and the acceptance run.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stereonet::autograd::{ParamStore, Tape, Var};
use stereonet::data::{normalize, synth_pair, DisparityField, SynthSpec};
use stereonet::gradcheck::{finite_diff_check, relative_error};
use stereonet::kernels::AxisMap;
use stereonet::training::hierarchical_loss;
use stereonet::{ModelConfig, Real, Result, StereoNet, Tensor};

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = tape.constant(random(tape.shape(y), seed ^ 0xABCD));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

/// Maximum relative error of every differentiable op on fixed random inputs
/// in 64-bit.
pub fn op_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let h = 1e-6;
    let run = |x: &Tensor<f64>, f: &dyn Fn(&mut Tape<f64>, Var) -> Result<Var>| {
        finite_diff_check(f, x, h).unwrap().max_rel_error
    };
    let x3 = random(&[5, 6, 3], seed);
    let w2 = random(&[3, 3, 3, 2], seed + 1);
    let b2 = random(&[2], seed + 2);
    let v4 = random(&[3, 4, 3, 2], seed + 3);
    let w3 = random(&[3, 3, 3, 2, 2], seed + 4);
    let kinkless = x3.map(|v| if v.abs() < 1e-4 { v + 1e-3 } else { v });
    let other = random(&[5, 6, 3], seed + 5);
    let target = random(&[5, 6], seed + 6);
    let mask: Vec<bool> = (0..30).map(|i| i % 4 != 0).collect();
    let gb = random(&[3], seed + 7);
    vec![
        ("conv2d", run(&x3, &|t, v| {
            let (w, b) = (t.constant(w2.clone()), t.constant(b2.clone()));
            let y = t.conv(v, w, b, 1, 2)?;
            project(t, y, seed)
        })),
        ("conv2d_strided_weight", run(&w2, &|t, w| {
            let (x, b) = (t.constant(x3.clone()), t.constant(b2.clone()));
            let y = t.conv(x, w, b, 2, 1)?;
            project(t, y, seed)
        })),
        ("conv3d", run(&v4, &|t, v| {
            let (w, b) = (t.constant(w3.clone()), t.constant(b2.clone()));
            let y = t.conv(v, w, b, 1, 1)?;
            project(t, y, seed)
        })),
        ("batch_norm", run(&x3, &|t, v| {
            let (g, b) = (t.constant(gb.clone()), t.constant(gb.map(|x| -x)));
            let y = t.batch_norm(v, g, b, 1e-3)?;
            project(t, y, seed)
        })),
        ("batch_norm_gamma", run(&gb, &|t, g| {
            let (x, b) = (t.constant(x3.clone()), t.constant(gb.clone()));
            let y = t.batch_norm(x, g, b, 1e-3)?;
            project(t, y, seed)
        })),
        ("leaky_relu", run(&kinkless, &|t, v| {
            let y = t.leaky_relu(v, 0.2)?;
            project(t, y, seed)
        })),
        ("add_mul_scale_reshape", run(&x3, &|t, v| {
            let o = t.constant(other.clone());
            let a = t.add(v, o)?;
            let m = t.mul(a, v)?;
            let s = t.scale(m, -1.7)?;
            let r = t.reshape(s, &[30, 3])?;
            project(t, r, seed)
        })),
        ("resize", run(&x3, &|t, v| {
            let y = t.resize(v, 9, 4)?;
            project(t, y, seed)
        })),
        ("resample", run(&x3, &|t, v| {
            let m = AxisMap { scale: 0.7, offset: 0.4375 };
            let y = t.resample(v, 4, 7, [m, m])?;
            project(t, y, seed)
        })),
        ("concat", run(&x3, &|t, v| {
            let o = t.constant(other.clone());
            let y = t.concat(&[v, o])?;
            project(t, y, seed)
        })),
        ("cost_volume", run(&x3, &|t, v| {
            let o = t.constant(other.clone());
            let y = t.cost_volume(v, o, 3)?;
            project(t, y, seed)
        })),
        ("soft_argmin", run(&x3, &|t, v| {
            let y = t.soft_argmin(v)?;
            project(t, y, seed)
        })),
        ("softmax", run(&x3, &|t, v| {
            let y = t.softmax(v, 1)?;
            project(t, y, seed)
        })),
        ("robust_mean", run(&target.map(|v| 3.0 * v), &|t, v| t.robust_mean(v, &target, &mask, 2.0))),
    ]
}

fn coarse_loss<T: Real>(
    model: &StereoNet<T>,
    params: &ParamStore<T>,
    pair: (&Tensor<T>, &Tensor<T>),
    gt: &Tensor<T>,
    mask: &[bool],
) -> (Tape<T>, Var) {
    let net = StereoNet {
        params: params.clone(),
        ..model.clone()
    };
    let mut tape = Tape::new();
    let (_, coarse) = net.forward_coarse(&mut tape, pair.0, pair.1, &mut |_| {}).unwrap();
    let l = hierarchical_loss(&mut tape, &[(model.config.k, coarse)], gt, mask).unwrap();
    (tape, l)
}

/// Largest relative error between the 32-bit analytic gradient of the
/// unrefined network (features, cost volume, filter, soft argmin) on a
/// 16×32 pair and 64-bit central differences, sampled over every tower and
/// filter parameter tensor.
pub fn unrefined_model_max_rel_error() -> f64 {
    let cfg = ModelConfig {
        k: 3,
        max_disparity: 15,
        ..Default::default()
    };
    let model = StereoNet::<f32>::new(cfg, 7).unwrap();
    let pair = synth_pair(&SynthSpec::new(32, 16, DisparityField::Constant(3.4), 11)).unwrap();
    let (left, right) = (normalize(&pair.left), normalize(&pair.right));
    let gt = pair.gt_left.values.clone();
    let mask = pair.valid_mask.clone();

    let mut store = model.params.clone();
    let (tape, l) = coarse_loss(&model, &store, (&left, &right), &gt, &mask);
    tape.backward(l, &mut store).unwrap();

    let model64 = model.cast::<f64>();
    let (left64, right64, gt64) = (left.cast::<f64>(), right.cast::<f64>(), gt.cast::<f64>());
    let eval = |params: &ParamStore<f64>| {
        let (t, v) = coarse_loss(&model64, params, (&left64, &right64), &gt64, &mask);
        t.value(v)[0]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store
        .iter()
        .filter(|p| p.name.starts_with("feature.") || p.name.starts_with("filter."))
        .map(|p| store.id(&p.name).unwrap())
        .collect();
    let h = 1e-6;
    for id in ids {
        let analytic = &store.get(id).grad;
        for _ in 0..2 {
            let i = rng.random_range(0..analytic.len());
            let mut p = model64.params.clone();
            p.get_mut(id).value.data_mut()[i] += h;
            let up = eval(&p);
            p.get_mut(id).value.data_mut()[i] -= 2.0 * h;
            let down = eval(&p);
            let e = relative_error(analytic[i] as f64, (up - down) / (2.0 * h));
            worst = worst.max(e);
        }
    }
    worst
}
