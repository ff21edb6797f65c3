//! Supervised training: robust hierarchical loss, RMSProp and the
//! per-sample training loop.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::cost_volume::DisparityMap;
use crate::data::{normalize, StereoSample};
use crate::error::{Error, Result};
use crate::model::StereoNet;
use crate::refinement::upsample_var;
use crate::tensor::{Real, Tensor};

/// Scale `c` of the robust loss.
pub const LOSS_SCALE: f64 = 2.0;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

/// `sqrt((x/c)² + 1) − 1`: quadratic near zero, linear in the tails.
pub fn robust_loss(x: f64, c: f64) -> f64 {
    let r = x / c;
    (r * r + 1.0).sqrt() - 1.0
}

/// Derivative of [`robust_loss`] in `x`; bounded by `1/c` in magnitude.
pub fn robust_loss_grad(x: f64, c: f64) -> f64 {
    x / (c * c * ((x / c).powi(2) + 1.0).sqrt())
}

/// Sum over levels of the masked robust mean between each level's
/// prediction, upsampled to full resolution, and the ground truth.
pub fn hierarchical_loss<T: Real>(
    tape: &mut Tape<T>,
    levels: &[(usize, Var)],
    gt: &Tensor<T>,
    mask: &[bool],
) -> Result<Var> {
    if gt.rank() != 2 {
        return Err(Error::shape(format!("ground truth must be H×W, got {:?}", gt.shape())));
    }
    if levels.is_empty() {
        return Err(Error::invalid("no predictions to supervise"));
    }
    let (h, w) = (gt.shape()[0], gt.shape()[1]);
    let mut total: Option<Var> = None;
    for &(_, v) in levels {
        let up = upsample_var(tape, v, h, w)?;
        let term = tape.robust_mean(up, gt, mask, LOSS_SCALE)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.unwrap())
}

/// RMSProp with decay 0.9 and a per-parameter squared-gradient average.
#[derive(Clone, Debug)]
pub struct RmsProp<T: Real = f32> {
    pub decay: f64,
    pub eps: f64,
    pub acc: Vec<Tensor<T>>,
}

impl<T: Real> RmsProp<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self {
            decay: RMSPROP_DECAY,
            eps: RMSPROP_EPS,
            acc: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    /// `acc ← ρ·acc + (1−ρ)·g²`, `θ ← θ − lr·g/√(acc+ε)`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.acc.len() != store.len() {
            return Err(Error::invalid("optimizer state does not match parameters"));
        }
        let (rho, eps, lr) = (T::lit(self.decay), T::lit(self.eps), T::lit(lr));
        let keep = T::one() - rho;
        for (p, acc) in store.iter_mut().zip(&mut self.acc) {
            let grad = p.grad.data();
            for ((w, a), &g) in p.value.data_mut().iter_mut().zip(acc.data_mut()).zip(grad) {
                *a = rho * *a + keep * g * g;
                *w -= lr * g / (*a + eps).sqrt();
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr0: f64,
    pub decay_rate: f64,
    /// Steps per factor of `decay_rate`.
    pub decay_steps: usize,
    pub seed: u64,
    /// Also supervise the mirrored right view when it has ground truth.
    pub both_sides: bool,
    /// Turn each sampled pair upside down with probability 1/2.
    pub vertical_flip: bool,
}

impl TrainConfig {
    pub fn new(iterations: usize) -> Self {
        Self {
            iterations,
            lr0: 1e-3,
            decay_rate: 0.9,
            decay_steps: (iterations / 10).max(1),
            seed: 0,
            both_sides: true,
            vertical_flip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config(format!("decay_rate must lie in (0, 1], got {}", self.decay_rate)));
        }
        if self.decay_steps == 0 {
            return Err(Error::Config("decay_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// `lr0 · rate^(step/decay_steps)`.
    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr0 * self.decay_rate.powf(step as f64 / self.decay_steps as f64)
    }
}

/// One optimizer step of the loss history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Mean hierarchical loss over the passes of this step.
    pub loss: f64,
    /// Mean full-resolution end-point error over the passes.
    pub epe_fullres: f64,
    pub passes: usize,
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[StepRecord]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "step,lr,loss,epe_fullres").map_err(io)?;
    for r in history {
        writeln!(f, "{},{:.6e},{:.6},{:.6}", r.step, r.lr, r.loss, r.epe_fullres).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Masked mean absolute difference.
pub(crate) fn masked_epe(pred: &[f32], gt: &[f32], mask: &[bool]) -> Result<f64> {
    let (sum, n) = pred
        .iter()
        .zip(gt)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((&p, &g), _)| (s + (p as f64 - g as f64).abs(), n + 1));
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Forward and backward on one view; gradients are added into the model.
/// Returns the loss and the full-resolution EPE.
pub fn train_pass(model: &mut StereoNet<f32>, sample: &StereoSample) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &normalize(&sample.left), &normalize(&sample.right))?;
    let loss = hierarchical_loss(&mut tape, &fwd.levels, &sample.gt_left.values, &sample.valid_mask)?;
    tape.backward(loss, &mut model.params)?;
    let (_, last) = *fwd.levels.last().unwrap();
    let epe = masked_epe(tape.value(last).data(), sample.gt_left.values.data(), &sample.valid_mask)?;
    Ok((tape.value(loss).data()[0].as_f64(), epe))
}

/// Training state that can be stepped, checkpointed and resumed.
pub struct Trainer {
    pub model: StereoNet<f32>,
    pub opt: RmsProp<f32>,
    pub config: TrainConfig,
    /// Optimizer steps completed.
    pub step: usize,
}

const OPT_PREFIX: &str = "rmsprop/";

impl Trainer {
    pub fn new(model: StereoNet<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            opt: RmsProp::new(&model.params),
            model,
            config,
            step: 0,
        })
    }

    /// Dataset index used at `step`: a fresh seeded permutation per epoch.
    pub fn sample_index(&self, step: usize, len: usize) -> usize {
        let epoch = (step / len) as u64;
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        order[step % len]
    }

    /// Whether `run` flips the pair drawn at `step`; seeded per step so a
    /// resumed run makes the same choices.
    pub fn flips_at(&self, step: usize) -> bool {
        self.config.vertical_flip
            && ChaCha8Rng::seed_from_u64(self.config.seed.rotate_left(17) ^ step as u64).random_bool(0.5)
    }

    /// One optimizer step on `sample` (two passes with `both_sides` and a
    /// right-view ground truth).
    pub fn train_step(&mut self, sample: &StereoSample) -> Result<StepRecord> {
        self.model.params.zero_grad();
        let mut views = vec![sample.clone()];
        if self.config.both_sides {
            views.extend(sample.mirrored());
        }
        let (mut loss, mut epe) = (0.0, 0.0);
        for v in &views {
            let (l, e) = train_pass(&mut self.model, v)?;
            loss += l;
            epe += e;
        }
        let lr = self.config.lr_at(self.step);
        self.opt.step(&mut self.model.params, lr)?;
        self.step += 1;
        let n = views.len() as f64;
        Ok(StepRecord {
            step: self.step,
            lr,
            loss: loss / n,
            epe_fullres: epe / n,
            passes: views.len(),
        })
    }

    /// Steps until `config.iterations`, calling `on_step` after each one.
    pub fn run(&mut self, dataset: &[StereoSample], mut on_step: impl FnMut(&StepRecord)) -> Result<Vec<StepRecord>> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut history = Vec::with_capacity(self.config.iterations.saturating_sub(self.step));
        while self.step < self.config.iterations {
            let idx = self.sample_index(self.step, dataset.len());
            let rec = if self.flips_at(self.step) {
                self.train_step(&dataset[idx].flipped_vertical())?
            } else {
                self.train_step(&dataset[idx])?
            };
            on_step(&rec);
            history.push(rec);
        }
        Ok(history)
    }

    /// Model checkpoint plus optimizer accumulators and the step counter.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.metadata.insert("step".into(), self.step.to_string());
        for (p, acc) in self.model.params.iter().zip(&self.opt.acc) {
            ck.tensors.push((format!("{OPT_PREFIX}{}", p.name), acc.clone()));
        }
        ck
    }

    /// Restores a trainer from [`Trainer::checkpoint`] output. Missing
    /// optimizer state starts from zero.
    pub fn resume(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let model = StereoNet::from_checkpoint(ck)?;
        let mut t = Self::new(model, config)?;
        t.step = match ck.metadata.get("step") {
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("bad step {s:?} in checkpoint")))?,
            None => 0,
        };
        for (p, acc) in t.model.params.iter().zip(&mut t.opt.acc) {
            if let Some(a) = ck.get(&format!("{OPT_PREFIX}{}", p.name)) {
                if a.shape() != acc.shape() {
                    return Err(Error::Config(format!("optimizer state for {} has the wrong shape", p.name)));
                }
                *acc = a.clone();
            }
        }
        Ok(t)
    }
}

/// Full-resolution prediction of `model` for `sample`.
pub fn predict_full(model: &StereoNet<f32>, sample: &StereoSample) -> Result<DisparityMap> {
    Ok(model.predict(&sample.left, &sample.right)?.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robust_loss_shape() {
        assert_eq!(robust_loss(0.0, 2.0), 0.0);
        assert!((robust_loss(2.0, 2.0) - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((robust_loss_grad(1e6, 2.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_step_only_decays_state() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::full(&[3], 1.5));
        let mut opt = RmsProp::new(&store);
        opt.acc[0].fill(2.0);
        opt.step(&mut store, 0.1).unwrap();
        assert_eq!(store.iter().next().unwrap().value.data(), &[1.5; 3]);
        assert!(opt.acc[0].data().iter().all(|&a| (a - 1.8).abs() < 1e-15));
    }

    #[test]
    fn first_step_moves_by_lr_over_sqrt_one_minus_rho() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::full(&[1], 0.0));
        store.get_mut(id).grad.fill(4.0);
        let mut opt = RmsProp::new(&store);
        opt.step(&mut store, 0.01).unwrap();
        // acc = 0.1·16, step = 0.01·4/√1.6
        let expect = -0.01 * 4.0 / (1.6f64 + 1e-8).sqrt();
        assert!((store.get(id).value.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn schedule_decays_by_rate_every_decay_steps() {
        let cfg = TrainConfig::new(1000);
        assert_eq!(cfg.decay_steps, 100);
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert!((cfg.lr_at(200) - 1e-3 * 0.81).abs() < 1e-15);
    }
}
