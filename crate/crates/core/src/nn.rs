//! Layer building blocks shared by the feature tower, the cost filter and
//! the refiners.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Slope of every leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-3;

/// Samples `N(0, std²)` truncated to ±2σ.
fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Convolution layer with bias. Kernel shape is `k×k` or `k×k×k`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub dilation: usize,
}

impl Conv {
    /// Registers weights initialised with a fan-in scaled truncated normal
    /// (`std = sqrt(2/fan_in)`), times `gain`. Biases start at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: &[usize],
        cin: usize,
        cout: usize,
        stride: usize,
        dilation: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut shape = kernel.to_vec();
        shape.push(cin);
        shape.push(cout);
        let fan_in = kernel.iter().product::<usize>() * cin;
        let std = (2.0 / fan_in as f64).sqrt() * gain;
        let w = Tensor::from_fn(&shape, |_| T::lit(truncated_normal(rng, std)));
        Self {
            weight: store.insert(format!("{name}.weight"), w),
            bias: store.insert(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            dilation,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv(x, w, b, self.stride, self.dilation)
    }

    /// Sets weights and bias to zero.
    pub fn zero<T: Real>(&self, store: &mut ParamStore<T>) {
        store.get_mut(self.weight).value.fill(T::zero());
        store.get_mut(self.bias).value.fill(T::zero());
    }
}

/// Per-channel affine batch normalization.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: store.insert(format!("{name}.beta"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.batch_norm(x, g, b, BN_EPS)
    }
}

/// `x + bn(conv(lrelu(bn(conv(x)))))` with two 3×3 (or 3×3×3) convolutions.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub alpha: f64,
    pub conv1: Conv,
    pub norm1: Norm,
    pub conv2: Conv,
    pub norm2: Norm,
}

impl ResBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        dilation: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            alpha,
            conv1: Conv::new(store, &format!("{name}.conv1"), &[3, 3], channels, channels, 1, dilation, 1.0, rng),
            norm1: Norm::new(store, &format!("{name}.bn1"), channels),
            conv2: Conv::new(store, &format!("{name}.conv2"), &[3, 3], channels, channels, 1, dilation, 1.0, rng),
            norm2: Norm::new(store, &format!("{name}.bn2"), channels),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(tape, store, x)?;
        let y = self.norm1.forward(tape, store, y)?;
        let y = tape.leaky_relu(y, self.alpha)?;
        let y = self.conv2.forward(tape, store, y)?;
        let y = self.norm2.forward(tape, store, y)?;
        tape.add(x, y)
    }
}

/// 3×3×3 convolution followed by batch-norm and leaky ReLU.
#[derive(Clone, Debug)]
pub struct ConvNormAct {
    pub alpha: f64,
    pub conv: Conv,
    pub norm: Norm,
}

impl ConvNormAct {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, store, x)?;
        let y = self.norm.forward(tape, store, y)?;
        tape.leaky_relu(y, self.alpha)
    }
}
