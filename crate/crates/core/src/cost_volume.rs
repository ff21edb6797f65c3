//! Coarse cost volume: formation by feature differencing, 3-D filtering and
//! the three disparity selection rules (hard, soft and sampled argmin).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels;
use crate::nn::{Conv, ConvNormAct, Norm, LEAKY_SLOPE};
use crate::tensor::{Real, Tensor};

/// Continuous per-pixel disparity in pixels of its own resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    /// `H×W` disparities.
    pub values: Tensor<f32>,
    /// 0 = full resolution, `k` = downsampled by `2^k`.
    pub level: usize,
}

impl DisparityMap {
    pub fn new(values: Tensor<f32>, level: usize) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::shape(format!(
                "disparity map must be H×W, got {:?}",
                values.shape()
            )));
        }
        Ok(Self { values, level })
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values.data()[y * self.width() + x]
    }
}

/// Number of coarse candidates `(D+1)/2^K`; `D+1` must divide evenly.
pub fn coarse_candidates(max_disparity: usize, k: usize) -> Result<usize> {
    let factor = 1usize << k;
    if (max_disparity + 1) % factor != 0 {
        return Err(Error::Config(format!(
            "cost volume size (D+1)/2^K requires D+1 divisible by 2^K: D={max_disparity}, K={k}"
        )));
    }
    Ok((max_disparity + 1) / factor)
}

/// Coarse cost volume.
#[derive(Clone, Debug)]
pub struct CostVolume<T: Real = f32> {
    /// `H'×W'×D'×C` feature differences.
    pub raw: Tensor<T>,
    /// `H'×W'×D'` matching cost, lower is better.
    pub filtered: Tensor<T>,
    pub candidates: usize,
    pub level: usize,
}

/// `raw[y,x,d,:] = left[y,x,:] − right[y,max(x−d,0),:]` (left reference).
pub fn form_cost_volume<T: Real>(left: &Tensor<T>, right: &Tensor<T>, candidates: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let l = tape.constant(left.clone());
    let r = tape.constant(right.clone());
    let v = tape.cost_volume(l, r, candidates)?;
    Ok(tape.value(v).clone())
}

/// Four 3×3×3 conv + batch-norm + leaky-ReLU layers and a final linear
/// 3×3×3 conv to one channel.
#[derive(Clone, Debug)]
pub struct FilterParams {
    pub layers: Vec<ConvNormAct>,
    pub last: Conv,
}

impl FilterParams {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..4)
            .map(|i| ConvNormAct {
                alpha: LEAKY_SLOPE,
                conv: Conv::new(store, &format!("{prefix}.conv{i}"), &[3, 3, 3], channels, channels, 1, 1, 1.0, rng),
                norm: Norm::new(store, &format!("{prefix}.bn{i}"), channels),
            })
            .collect();
        let last = Conv::new(store, &format!("{prefix}.last"), &[3, 3, 3], channels, 1, 1, 1, 1.0, rng);
        Self { layers, last }
    }

    /// Maps a `H×W×D×C` raw volume var to `H×W×D` costs.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, raw: Var) -> Result<Var> {
        let mut x = raw;
        for layer in &self.layers {
            x = layer.forward(tape, store, x)?;
        }
        let y = self.last.forward(tape, store, x)?;
        let s = tape.shape(y).to_vec();
        tape.reshape(y, &s[..3])
    }

    pub fn zero<T: Real>(&self, store: &mut ParamStore<T>) {
        for layer in &self.layers {
            layer.conv.zero(store);
        }
        self.last.zero(store);
    }
}

pub fn filter_cost_volume<T: Real>(raw: &Tensor<T>, store: &ParamStore<T>, filter: &FilterParams) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(raw.clone());
    let y = filter.forward(&mut tape, store, v)?;
    Ok(tape.value(y).clone())
}

fn rows<T: Real>(costs: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match costs.shape() {
        &[h, w, d] => Ok((h, w, d)),
        s => Err(Error::shape(format!("filtered costs must be H×W×D, got {s:?}"))),
    }
}

/// Per-pixel index of the minimum cost; ties go to the smaller disparity.
pub fn hard_argmin<T: Real>(costs: &Tensor<T>, level: usize) -> Result<DisparityMap> {
    let (h, w, d) = rows(costs)?;
    let values = costs
        .data()
        .chunks_exact(d)
        .map(|row| {
            let mut best = 0;
            for (j, &c) in row.iter().enumerate() {
                if c < row[best] {
                    best = j;
                }
            }
            best as f32
        })
        .collect();
    DisparityMap::new(Tensor::new(&[h, w], values)?, level)
}

/// `Σ_d d·softmax(−C)_d` per pixel.
pub fn soft_argmin<T: Real>(costs: &Tensor<T>, level: usize) -> Result<DisparityMap> {
    let (h, w, d) = rows(costs)?;
    let (values, _) = kernels::soft_argmin_forward(costs.data(), d);
    let values = values.into_iter().map(|v| v.as_f64() as f32).collect();
    DisparityMap::new(Tensor::new(&[h, w], values)?, level)
}

/// Draws one candidate per pixel from `softmax(−C)`. Inference only.
pub fn sample_disparity<T: Real>(costs: &Tensor<T>, level: usize, seed: u64) -> Result<DisparityMap> {
    let (h, w, d) = rows(costs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = vec![T::zero(); costs.len()];
    kernels::neg_softmax_rows(costs.data(), d, &mut probs);
    let values = probs
        .chunks_exact(d)
        .map(|p| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (j, &pj) in p.iter().enumerate() {
                acc += pj.as_f64();
                if u < acc {
                    return j as f32;
                }
            }
            (d - 1) as f32
        })
        .collect();
    DisparityMap::new(Tensor::new(&[h, w], values)?, level)
}
