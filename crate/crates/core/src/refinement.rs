//! Hierarchical edge-aware refinement.
//!
//! Each stage bilinearly upsamples the current disparity (rescaling values so
//! they stay in pixels of the new resolution), concatenates it with the
//! color guide at that resolution, and predicts a residual with a small
//! dilated residual network. The stage output is `ReLU(upsampled + residual)`.

use std::str::FromStr;

use rand::Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::cost_volume::DisparityMap;
use crate::error::{Error, Result};
use crate::kernels::AxisMap;
use crate::nn::{Conv, ResBlock, LEAKY_SLOPE};
use crate::tensor::{Real, Tensor};

/// Dilation of the six residual blocks in every refiner.
pub const DILATIONS: [usize; 6] = [1, 2, 4, 8, 1, 1];

/// Initial weight scale of a refiner's output convolution; a fresh refiner
/// passes its input through almost unchanged.
pub const RESIDUAL_INIT_GAIN: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefineMode {
    /// One refiner per octave, `K` in total.
    Multi,
    /// A single refiner after upsampling straight to full resolution.
    Single,
}

impl RefineMode {
    pub fn stages(self, k: usize) -> usize {
        match self {
            RefineMode::Multi => k,
            RefineMode::Single => 1,
        }
    }
}

impl FromStr for RefineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" => Ok(Self::Multi),
            "single" => Ok(Self::Single),
            other => Err(Error::Config(format!(
                "refinement_mode must be multi or single, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for RefineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RefineMode::Multi => "multi",
            RefineMode::Single => "single",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RefinerParams {
    pub entry: Conv,
    pub blocks: Vec<ResBlock>,
    pub last: Conv,
}

impl RefinerParams {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        guide_channels: usize,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let entry = Conv::new(store, &format!("{prefix}.entry"), &[3, 3], guide_channels + 1, channels, 1, 1, 1.0, rng);
        let blocks = DILATIONS
            .iter()
            .enumerate()
            .map(|(i, &d)| ResBlock::new(store, &format!("{prefix}.res{i}"), channels, d, LEAKY_SLOPE, rng))
            .collect();
        let last = Conv::new(store, &format!("{prefix}.last"), &[3, 3], channels, 1, 1, 1, RESIDUAL_INIT_GAIN, rng);
        Self { entry, blocks, last }
    }

    /// Residual (`H×W`, pixels of the level) for a disparity input already
    /// divided by its unit.
    fn residual<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, disparity: Var, guide: Var) -> Result<Var> {
        let ds = tape.shape(disparity).to_vec();
        let gs = tape.shape(guide).to_vec();
        if gs.len() != 3 || ds[..] != gs[..2] {
            return Err(Error::shape(format!(
                "refinement guide {gs:?} does not match disparity {ds:?}"
            )));
        }
        let d = tape.reshape(disparity, &[ds[0], ds[1], 1])?;
        let x = tape.concat(&[guide, d])?;
        let mut x = self.entry.forward(tape, store, x)?;
        x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        for block in &self.blocks {
            x = block.forward(tape, store, x)?;
        }
        let r = self.last.forward(tape, store, x)?;
        tape.reshape(r, &ds)
    }

    /// `ReLU(d_up + r(d_up/unit, guide))`: the disparity enters the network
    /// divided by `unit`; the residual is in pixels of the level.
    pub fn refine<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        upsampled: Var,
        guide: Var,
        unit: f64,
    ) -> Result<Var> {
        let d_in = tape.scale(upsampled, 1.0 / unit)?;
        let r = self.residual(tape, store, d_in, guide)?;
        let sum = tape.add(upsampled, r)?;
        tape.relu(sum)
    }
}

/// Moves a level-`k` map from the strided tower grid, where pixel `i` sits
/// at full-resolution `2^k·i`, to centered pixels at `2^k·i + (2^k − 1)/2`.
/// Values stay in level-`k` pixels.
pub fn center_coarse<T: Real>(tape: &mut Tape<T>, d: Var, k: usize) -> Result<Var> {
    let (h, w) = match *tape.shape(d) {
        [h, w] => (h, w),
        ref s => return Err(Error::shape(format!("coarse disparity must be H×W, got {s:?}"))),
    };
    let f = (1usize << k) as f64;
    let m = AxisMap {
        scale: 1.0,
        offset: (f - 1.0) / (2.0 * f),
    };
    tape.resample(d, h, w, [m, m])
}

/// Bilinear resize of an `H×W` disparity var, scaling values by the width
/// ratio so they stay in pixels of the output resolution.
pub fn upsample_var<T: Real>(tape: &mut Tape<T>, d: Var, out_h: usize, out_w: usize) -> Result<Var> {
    let w = tape.shape(d)[1];
    let up = tape.resize(d, out_h, out_w)?;
    if out_w == w {
        return Ok(up);
    }
    tape.scale(up, out_w as f64 / w as f64)
}

/// Upsamples by an integer factor, multiplying values by the same factor.
pub fn upsample_disparity(d: &DisparityMap, factor: usize) -> Result<DisparityMap> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::invalid(format!("upsampling factor {factor} must be a power of two")));
    }
    if factor == 1 {
        return Ok(d.clone());
    }
    let shift = factor.trailing_zeros() as usize;
    if shift > d.level {
        return Err(Error::invalid(format!(
            "cannot upsample a level-{} map by {factor}",
            d.level
        )));
    }
    resize_disparity(d, d.height() * factor, d.width() * factor, d.level - shift)
}

/// Resizes a map to explicit extents (e.g. `ceil` sizes of odd inputs).
pub fn resize_disparity(d: &DisparityMap, out_h: usize, out_w: usize, level: usize) -> Result<DisparityMap> {
    let mut tape = Tape::new();
    let v = tape.constant(d.values.clone());
    let up = upsample_var(&mut tape, v, out_h, out_w)?;
    DisparityMap::new(tape.value(up).clone(), level)
}

/// Extent of a level-`level` map for a full-resolution `h×w` input.
pub fn level_extent(h: usize, w: usize, level: usize) -> (usize, usize) {
    (h.div_ceil(1 << level), w.div_ceil(1 << level))
}

/// Output of [`hierarchical_refine`]: one var per stage, coarsest first.
pub struct Hierarchy {
    pub levels: Vec<(usize, Var)>,
}

/// Refines a level-`k` coarse disparity up to full resolution.
///
/// `color` is the normalized full-resolution image; `candidates` is `D'`,
/// used to bring disparities to a unit range before they enter a refiner.
#[allow(clippy::too_many_arguments)]
pub fn hierarchical_refine<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    coarse: Var,
    k: usize,
    color: &Tensor<T>,
    refiners: &[RefinerParams],
    mode: RefineMode,
    candidates: usize,
    mut on_stage: impl FnMut(usize),
) -> Result<Hierarchy> {
    if refiners.len() != mode.stages(k) {
        return Err(Error::invalid(format!(
            "{mode} refinement with K={k} needs {} refiners, got {}",
            mode.stages(k),
            refiners.len()
        )));
    }
    let (h, w) = (color.shape()[0], color.shape()[1]);
    let targets: Vec<usize> = match mode {
        RefineMode::Multi => (0..k).rev().collect(),
        RefineMode::Single => vec![0],
    };
    let mut levels = vec![(k, coarse)];
    let mut current = coarse;
    for (refiner, &level) in refiners.iter().zip(&targets) {
        let (lh, lw) = level_extent(h, w, level);
        let up = upsample_var(tape, current, lh, lw)?;
        let guide = crate::kernels::resize_forward(color.data(), (h, w, color.channels()), (lh, lw));
        let guide = tape.constant(Tensor::new(&[lh, lw, color.channels()], guide)?);
        let unit = ((1usize << (k - level)) * candidates) as f64;
        current = refiner.refine(tape, store, up, guide, unit)?;
        levels.push((level, current));
        on_stage(level);
    }
    Ok(Hierarchy { levels })
}
