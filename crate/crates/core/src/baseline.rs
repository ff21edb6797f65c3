//! Classical window matcher: SAD aggregation over a square window,
//! winner-takes-all, and parabola fitting for subpixel disparity.

use crate::cost_volume::DisparityMap;
use crate::data::{grayscale, StereoSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cost assigned when a window has no valid overlap: the largest possible
/// mean absolute difference of 8-bit intensities.
pub const NO_OVERLAP_COST: f32 = 255.0;

/// Denominators at or below this are treated as a flat curve.
const FLAT_CURVATURE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchConfig {
    /// Odd window side length.
    pub window: usize,
    pub max_disp: usize,
}

impl MatchConfig {
    pub fn new(max_disp: usize) -> Self {
        Self { window: 9, max_disp }
    }

    fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 {
            return Err(Error::invalid(format!("window {} must be odd", self.window)));
        }
        if self.max_disp == 0 {
            return Err(Error::invalid("max_disp must be at least 1"));
        }
        Ok(())
    }
}

/// Summed-area table with one row/column of zero padding.
struct Integral {
    w: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(h: usize, w: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let mut sums = vec![0.0; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += value(y, x);
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, sums }
    }

    /// Sum over `[y0, y1) × [x0, x1)`.
    fn rect(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> f64 {
        let s = |y: usize, x: usize| self.sums[y * (self.w + 1) + x];
        s(y1, x1) - s(y0, x1) - s(y1, x0) + s(y0, x0)
    }
}

/// Window SAD for every candidate in `0..=max_disp` and the per-pixel
/// winner (ties go to the smaller disparity).
///
/// Returns the integer disparity map and the `H×W×(max_disp+1)` cost curves.
/// Window pixels whose match leaves the right image are skipped and the
/// sum is divided by the number of pixels that remain.
pub fn wta_match(left: &Tensor<f32>, right: &Tensor<f32>, cfg: &MatchConfig) -> Result<(DisparityMap, Tensor<f32>)> {
    cfg.validate()?;
    if left.rank() != 2 || left.shape() != right.shape() {
        return Err(Error::shape(format!(
            "wta_match expects two equal H×W images, got {:?} and {:?}",
            left.shape(),
            right.shape()
        )));
    }
    let (h, w) = (left.shape()[0], left.shape()[1]);
    if cfg.window > h || cfg.window > w {
        return Err(Error::invalid(format!(
            "window {} larger than {h}×{w} image",
            cfg.window
        )));
    }
    let r = cfg.window / 2;
    let nd = cfg.max_disp + 1;
    let (l, rt) = (left.data(), right.data());
    let mut costs = vec![0.0f32; h * w * nd];
    for d in 0..nd {
        let valid = |x: usize| x >= d;
        let diff = Integral::new(h, w, |y, x| {
            if valid(x) {
                (l[y * w + x] as f64 - rt[y * w + x - d] as f64).abs()
            } else {
                0.0
            }
        });
        let count = Integral::new(h, w, |_, x| if valid(x) { 1.0 } else { 0.0 });
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                let n = count.rect(y0, y1, x0, x1);
                costs[(y * w + x) * nd + d] = if n > 0.0 {
                    (diff.rect(y0, y1, x0, x1) / n) as f32
                } else {
                    NO_OVERLAP_COST
                };
            }
        }
    }
    let disp = costs
        .chunks_exact(nd)
        .map(|c| {
            let mut best = 0;
            for (j, &v) in c.iter().enumerate() {
                if v < c[best] {
                    best = j;
                }
            }
            best as f32
        })
        .collect();
    Ok((
        DisparityMap::new(Tensor::new(&[h, w], disp)?, 0)?,
        Tensor::new(&[h, w, nd], costs)?,
    ))
}

/// Vertex offset of the parabola through `(−1, before)`, `(0, at)`,
/// `(1, after)`, clamped to `[−0.5, 0.5]`. Flat or concave curves give 0.
pub fn parabola_offset(before: f64, at: f64, after: f64) -> f64 {
    let denom = before - 2.0 * at + after;
    if denom <= FLAT_CURVATURE || !denom.is_finite() {
        return 0.0;
    }
    ((before - after) / (2.0 * denom)).clamp(-0.5, 0.5)
}

/// Subpixel disparity from a cost curve and its integer minimum `d`.
/// Minima without both neighbours are returned unchanged.
pub fn parabola_refine(curve: &[f32], d: usize) -> f64 {
    if d == 0 || d + 1 >= curve.len() {
        return d as f64;
    }
    d as f64 + parabola_offset(curve[d - 1] as f64, curve[d] as f64, curve[d + 1] as f64)
}

/// Grayscale SAD + WTA + parabola refinement.
///
/// A zero window cost is an exact photometric match at an integer
/// disparity; such pixels keep the integer value, since SAD cannot go
/// below zero and the parabola vertex would.
pub fn classical_pipeline(sample: &StereoSample, cfg: &MatchConfig) -> Result<DisparityMap> {
    let l = grayscale(&sample.left)?;
    let r = grayscale(&sample.right)?;
    let (disp, costs) = wta_match(&l, &r, cfg)?;
    let nd = cfg.max_disp + 1;
    let values = disp
        .values
        .data()
        .iter()
        .zip(costs.data().chunks_exact(nd))
        .map(|(&d, curve)| {
            let d = d as usize;
            if curve[d] == 0.0 {
                d as f32
            } else {
                parabola_refine(curve, d) as f32
            }
        })
        .collect();
    DisparityMap::new(Tensor::new(disp.values.shape(), values)?, 0)
}
