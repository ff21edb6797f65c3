//! Synthetic rectified pairs with exact, continuous ground truth.
//!
//! Every surface carries its own band-limited noise texture, indexed by
//! left-image coordinates. The left image samples textures at integer
//! columns; the right image samples them at `x_r + d_R(x_r)` with linear
//! interpolation, where `d_R` is the disparity of the nearest surface
//! projecting to `x_r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cost_volume::DisparityMap;
use crate::data::StereoSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fronto-parallel rectangle `[x0, x1) × [y0, y1)` at constant disparity.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub disparity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DisparityField {
    Constant(f64),
    /// `d(x, y) = base + dx·x + dy·y` in left-image coordinates.
    Ramp { base: f64, dx: f64, dy: f64 },
    /// Background plane with rectangles in front of it.
    Blocks { background: f64, blocks: Vec<Block> },
}

impl DisparityField {
    /// Left-view disparity and the index of the visible surface
    /// (0 = background or plane, `i+1` = block `i`).
    fn left(&self, x: f64, y: usize) -> (f64, usize) {
        match self {
            DisparityField::Constant(d) => (*d, 0),
            DisparityField::Ramp { base, dx, dy } => (base + dx * x + dy * y as f64, 0),
            DisparityField::Blocks { background, blocks } => {
                let mut best = (*background, 0);
                for (i, b) in blocks.iter().enumerate() {
                    let inside = x >= b.x0 as f64 && x < b.x1 as f64 && y >= b.y0 && y < b.y1;
                    if inside && b.disparity > best.0 {
                        best = (b.disparity, i + 1);
                    }
                }
                best
            }
        }
    }

    /// Right-view disparity and visible surface at right column `xr`.
    fn right(&self, xr: f64, y: usize) -> (f64, usize) {
        match self {
            DisparityField::Constant(d) => (*d, 0),
            DisparityField::Ramp { base, dx, dy } => {
                let x = (xr + base + dy * y as f64) / (1.0 - dx);
                (base + dx * x + dy * y as f64, 0)
            }
            DisparityField::Blocks { background, blocks } => {
                let mut best = (*background, 0);
                for (i, b) in blocks.iter().enumerate() {
                    let x = xr + b.disparity;
                    let inside = x >= b.x0 as f64 && x < b.x1 as f64 && y >= b.y0 && y < b.y1;
                    if inside && b.disparity > best.0 {
                        best = (b.disparity, i + 1);
                    }
                }
                best
            }
        }
    }

    fn surfaces(&self) -> usize {
        match self {
            DisparityField::Blocks { blocks, .. } => blocks.len() + 1,
            _ => 1,
        }
    }

    /// Disparity range over a `w×h` image.
    pub fn range(&self, w: usize, h: usize) -> (f64, f64) {
        match self {
            DisparityField::Constant(d) => (*d, *d),
            DisparityField::Ramp { base, dx, dy } => {
                let (xm, ym) = ((w - 1) as f64, (h - 1) as f64);
                let corners = [0.0, dx * xm, dy * ym, dx * xm + dy * ym].map(|c| base + c);
                corners
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)))
            }
            DisparityField::Blocks { background, blocks } => blocks
                .iter()
                .fold((*background, *background), |(lo, hi), b| (lo.min(b.disparity), hi.max(b.disparity))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub field: DisparityField,
    pub seed: u64,
    /// Standard deviation of the blur that band-limits the texture.
    pub blur_sigma: f64,
    /// Standard deviation of independent per-view sensor noise (0..255 units).
    pub noise_sigma: f64,
}

impl SynthSpec {
    pub fn new(width: usize, height: usize, field: DisparityField, seed: u64) -> Self {
        Self {
            width,
            height,
            field,
            seed,
            blur_sigma: 1.0,
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 4 || self.height < 1 {
            return Err(Error::invalid(format!(
                "synthetic image {}×{} too small",
                self.width, self.height
            )));
        }
        let (lo, hi) = self.field.range(self.width, self.height);
        if lo < 0.0 {
            return Err(Error::invalid(format!("negative disparity {lo}")));
        }
        if hi >= self.width as f64 / 4.0 {
            return Err(Error::invalid(format!(
                "disparity {hi} must stay below width/4 = {}",
                self.width as f64 / 4.0
            )));
        }
        if let DisparityField::Ramp { dx, .. } = self.field {
            if dx >= 1.0 {
                return Err(Error::invalid("ramp slope along x must be < 1"));
            }
        }
        Ok(())
    }
}

/// Gaussian-blurred uniform noise, rescaled to roughly fill `[0, 255]`.
fn texture<R: Rng>(rng: &mut R, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
    if sigma > 0.0 {
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let blur = |src: &[f64], stride: usize, len: usize, count: usize, step: usize| {
            let mut out = vec![0.0; src.len()];
            for line in 0..count {
                for i in 0..len {
                    let mut acc = 0.0;
                    for (k, kv) in kernel.iter().enumerate() {
                        let j = (i as isize + k as isize - radius).clamp(0, len as isize - 1) as usize;
                        acc += kv * src[line * step + j * stride];
                    }
                    out[line * step + i * stride] = acc / norm;
                }
            }
            out
        };
        t = blur(&t, 1, w, h, w);
        t = blur(&t, w, h, w, 1);
    }
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let var = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t.len() as f64;
    let gain = 45.0 / var.sqrt().max(1e-12);
    t.iter().map(|v| (127.5 + (v - mean) * gain).clamp(0.0, 255.0)).collect()
}

/// Linear interpolation along a texture row, clamped at the ends.
fn sample_row(row: &[f64], x: f64) -> f64 {
    let x = x.clamp(0.0, (row.len() - 1) as f64);
    let i = x.floor() as usize;
    let f = x - i as f64;
    if f == 0.0 {
        return row[i];
    }
    row[i] * (1.0 - f) + row[(i + 1).min(row.len() - 1)] * f
}

/// Renders a pair with exact left/right disparities.
///
/// Left pixels whose match falls outside the right image (`x − d < 0`) are
/// marked invalid; right pixels whose match falls past the left image's
/// right border are invalid in the right-view mask.
pub fn synth_pair(spec: &SynthSpec) -> Result<StereoSample> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (_, max_d) = spec.field.range(w, h);
    let tex_w = w + max_d.ceil() as usize + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // textures[surface][channel]
    let textures: Vec<Vec<Vec<f64>>> = (0..spec.field.surfaces())
        .map(|_| (0..3).map(|_| texture(&mut rng, h, tex_w, spec.blur_sigma)).collect())
        .collect();

    let mut left = Vec::with_capacity(h * w * 3);
    let mut right = Vec::with_capacity(h * w * 3);
    let mut gt_left = Vec::with_capacity(h * w);
    let mut gt_right = Vec::with_capacity(h * w);
    let mut mask_left = Vec::with_capacity(h * w);
    let mut mask_right = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (d, s) = spec.field.left(x as f64, y);
            for tex in &textures[s] {
                left.push(tex[y * tex_w + x]);
            }
            gt_left.push(d as f32);
            mask_left.push(x as f64 - d >= 0.0);

            let (dr, sr) = spec.field.right(x as f64, y);
            for tex in &textures[sr] {
                right.push(sample_row(&tex[y * tex_w..(y + 1) * tex_w], x as f64 + dr));
            }
            gt_right.push(dr as f32);
            mask_right.push(x as f64 + dr <= (w - 1) as f64);
        }
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in left.iter_mut().chain(right.iter_mut()) {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 255.0);
        }
    }

    let to_img = |v: Vec<f64>| Tensor::new(&[h, w, 3], v.into_iter().map(|x| x as f32).collect());
    let mut sample = StereoSample::new(
        to_img(left)?,
        to_img(right)?,
        DisparityMap::new(Tensor::new(&[h, w], gt_left)?, 0)?,
        mask_left,
    )?;
    sample.gt_right = Some((DisparityMap::new(Tensor::new(&[h, w], gt_right)?, 0)?, mask_right));
    Ok(sample)
}

/// Mix of constant and ramp fields with disparities in `[0, max_disp]`.
pub fn field_for_index(index: usize, w: usize, h: usize, max_disp: f64, rng: &mut impl Rng) -> DisparityField {
    if index % 2 == 0 {
        DisparityField::Constant(rng.random_range(0.0..max_disp))
    } else {
        let a: f64 = rng.random_range(0.0..max_disp);
        let b: f64 = rng.random_range(0.0..max_disp);
        let c: f64 = rng.random_range(0.0..max_disp);
        // values at the left edge, right edge and bottom-left corner
        let dx = (b - a) / (w - 1) as f64;
        let spread = (c - a) / (h - 1).max(1) as f64;
        let mut dy = spread;
        // keep the far corner inside the range
        let far = a + dx * (w - 1) as f64 + dy * (h - 1) as f64;
        if !(0.0..=max_disp).contains(&far) {
            dy = 0.0;
        }
        DisparityField::Ramp { base: a, dx, dy }
    }
}

/// `count` synthetic pairs alternating constant and ramp disparities.
pub fn synth_corpus(count: usize, w: usize, h: usize, max_disp: f64, noise_sigma: f64, seed: u64) -> Result<Vec<StereoSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let field = field_for_index(i, w, h, max_disp, &mut rng);
            let mut spec = SynthSpec::new(w, h, field, rng.random());
            spec.noise_sigma = noise_sigma;
            synth_pair(&spec)
        })
        .collect()
}
