//! Stereo samples, input normalization and dataset I/O.

pub mod dataset;
pub mod image_io;
pub mod pfm;
pub mod synth;

use crate::cost_volume::DisparityMap;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use dataset::{discover, load_dataset, load_sample, write_fixture, Layout, SampleFiles};
pub use image_io::{read_disparity_png16, read_image, write_disparity_png, write_image, ColorRamp};
pub use pfm::{read_pfm, read_pfm_gray, write_pfm, Pfm};
pub use synth::{field_for_index, synth_corpus, synth_pair, Block, DisparityField, SynthSpec};

/// A rectified pair with ground truth.
#[derive(Clone, Debug)]
pub struct StereoSample {
    /// `H×W×3` color in `[0, 255]`.
    pub left: Tensor<f32>,
    pub right: Tensor<f32>,
    /// Left-view disparity at full resolution.
    pub gt_left: DisparityMap,
    pub valid_mask: Vec<bool>,
    /// Right-view disparity and its validity, when the source provides it.
    pub gt_right: Option<(DisparityMap, Vec<bool>)>,
}

impl StereoSample {
    pub fn new(left: Tensor<f32>, right: Tensor<f32>, gt_left: DisparityMap, valid_mask: Vec<bool>) -> Result<Self> {
        if left.shape() != right.shape() {
            return Err(Error::shape(format!(
                "left {:?} and right {:?} differ",
                left.shape(),
                right.shape()
            )));
        }
        if left.rank() != 3 || left.shape()[..2] != gt_left.values.shape()[..] {
            return Err(Error::shape(format!(
                "images {:?} vs ground truth {:?}",
                left.shape(),
                gt_left.values.shape()
            )));
        }
        if valid_mask.len() != gt_left.values.len() {
            return Err(Error::shape("validity mask size differs from ground truth"));
        }
        Ok(Self {
            left,
            right,
            gt_left,
            valid_mask,
            gt_right: None,
        })
    }

    pub fn height(&self) -> usize {
        self.left.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.left.shape()[1]
    }

    /// The same scene seen through a horizontal mirror with the views
    /// swapped: the new left image is the flipped right image and the
    /// supervision is the flipped right-view disparity.
    pub fn mirrored(&self) -> Option<StereoSample> {
        let (gt, mask) = self.gt_right.as_ref()?;
        let (h, w) = (self.height(), self.width());
        let flipped_mask = (0..h * w).map(|i| mask[(i / w) * w + (w - 1 - i % w)]).collect();
        Some(StereoSample {
            left: self.right.flip_horizontal(),
            right: self.left.flip_horizontal(),
            gt_left: DisparityMap {
                values: gt.values.flip_horizontal(),
                level: 0,
            },
            valid_mask: flipped_mask,
            gt_right: None,
        })
    }
}

impl StereoSample {
    /// The pair upside down. Rows stay epipolar lines, so disparities are
    /// unchanged and only move with their pixels.
    pub fn flipped_vertical(&self) -> StereoSample {
        let w = self.width();
        let flip_mask = |m: &[bool]| m.chunks_exact(w).rev().flatten().copied().collect::<Vec<_>>();
        let flip_map = |d: &DisparityMap| DisparityMap {
            values: d.values.flip_vertical(),
            level: d.level,
        };
        StereoSample {
            left: self.left.flip_vertical(),
            right: self.right.flip_vertical(),
            gt_left: flip_map(&self.gt_left),
            valid_mask: flip_mask(&self.valid_mask),
            gt_right: self.gt_right.as_ref().map(|(d, m)| (flip_map(d), flip_mask(m))),
        }
    }
}

/// Maps `[0, 255]` intensities to `[-1, 1]` via `x/127.5 − 1`. Apply once;
/// the map is not idempotent.
pub fn normalize<T: Real>(image: &Tensor<T>) -> Tensor<T> {
    let s = T::lit(127.5);
    image.map(|v| v / s - T::one())
}

/// Inverse of [`normalize`].
pub fn denormalize<T: Real>(image: &Tensor<T>) -> Tensor<T> {
    let s = T::lit(127.5);
    image.map(|v| (v + T::one()) * s)
}

/// Luma `0.299R + 0.587G + 0.114B` of an `H×W×3` image, as `H×W`.
pub fn grayscale(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::shape(format!("grayscale expects H×W×3, got {s:?}")));
    }
    let data = image
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    Tensor::new(&s[..2], data)
}
