//! PNG/PPM color images and color-mapped disparity visualization.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb, RgbImage};

use crate::cost_volume::DisparityMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads an 8-bit image (PNG or binary PPM) as `H×W×3` floats in `[0,255]`.
/// Gray images are replicated to three channels; alpha is dropped.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path)?;
    let rgb: RgbImage = match img {
        DynamicImage::ImageRgb8(i) => i,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageRgba8(_) | DynamicImage::ImageLumaA8(_) => img.to_rgb8(),
        other => {
            return Err(Error::UnsupportedImage(format!(
                "{}: {:?} is not 8-bit",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(f32::from).collect();
    Tensor::new(&[h as usize, w as usize, 3], data)
}

/// Writes an `H×W×3` image, rounding and clamping to 8 bits. The format
/// follows the extension (`.png`, `.ppm`).
pub fn write_image(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::shape(format!("write_image expects H×W×3, got {s:?}")));
    }
    let bytes = image
        .data()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf: RgbImage = ImageBuffer::from_raw(s[1] as u32, s[0] as u32, bytes)
        .ok_or_else(|| Error::shape("image buffer size"))?;
    buf.save(path.as_ref())?;
    Ok(())
}

/// Piecewise-linear color ramp over `[0, 1]` through evenly spaced stops.
#[derive(Clone, Debug)]
pub struct ColorRamp {
    stops: Vec<[u8; 3]>,
}

impl Default for ColorRamp {
    /// Nine samples of the viridis map, dark purple to yellow.
    fn default() -> Self {
        Self {
            stops: vec![
                [68, 1, 84],
                [71, 44, 122],
                [59, 81, 139],
                [44, 113, 142],
                [33, 144, 141],
                [39, 173, 129],
                [92, 200, 99],
                [170, 220, 50],
                [253, 231, 37],
            ],
        }
    }
}

impl ColorRamp {
    pub fn new(stops: Vec<[u8; 3]>) -> Result<Self> {
        if stops.len() < 2 {
            return Err(Error::invalid("a color ramp needs at least two stops"));
        }
        Ok(Self { stops })
    }

    pub fn first(&self) -> [u8; 3] {
        self.stops[0]
    }

    pub fn last(&self) -> [u8; 3] {
        *self.stops.last().unwrap()
    }

    /// Color at `t`, clamped to `[0, 1]`.
    pub fn at(&self, t: f32) -> [u8; 3] {
        let t = t.clamp(0.0, 1.0) * (self.stops.len() - 1) as f32;
        let i = (t.floor() as usize).min(self.stops.len() - 2);
        let f = t - i as f32;
        let (a, b) = (self.stops[i], self.stops[i + 1]);
        std::array::from_fn(|c| (a[c] as f32 + (b[c] as f32 - a[c] as f32) * f).round() as u8)
    }

    /// Colors a disparity map over `[0, max_disp]`; non-finite pixels are black.
    pub fn colorize(&self, map: &DisparityMap, max_disp: f32) -> RgbImage {
        let (h, w) = (map.height(), map.width());
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let v = map.at(y as usize, x as usize);
            if v.is_finite() {
                Rgb(self.at(v / max_disp))
            } else {
                Rgb([0, 0, 0])
            }
        })
    }
}

pub fn write_disparity_png(path: impl AsRef<Path>, map: &DisparityMap, ramp: &ColorRamp, max_disp: f32) -> Result<()> {
    if !(max_disp > 0.0) {
        return Err(Error::invalid("max_disp must be positive"));
    }
    ramp.colorize(map, max_disp).save(path.as_ref())?;
    Ok(())
}

/// KITTI-style 16-bit disparity PNG: `value/256` pixels, 0 marks no data.
pub fn read_disparity_png16(path: impl AsRef<Path>) -> Result<(DisparityMap, Vec<bool>)> {
    let path = path.as_ref();
    let img = image::open(path)?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::UnsupportedImage(format!(
            "{}: expected 16-bit grayscale disparity",
            path.display()
        )));
    };
    let (w, h) = buf.dimensions();
    let raw = buf.into_raw();
    let mask: Vec<bool> = raw.iter().map(|&v| v > 0).collect();
    let values = raw.iter().map(|&v| v as f32 / 256.0).collect();
    Ok((DisparityMap::new(Tensor::new(&[h as usize, w as usize], values)?, 0)?, mask))
}
