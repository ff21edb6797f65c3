//! Directory-backed datasets.
//!
//! Three layouts are recognised:
//!
//! * **fixture**: `left/NAME.{png,ppm}`, `right/NAME.{png,ppm}`,
//!   `disp_left/NAME.pfm` and optionally `disp_right/NAME.pfm`.
//! * **sceneflow**: `frames_cleanpass/**/left/NAME.png` with matching
//!   `right/` images and `disparity/**/{left,right}/NAME.pfm`.
//! * **kitti**: `image_2/NAME.png`, `image_3/NAME.png` and 16-bit
//!   `disp_occ_0/NAME.png` (value/256, zero = no data).
//!
//! Non-finite or negative ground truth is treated as missing.

use std::path::{Path, PathBuf};

use crate::cost_volume::DisparityMap;
use crate::data::image_io::{read_disparity_png16, read_image};
use crate::data::pfm::read_pfm_gray;
use crate::data::StereoSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Fixture,
    SceneFlow,
    Kitti,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixture" => Ok(Layout::Fixture),
            "sceneflow" => Ok(Layout::SceneFlow),
            "kitti" => Ok(Layout::Kitti),
            other => Err(Error::Config(format!("unknown dataset layout {other:?}"))),
        }
    }
}

/// Paths for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleFiles {
    pub left: PathBuf,
    pub right: PathBuf,
    pub disp_left: PathBuf,
    pub disp_right: Option<PathBuf>,
}

fn sorted_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn sibling(path: &Path, from: &str, to: &str) -> PathBuf {
    PathBuf::from(
        path.to_string_lossy()
            .replacen(&format!("/{from}/"), &format!("/{to}/"), 1),
    )
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

/// Lists the samples of a dataset directory in a stable order.
pub fn discover(root: &Path, layout: Layout) -> Result<Vec<SampleFiles>> {
    let mut out = Vec::new();
    match layout {
        Layout::Fixture => {
            for left in sorted_files(&root.join("left"), &["png", "ppm"])? {
                let name = left.file_name().unwrap();
                let stem = left.file_stem().unwrap().to_string_lossy().into_owned();
                let disp_right = root.join("disp_right").join(format!("{stem}.pfm"));
                out.push(SampleFiles {
                    right: root.join("right").join(name),
                    disp_left: root.join("disp_left").join(format!("{stem}.pfm")),
                    disp_right: disp_right.exists().then_some(disp_right),
                    left,
                });
            }
        }
        Layout::SceneFlow => {
            let mut stack = vec![root.join("frames_cleanpass")];
            while let Some(dir) = stack.pop() {
                let rd = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
                for entry in rd.filter_map(|e| e.ok()) {
                    let p = entry.path();
                    if p.is_dir() {
                        if p.file_name().is_some_and(|n| n == "left") {
                            for left in sorted_files(&p, &["png"])? {
                                let disp = sibling(&left, "frames_cleanpass", "disparity");
                                let disp_right = with_ext(&sibling(&disp, "left", "right"), "pfm");
                                out.push(SampleFiles {
                                    right: sibling(&left, "left", "right"),
                                    disp_left: with_ext(&disp, "pfm"),
                                    disp_right: disp_right.exists().then_some(disp_right),
                                    left,
                                });
                            }
                        } else if p.file_name().is_none_or(|n| n != "right") {
                            stack.push(p);
                        }
                    }
                }
            }
            out.sort_by(|a, b| a.left.cmp(&b.left));
        }
        Layout::Kitti => {
            for left in sorted_files(&root.join("image_2"), &["png"])? {
                let name = left.file_name().unwrap();
                out.push(SampleFiles {
                    right: root.join("image_3").join(name),
                    disp_left: root.join("disp_occ_0").join(name),
                    disp_right: None,
                    left,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

fn pfm_disparity(path: &Path) -> Result<(DisparityMap, Vec<bool>)> {
    let t = read_pfm_gray(path)?;
    let mask = t.data().iter().map(|v| v.is_finite() && *v >= 0.0).collect();
    Ok((DisparityMap::new(t, 0)?, mask))
}

/// Loads one sample described by `files`.
pub fn load_sample(files: &SampleFiles, layout: Layout) -> Result<StereoSample> {
    let left = read_image(&files.left)?;
    let right = read_image(&files.right)?;
    let (gt, mask) = match layout {
        Layout::Kitti => read_disparity_png16(&files.disp_left)?,
        _ => pfm_disparity(&files.disp_left)?,
    };
    let mut sample = StereoSample::new(left, right, gt, mask)?;
    if let Some(p) = &files.disp_right {
        let (gt_r, mask_r) = pfm_disparity(p)?;
        if gt_r.values.shape() != sample.gt_left.values.shape() {
            return Err(Error::shape("right disparity size differs from left"));
        }
        sample.gt_right = Some((gt_r, mask_r));
    }
    Ok(sample)
}

pub fn load_dataset(root: &Path, layout: Layout) -> Result<Vec<StereoSample>> {
    discover(root, layout)?
        .iter()
        .map(|f| load_sample(f, layout))
        .collect()
}

/// Writes samples in the fixture layout (`NAME = 0000, 0001, …`).
pub fn write_fixture(root: &Path, samples: &[StereoSample]) -> Result<()> {
    use crate::data::{pfm::write_pfm, write_image};
    for sub in ["left", "right", "disp_left", "disp_right"] {
        let d = root.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:04}");
        write_image(root.join("left").join(format!("{name}.png")), &s.left)?;
        write_image(root.join("right").join(format!("{name}.png")), &s.right)?;
        let masked = |d: &DisparityMap, m: &[bool]| -> Result<Tensor<f32>> {
            let v = d
                .values
                .data()
                .iter()
                .zip(m)
                .map(|(&v, &ok)| if ok { v } else { f32::INFINITY })
                .collect();
            Tensor::new(d.values.shape(), v)
        };
        write_pfm(root.join("disp_left").join(format!("{name}.pfm")), &masked(&s.gt_left, &s.valid_mask)?)?;
        if let Some((d, m)) = &s.gt_right {
            write_pfm(root.join("disp_right").join(format!("{name}.pfm")), &masked(d, m)?)?;
        }
    }
    Ok(())
}
