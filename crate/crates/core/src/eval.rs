//! Disparity metrics, the triangulation error model, stage timing and the
//! subpixel-precision comparison.

use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::autograd::Tape;
use crate::baseline::{classical_pipeline, MatchConfig};
use crate::cost_volume::DisparityMap;
use crate::data::{normalize, StereoSample};
use crate::error::{Error, Result};
use crate::model::{Stage, StereoNet};
use crate::refinement::resize_disparity;
use crate::training::masked_epe;

/// Bad-pixel thresholds reported by [`EvalReport`], in pixels.
pub const BAD_THRESHOLDS: [f64; 3] = [1.0, 2.0, 3.0];

fn check_pair(pred: &DisparityMap, gt: &DisparityMap, mask: &[bool]) -> Result<()> {
    if pred.values.shape() != gt.values.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.values.shape(),
            gt.values.shape()
        )));
    }
    if mask.len() != gt.values.len() {
        return Err(Error::shape("mask size differs from ground truth"));
    }
    Ok(())
}

fn masked<'a>(pred: &'a DisparityMap, gt: &'a DisparityMap, mask: &'a [bool]) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.values
        .data()
        .iter()
        .zip(gt.values.data())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &g), _)| (p as f64, g as f64))
}

/// Mean `|pred − gt|` over the mask.
pub fn epe(pred: &DisparityMap, gt: &DisparityMap, mask: &[bool]) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    masked_epe(pred.values.data(), gt.values.data(), mask)
}

/// Percentage of masked pixels with `|pred − gt| > threshold`.
pub fn bad_pixel_ratio(pred: &DisparityMap, gt: &DisparityMap, mask: &[bool], threshold: f64) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("threshold must be positive, got {threshold}")));
    }
    let (bad, n) = masked(pred, gt, mask).fold((0usize, 0usize), |(b, n), (p, g)| {
        (b + usize::from((p - g).abs() > threshold), n + 1)
    });
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(100.0 * bad as f64 / n as f64)
}

/// Mean `|pred − gt|` over masked pixels whose rounded prediction equals the
/// rounded ground truth (halves round away from zero).
///
/// Fails with [`Error::NoCorrectMatches`] when no pixel qualifies.
pub fn subpixel_precision(pred: &DisparityMap, gt: &DisparityMap, mask: &[bool]) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    let (sum, n) = masked(pred, gt, mask)
        .filter(|(p, g)| p.round() == g.round())
        .fold((0.0, 0usize), |(s, n), (p, g)| (s + (p - g).abs(), n + 1));
    if n == 0 {
        return Err(Error::NoCorrectMatches);
    }
    Ok(sum / n as f64)
}

/// Depth error `δ·Z²/(b·f)` in the units of `z` and `baseline`.
pub fn depth_error_bound(delta_px: f64, z: f64, baseline: f64, focal_px: f64) -> Result<f64> {
    for (name, v) in [("delta", delta_px), ("Z", z), ("baseline", baseline), ("focal", focal_px)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(delta_px * z * z / (baseline * focal_px))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub epe_all: f64,
    pub epe_nocc: f64,
    /// `(threshold px, percent)` for each of [`BAD_THRESHOLDS`].
    pub bad_ratio: Vec<(f64, f64)>,
    /// `None` when no pixel is correctly matched at integer level.
    pub subpixel_precision: Option<f64>,
    pub n_pixels: usize,
}

impl EvalReport {
    /// `nocc` defaults to `mask` when the source has no occlusion map.
    pub fn compute(pred: &DisparityMap, gt: &DisparityMap, mask: &[bool], nocc: Option<&[bool]>) -> Result<Self> {
        let nocc = nocc.unwrap_or(mask);
        let subpixel_precision = match subpixel_precision(pred, gt, mask) {
            Ok(v) => Some(v),
            Err(Error::NoCorrectMatches) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            epe_all: epe(pred, gt, mask)?,
            epe_nocc: epe(pred, gt, nocc)?,
            bad_ratio: BAD_THRESHOLDS
                .iter()
                .map(|&t| Ok((t, bad_pixel_ratio(pred, gt, mask, t)?)))
                .collect::<Result<_>>()?,
            subpixel_precision,
            n_pixels: mask.iter().filter(|&&m| m).count(),
        })
    }

    /// Header `epe_all,epe_nocc,bad_1px,bad_2px,bad_3px,subpixel_precision,n_pixels`;
    /// an undefined precision is written as `nan`.
    pub fn to_csv(&self) -> String {
        let mut head = vec!["epe_all".to_string(), "epe_nocc".into()];
        let mut row = vec![format!("{:.6}", self.epe_all), format!("{:.6}", self.epe_nocc)];
        for (t, r) in &self.bad_ratio {
            head.push(format!("bad_{t}px"));
            row.push(format!("{r:.4}"));
        }
        head.extend(["subpixel_precision".into(), "n_pixels".into()]);
        row.push(self.subpixel_precision.map_or("nan".into(), |v| format!("{v:.6}")));
        row.push(self.n_pixels.to_string());
        format!("{}\n{}\n", head.join(","), row.join(","))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Median wall time per pipeline stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTimings {
    pub stages: Vec<(Stage, Duration)>,
    /// Median end-to-end time.
    pub total: Duration,
    pub repetitions: usize,
    pub threads: usize,
}

impl StageTimings {
    pub fn stage_sum(&self) -> Duration {
        self.stages.iter().map(|(_, d)| *d).sum()
    }

    /// `(stage, ms, percent)` rows; percentages are shares of [`Self::stage_sum`].
    pub fn rows(&self) -> Vec<(Stage, f64, f64)> {
        let total = self.stage_sum().as_secs_f64().max(f64::MIN_POSITIVE);
        self.stages
            .iter()
            .map(|&(s, d)| (s, d.as_secs_f64() * 1e3, 100.0 * d.as_secs_f64() / total))
            .collect()
    }

    /// Header `stage,median_ms,percent`, one row per stage and a final
    /// `total` row holding the end-to-end median against the stage sum.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,median_ms,percent\n");
        for (s, ms, pct) in self.rows() {
            out.push_str(&format!("{s},{ms:.4},{pct:.2}\n"));
        }
        let sum = self.stage_sum().as_secs_f64().max(f64::MIN_POSITIVE);
        let total = self.total.as_secs_f64();
        out.push_str(&format!("total,{:.4},{:.2}\n", total * 1e3, 100.0 * total / sum));
        out
    }
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Times every stage of an inference pass `repetitions` times after one
/// warm-up pass and reports medians.
pub fn runtime_breakdown(model: &StereoNet<f32>, left: &crate::Tensor<f32>, right: &crate::Tensor<f32>, repetitions: usize) -> Result<StageTimings> {
    if repetitions < 5 {
        return Err(Error::invalid(format!("need at least 5 repetitions, got {repetitions}")));
    }
    let (l, r) = (normalize(left), normalize(right));
    let stages = model.stages();
    let mut samples: Vec<Vec<Duration>> = vec![Vec::with_capacity(repetitions); stages.len()];
    let mut totals = Vec::with_capacity(repetitions);
    for rep in 0..=repetitions {
        let mut tape = Tape::new();
        let mut marks: Vec<(Stage, Instant)> = Vec::with_capacity(stages.len());
        let start = Instant::now();
        model.forward_marked(&mut tape, &l, &r, &mut |s| marks.push((s, Instant::now())))?;
        let end = Instant::now();
        if rep == 0 {
            continue;
        }
        if marks.iter().map(|m| m.0).ne(stages.iter().copied()) {
            return Err(Error::invalid("stage marks do not match the model's stage list"));
        }
        let mut prev = start;
        for (slot, (_, t)) in samples.iter_mut().zip(&marks) {
            slot.push(*t - prev);
            prev = *t;
        }
        totals.push(end - start);
    }
    Ok(StageTimings {
        stages: stages.into_iter().zip(samples.into_iter().map(median)).collect(),
        total: median(totals),
        repetitions,
        threads: rayon::current_num_threads(),
    })
}

/// One row of the subpixel-precision comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionRow {
    pub config: String,
    /// Per-pair precision; `None` where no pixel was correctly matched.
    pub per_pair: Vec<Option<f64>>,
}

impl PrecisionRow {
    /// Mean over pairs where precision is defined.
    pub fn mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.per_pair.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn precision_or_none(pred: &DisparityMap, s: &StereoSample) -> Result<Option<f64>> {
    match subpixel_precision(pred, &s.gt_left, &s.valid_mask) {
        Ok(v) => Ok(Some(v)),
        Err(Error::NoCorrectMatches) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Subpixel precision of the classical baseline and of each named model,
/// both refined and as the value-scaled coarse output, on `test`.
pub fn precision_experiment(models: &[(&str, &StereoNet<f32>)], baseline: &MatchConfig, test: &[StereoSample]) -> Result<Vec<PrecisionRow>> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = vec![PrecisionRow {
        config: "sad_parabola".into(),
        per_pair: test
            .iter()
            .map(|s| precision_or_none(&classical_pipeline(s, baseline)?, s))
            .collect::<Result<_>>()?,
    }];
    for (name, model) in models {
        let mut refined = Vec::new();
        let mut coarse = Vec::new();
        for s in test {
            let levels = model.predict(&s.left, &s.right)?;
            let full = levels.last().unwrap();
            let c = resize_disparity(&levels[0], s.height(), s.width(), 0)?;
            refined.push(precision_or_none(full, s)?);
            coarse.push(precision_or_none(&c, s)?);
        }
        rows.push(PrecisionRow {
            config: format!("{name}_refined"),
            per_pair: refined,
        });
        rows.push(PrecisionRow {
            config: format!("{name}_coarse"),
            per_pair: coarse,
        });
    }
    Ok(rows)
}

/// Header `config,mean_precision,pair_0,…`; undefined entries are `nan`.
pub fn write_precision_csv(path: impl AsRef<Path>, rows: &[PrecisionRow]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let pairs = rows.first().map_or(0, |r| r.per_pair.len());
    let cols: Vec<String> = (0..pairs).map(|i| format!("pair_{i}")).collect();
    writeln!(f, "config,mean_precision,{}", cols.join(",")).map_err(io)?;
    let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:.6}"));
    for r in rows {
        let vals: Vec<String> = r.per_pair.iter().map(|&v| fmt(v)).collect();
        writeln!(f, "{},{},{}", r.config, fmt(r.mean()), vals.join(",")).map_err(io)?;
    }
    f.flush().map_err(io)
}
