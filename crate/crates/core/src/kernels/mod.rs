//! Slice-level numeric kernels shared by the autograd ops and the plain
//! (non-recording) code paths.

pub mod conv;

use crate::tensor::Real;

/// Per-channel normalization statistics saved for the backward pass.
pub struct NormStats<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes `x` (rows × `channels`) with statistics over all rows.
pub fn batch_norm_forward<T: Real>(
    x: &[T],
    channels: usize,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (Vec<T>, NormStats<T>) {
    let rows = x.len() / channels;
    let mut mean = vec![0.0f64; channels];
    for row in x.chunks_exact(channels) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0f64; channels];
    for row in x.chunks_exact(channels) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.as_f64() - m;
            *s += d * d;
        }
    }
    let inv_std: Vec<T> = var
        .iter()
        .map(|s| T::lit(1.0 / (s / rows as f64 + eps).sqrt()))
        .collect();
    let mean: Vec<T> = mean.into_iter().map(T::lit).collect();

    let mut normalized = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(channels) {
        for c in 0..channels {
            let n = (row[c] - mean[c]) * inv_std[c];
            normalized.push(n);
            out.push(gamma[c] * n + beta[c]);
        }
    }
    (out, NormStats { normalized, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Real>(
    dy: &[T],
    channels: usize,
    gamma: &[T],
    stats: &NormStats<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = dy.len() / channels;
    let mut dgamma = vec![0.0f64; channels];
    let mut dbeta = vec![0.0f64; channels];
    for (g, n) in dy.chunks_exact(channels).zip(stats.normalized.chunks_exact(channels)) {
        for c in 0..channels {
            dbeta[c] += g[c].as_f64();
            dgamma[c] += (g[c] * n[c]).as_f64();
        }
    }
    let inv_rows = 1.0 / rows as f64;
    let scale: Vec<T> = (0..channels)
        .map(|c| gamma[c] * stats.inv_std[c])
        .collect();
    let mean_dy: Vec<T> = dbeta.iter().map(|s| T::lit(s * inv_rows)).collect();
    let mean_dyn: Vec<T> = dgamma.iter().map(|s| T::lit(s * inv_rows)).collect();
    let mut dx = Vec::with_capacity(dy.len());
    for (g, n) in dy.chunks_exact(channels).zip(stats.normalized.chunks_exact(channels)) {
        for c in 0..channels {
            dx.push(scale[c] * (g[c] - mean_dy[c] - n[c] * mean_dyn[c]));
        }
    }
    (
        dx,
        dgamma.into_iter().map(T::lit).collect(),
        dbeta.into_iter().map(T::lit).collect(),
    )
}

/// Two-tap linear interpolation weights along one axis.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

/// Destination index `d` reads source coordinate `scale·d + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisMap {
    pub scale: f64,
    pub offset: f64,
}

impl AxisMap {
    /// Pixel centers aligned: `s = (d + 0.5)·src/dst − 0.5`.
    pub fn centered(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        Self {
            scale,
            offset: 0.5 * scale - 0.5,
        }
    }
}

/// Source taps for `dst` samples, clamped to the `src` extent.
fn taps<T: Real>(src: usize, dst: usize, map: AxisMap) -> Vec<Tap<T>> {
    (0..dst)
        .map(|d| {
            let s = (d as f64 * map.scale + map.offset).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: T::lit(s - lo as f64),
            }
        })
        .collect()
}

/// Bilinear resize of an `h×w×c` image with centered pixels.
pub fn resize_forward<T: Real>(x: &[T], (h, w, c): (usize, usize, usize), (oh, ow): (usize, usize)) -> Vec<T> {
    if (h, w) == (oh, ow) {
        return x.to_vec();
    }
    resample_forward(x, (h, w, c), (oh, ow), [AxisMap::centered(h, oh), AxisMap::centered(w, ow)])
}

pub fn resize_backward<T: Real>(dy: &[T], (h, w, c): (usize, usize, usize), (oh, ow): (usize, usize)) -> Vec<T> {
    if (h, w) == (oh, ow) {
        return dy.to_vec();
    }
    resample_backward(dy, (h, w, c), (oh, ow), [AxisMap::centered(h, oh), AxisMap::centered(w, ow)])
}

/// Bilinear resampling of an `h×w×c` image along `[rows, cols]` maps.
pub fn resample_forward<T: Real>(
    x: &[T],
    (h, w, c): (usize, usize, usize),
    (oh, ow): (usize, usize),
    [my, mx]: [AxisMap; 2],
) -> Vec<T> {
    let ty = taps::<T>(h, oh, my);
    let tx = taps::<T>(w, ow, mx);
    let mut out = Vec::with_capacity(oh * ow * c);
    for r in &ty {
        for q in &tx {
            let one = T::one();
            let w00 = (one - r.frac) * (one - q.frac);
            let w01 = (one - r.frac) * q.frac;
            let w10 = r.frac * (one - q.frac);
            let w11 = r.frac * q.frac;
            let p00 = (r.lo * w + q.lo) * c;
            let p01 = (r.lo * w + q.hi) * c;
            let p10 = (r.hi * w + q.lo) * c;
            let p11 = (r.hi * w + q.hi) * c;
            for k in 0..c {
                out.push(
                    w00 * x[p00 + k] + w01 * x[p01 + k] + w10 * x[p10 + k] + w11 * x[p11 + k],
                );
            }
        }
    }
    out
}

pub fn resample_backward<T: Real>(
    dy: &[T],
    (h, w, c): (usize, usize, usize),
    (oh, ow): (usize, usize),
    [my, mx]: [AxisMap; 2],
) -> Vec<T> {
    let ty = taps::<T>(h, oh, my);
    let tx = taps::<T>(w, ow, mx);
    let mut dx = vec![T::zero(); h * w * c];
    let mut i = 0;
    for r in &ty {
        for q in &tx {
            let one = T::one();
            let weights = [
                ((one - r.frac) * (one - q.frac), (r.lo * w + q.lo) * c),
                ((one - r.frac) * q.frac, (r.lo * w + q.hi) * c),
                (r.frac * (one - q.frac), (r.hi * w + q.lo) * c),
                (r.frac * q.frac, (r.hi * w + q.hi) * c),
            ];
            for k in 0..c {
                let g = dy[i + k];
                for &(wt, base) in &weights {
                    dx[base + k] += wt * g;
                }
            }
            i += c;
        }
    }
    dx
}

/// `raw[y,x,d,:] = left[y,x,:] − right[y,max(x−d,0),:]`.
pub fn cost_volume_forward<T: Real>(
    left: &[T],
    right: &[T],
    (h, w, c): (usize, usize, usize),
    candidates: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w * candidates * c);
    for y in 0..h {
        for x in 0..w {
            let l = &left[(y * w + x) * c..(y * w + x + 1) * c];
            for d in 0..candidates {
                let xr = x.saturating_sub(d);
                let r = &right[(y * w + xr) * c..(y * w + xr + 1) * c];
                out.extend(l.iter().zip(r).map(|(&a, &b)| a - b));
            }
        }
    }
    out
}

pub fn cost_volume_backward<T: Real>(
    draw: &[T],
    (h, w, c): (usize, usize, usize),
    candidates: usize,
) -> (Vec<T>, Vec<T>) {
    let mut dl = vec![T::zero(); h * w * c];
    let mut dr = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            for d in 0..candidates {
                let xr = x.saturating_sub(d);
                let g = &draw[((y * w + x) * candidates + d) * c..][..c];
                for k in 0..c {
                    dl[(y * w + x) * c + k] += g[k];
                    dr[(y * w + xr) * c + k] -= g[k];
                }
            }
        }
    }
    (dl, dr)
}

/// Softmax of `−costs` along each row of length `d`, written into `probs`.
pub fn neg_softmax_rows<T: Real>(costs: &[T], d: usize, probs: &mut [T]) {
    for (row, p) in costs.chunks_exact(d).zip(probs.chunks_exact_mut(d)) {
        let min = row.iter().copied().fold(T::infinity(), T::min);
        let mut total = T::zero();
        for (pi, &ci) in p.iter_mut().zip(row) {
            *pi = (min - ci).exp();
            total += *pi;
        }
        p.iter_mut().for_each(|v| *v = *v / total);
    }
}

/// Expected candidate index under `softmax(−costs)` for each row of length `d`.
pub fn soft_argmin_forward<T: Real>(costs: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let mut probs = vec![T::zero(); costs.len()];
    neg_softmax_rows(costs, d, &mut probs);
    let out = probs
        .chunks_exact(d)
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(j, &pj)| T::lit(j as f64) * pj)
                .sum()
        })
        .collect();
    (out, probs)
}

pub fn soft_argmin_backward<T: Real>(dy: &[T], probs: &[T], out: &[T], d: usize) -> Vec<T> {
    let mut dc = Vec::with_capacity(probs.len());
    for ((p, &g), &mean) in probs.chunks_exact(d).zip(dy).zip(out) {
        for (j, &pj) in p.iter().enumerate() {
            dc.push(-g * pj * (T::lit(j as f64) - mean));
        }
    }
    dc
}

/// Softmax along the middle axis of an `outer×len×inner` view.
pub fn softmax_forward<T: Real>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| x[at(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                y[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                y[at(j)] = y[at(j)] / total;
            }
        }
    }
    y
}

pub fn softmax_backward<T: Real>(
    dy: &[T],
    y: &[T],
    outer: usize,
    len: usize,
    inner: usize,
) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let dot: T = (0..len).map(|j| dy[at(j)] * y[at(j)]).sum();
            for j in 0..len {
                dx[at(j)] = y[at(j)] * (dy[at(j)] - dot);
            }
        }
    }
    dx
}
