//! Convolution via im2col + GEMM.
//!
//! 2-D and 3-D convolutions share one implementation: a 2-D problem is a
//! 3-D one whose third spatial axis has extent 1. Padding is "same" with
//! zeros: `pad = dilation·(k−1)/2` and output extents are `ceil(n/stride)`.

use rayon::prelude::*;

use crate::tensor::Real;

/// Rows of the im2col matrix per GEMM call; sized to keep a block in L2.
const ROW_BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub dilation: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

impl ConvGeometry {
    pub fn output(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = self.input[a].div_ceil(self.stride[a]);
        }
        out
    }

    fn pad(&self, axis: usize) -> isize {
        (self.dilation[axis] * (self.kernel[axis] - 1) / 2) as isize
    }

    /// Length of one unrolled receptive field (`k0·k1·k2·cin`).
    pub fn patch_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.cin
    }

    pub fn out_positions(&self) -> usize {
        self.output().iter().product()
    }

    pub fn in_positions(&self) -> usize {
        self.input.iter().product()
    }

    /// Input coordinate sampled by output `o` at tap `t` along `axis`.
    #[inline]
    fn source(&self, axis: usize, o: usize, t: usize) -> Option<usize> {
        let s = (o * self.stride[axis]) as isize - self.pad(axis)
            + (t * self.dilation[axis]) as isize;
        (s >= 0 && (s as usize) < self.input[axis]).then_some(s as usize)
    }

    /// Visits every (output position, tap) pair that lands inside the input.
    /// The callback gets the im2col row, the column offset of the tap and the
    /// flat input position.
    fn for_each_tap(&self, rows: std::ops::Range<usize>, mut f: impl FnMut(usize, usize, usize)) {
        let [_, o1, o2] = self.output();
        let [k0, k1, k2] = self.kernel;
        let [_, i1, i2] = self.input;
        for p in rows {
            let a0 = p / (o1 * o2);
            let a1 = (p / o2) % o1;
            let a2 = p % o2;
            for t0 in 0..k0 {
                let Some(s0) = self.source(0, a0, t0) else { continue };
                for t1 in 0..k1 {
                    let Some(s1) = self.source(1, a1, t1) else { continue };
                    for t2 in 0..k2 {
                        let Some(s2) = self.source(2, a2, t2) else { continue };
                        let tap = (t0 * k1 + t1) * k2 + t2;
                        f(p, tap * self.cin, (s0 * i1 + s1) * i2 + s2);
                    }
                }
            }
        }
    }
}

/// Unrolls receptive fields of `rows` into `col` (`rows × patch_len`).
/// Every element of `col` is written; out-of-image taps become zero.
fn im2col<T: Real>(geo: &ConvGeometry, x: &[T], rows: std::ops::Range<usize>, col: &mut [T]) {
    let cin = geo.cin;
    let [_, o1, o2] = geo.output();
    let [k0, k1, k2] = geo.kernel;
    let [_, i1, i2] = geo.input;
    for (p, dst) in rows.zip(col.chunks_exact_mut(geo.patch_len())) {
        let (a0, a1, a2) = (p / (o1 * o2), (p / o2) % o1, p % o2);
        let mut slots = dst.chunks_exact_mut(cin);
        for t0 in 0..k0 {
            let s0 = geo.source(0, a0, t0);
            for t1 in 0..k1 {
                let s1 = geo.source(1, a1, t1);
                for t2 in 0..k2 {
                    let slot = slots.next().unwrap();
                    match (s0, s1, geo.source(2, a2, t2)) {
                        (Some(s0), Some(s1), Some(s2)) => {
                            let src = (s0 * i1 + s1) * i2 + s2;
                            slot.copy_from_slice(&x[src * cin..(src + 1) * cin]);
                        }
                        _ => slot.fill(T::zero()),
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(geo: &ConvGeometry, col: &[T], rows: std::ops::Range<usize>, dx: &mut [T]) {
    let k = geo.patch_len();
    let cin = geo.cin;
    let first = rows.start;
    geo.for_each_tap(rows, |p, off, src| {
        let from = (p - first) * k + off;
        for (d, &c) in dx[src * cin..(src + 1) * cin]
            .iter_mut()
            .zip(&col[from..from + cin])
        {
            *d += c;
        }
    });
}

/// Fixed partition of output rows. Independent of the thread count, so
/// block-wise reductions give identical results under any pool size.
fn row_blocks(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..n.div_ceil(ROW_BLOCK))
        .map(|b| b * ROW_BLOCK..((b + 1) * ROW_BLOCK).min(n))
        .collect()
}

/// Forward convolution. `weight` is laid out `k0×k1×k2×cin×cout`.
pub fn conv_forward<T: Real>(geo: &ConvGeometry, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let k = geo.patch_len();
    let n = geo.cout;
    let positions = geo.out_positions();
    let mut out = vec![T::zero(); positions * n];
    out.par_chunks_mut(ROW_BLOCK * n)
        .zip(row_blocks(positions))
        .for_each_init(
            || vec![T::zero(); ROW_BLOCK * k],
            |col, (y, rows)| {
                let m = rows.len();
                let col = &mut col[..m * k];
                im2col(geo, x, rows, col);
                for row in y.chunks_exact_mut(n) {
                    row.copy_from_slice(bias);
                }
                T::gemm(m, k, n, col, k, 1, weight, n, 1, T::one(), y, n, 1);
            },
        );
    out
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Backward convolution given upstream gradient `dy` (`positions×cout`).
pub fn conv_backward<T: Real>(
    geo: &ConvGeometry,
    x: &[T],
    weight: &[T],
    dy: &[T],
    need_input: bool,
) -> ConvGrads<T> {
    let k = geo.patch_len();
    let n = geo.cout;
    let positions = geo.out_positions();

    let mut db = vec![T::zero(); n];
    for row in dy.chunks_exact(n) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }

    // With unit stride and symmetric padding, dx is the convolution of dy
    // with the tap-flipped, transposed kernel.
    let transposed = need_input && geo.stride == [1; 3];
    let dx_direct = transposed.then(|| {
        let taps = geo.kernel.iter().product::<usize>();
        let (ci, co) = (geo.cin, geo.cout);
        let mut flipped = vec![T::zero(); weight.len()];
        for t in 0..taps {
            let src = &weight[t * ci * co..(t + 1) * ci * co];
            let dst = &mut flipped[(taps - 1 - t) * ci * co..(taps - t) * ci * co];
            for i in 0..ci {
                for o in 0..co {
                    dst[o * ci + i] = src[i * co + o];
                }
            }
        }
        let back = ConvGeometry {
            cin: co,
            cout: ci,
            ..*geo
        };
        conv_forward(&back, dy, &flipped, &vec![T::zero(); ci])
    });
    let need_dcol = need_input && !transposed;

    // Per block: colᵀ·dy and, if wanted, dcol = dy·wᵀ. Both are reduced
    // below in block order.
    let partial: Vec<(Vec<T>, Option<Vec<T>>)> = row_blocks(positions)
        .into_par_iter()
        .map_init(Vec::new, |buf, rows| {
            let m = rows.len();
            buf.resize(ROW_BLOCK * k, T::zero());
            let col = &mut buf[..m * k];
            im2col(geo, x, rows.clone(), col);
            let mut dw = vec![T::zero(); k * n];
            let dy_rows = &dy[rows.start * n..rows.end * n];
            T::gemm(k, m, n, col, 1, k, dy_rows, n, 1, T::zero(), &mut dw, n, 1);
            let dcol = need_dcol.then(|| {
                let mut dcol = vec![T::zero(); m * k];
                T::gemm(m, n, k, dy_rows, n, 1, weight, 1, n, T::zero(), &mut dcol, k, 1);
                dcol
            });
            (dw, dcol)
        })
        .collect();

    let mut dw = vec![T::zero(); k * n];
    let mut dx = if need_dcol {
        Some(vec![T::zero(); geo.in_positions() * geo.cin])
    } else {
        dx_direct
    };
    for ((w, dcol), rows) in partial.into_iter().zip(row_blocks(positions)) {
        dw.iter_mut().zip(&w).for_each(|(a, &b)| *a += b);
        if let (Some(dx), Some(dcol)) = (dx.as_mut(), dcol) {
            col2im(geo, &dcol, rows, dx);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution for cross-checking im2col.
    fn naive(geo: &ConvGeometry, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let out = geo.output();
        let mut y = Vec::new();
        for a0 in 0..out[0] {
            for a1 in 0..out[1] {
                for a2 in 0..out[2] {
                    for co in 0..geo.cout {
                        let mut acc = b[co];
                        for t0 in 0..geo.kernel[0] {
                            for t1 in 0..geo.kernel[1] {
                                for t2 in 0..geo.kernel[2] {
                                    let (Some(s0), Some(s1), Some(s2)) = (
                                        geo.source(0, a0, t0),
                                        geo.source(1, a1, t1),
                                        geo.source(2, a2, t2),
                                    ) else {
                                        continue;
                                    };
                                    for ci in 0..geo.cin {
                                        let xi = ((s0 * geo.input[1] + s1) * geo.input[2] + s2)
                                            * geo.cin
                                            + ci;
                                        let wi = ((((t0 * geo.kernel[1] + t1) * geo.kernel[2]
                                            + t2)
                                            * geo.cin
                                            + ci)
                                            * geo.cout)
                                            + co;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        y.push(acc);
                    }
                }
            }
        }
        y
    }

    #[test]
    fn im2col_matches_nested_loops() {
        let geo = ConvGeometry {
            input: [7, 6, 3],
            kernel: [3, 5, 3],
            stride: [2, 1, 1],
            dilation: [1, 2, 1],
            cin: 2,
            cout: 3,
        };
        let x: Vec<f64> = (0..geo.in_positions() * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..geo.patch_len() * 3).map(|i| (i as f64 * 0.11).cos()).collect();
        let b = vec![0.1, -0.2, 0.3];
        let fast = conv_forward(&geo, &x, &w, &b);
        let slow = naive(&geo, &x, &w, &b);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// `<conv(x), dy> = <x, dx>` for a bias-free convolution.
    #[test]
    fn input_gradient_is_the_adjoint() {
        for (stride, dilation, kernel) in [([1, 1, 1], [1, 2, 1], [3, 3, 3]), ([2, 2, 1], [1, 1, 1], [5, 5, 1])] {
            let geo = ConvGeometry {
                input: [7, 9, if kernel[2] == 3 { 4 } else { 1 }],
                kernel,
                stride,
                dilation,
                cin: 3,
                cout: 2,
            };
            let x: Vec<f64> = (0..geo.in_positions() * 3).map(|i| (i as f64 * 0.37).sin()).collect();
            let w: Vec<f64> = (0..geo.patch_len() * 2).map(|i| (i as f64 * 0.11).cos()).collect();
            let dy: Vec<f64> = (0..geo.out_positions() * 2).map(|i| (i as f64 * 0.23).sin()).collect();
            let y = conv_forward(&geo, &x, &w, &[0.0, 0.0]);
            let dx = conv_backward(&geo, &x, &w, &dy, true).input.unwrap();
            let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{stride:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn output_extent_is_ceil() {
        let geo = ConvGeometry {
            input: [9, 8, 1],
            kernel: [5, 5, 1],
            stride: [2, 2, 1],
            dilation: [1; 3],
            cin: 1,
            cout: 1,
        };
        assert_eq!(geo.output(), [5, 4, 1]);
    }
}
