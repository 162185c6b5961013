//! Raw forward/backward kernels on NCHW buffers.
//!
//! Work is split per batch item; per-item partial sums are reduced in item
//! order so results do not depend on the number of worker threads.

use rayon::prelude::*;

use super::tensor::{gemm, Layout, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    /// Odd square kernel side; padding is `k / 2` on every edge.
    pub k: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

fn im2col<T: Scalar>(input: &[T], d: &ConvDims, col: &mut [T]) {
    let (h, w, k, p) = (d.h as isize, d.w as isize, d.k, d.pad());
    let hw = d.h * d.w;
    for ci in 0..d.cin {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let (dy, dx) = (ky as isize - p, kx as isize - p);
                for y in 0..h {
                    let sy = y + dy;
                    let out = &mut row[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for x in 0..w {
                        let sx = x + dx;
                        out[x as usize] = if sx < 0 || sx >= w { T::zero() } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(col: &[T], d: &ConvDims, grad_in: &mut [T]) {
    let (h, w, k, p) = (d.h as isize, d.w as isize, d.k, d.pad());
    let hw = d.h * d.w;
    for ci in 0..d.cin {
        let plane = &mut grad_in[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let (dy, dx) = (ky as isize - p, kx as isize - p);
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x + dx;
                        if sx >= 0 && sx < w {
                            plane[(sy * w + sx) as usize] += row[(y * w + x) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 same-padded cross-correlation.
pub(crate) fn conv2d_forward<T: Scalar>(input: &[T], kernel: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let hw = d.h * d.w;
    let mut out = vec![T::zero(); d.batch * d.cout * hw];
    out.par_chunks_mut(d.cout * hw)
        .zip(input.par_chunks(d.cin * hw))
        .for_each(|(out_b, in_b)| {
            let mut col = vec![T::zero(); d.col_rows() * hw];
            im2col(in_b, d, &mut col);
            for (co, plane) in out_b.chunks_mut(hw).enumerate() {
                plane.fill(bias[co]);
            }
            gemm(
                kernel,
                Layout::row_major(d.cout, d.col_rows()),
                &col,
                Layout::row_major(d.col_rows(), hw),
                T::one(),
                out_b,
                Layout::row_major(d.cout, hw),
            );
        });
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    d: &ConvDims,
    need_input: bool,
) -> ConvGrads<T> {
    let hw = d.h * d.w;
    let kn = d.cout * d.col_rows();
    let partial: Vec<(Vec<T>, Option<Vec<T>>)> = input
        .par_chunks(d.cin * hw)
        .zip(grad_out.par_chunks(d.cout * hw))
        .map(|(in_b, go_b)| {
            let mut col = vec![T::zero(); d.col_rows() * hw];
            im2col(in_b, d, &mut col);
            let mut dk = vec![T::zero(); kn];
            gemm(
                go_b,
                Layout::row_major(d.cout, hw),
                &col,
                Layout::transposed(d.col_rows(), hw),
                T::zero(),
                &mut dk,
                Layout::row_major(d.cout, d.col_rows()),
            );
            let din = need_input.then(|| {
                gemm(
                    kernel,
                    Layout::transposed(d.cout, d.col_rows()),
                    go_b,
                    Layout::row_major(d.cout, hw),
                    T::zero(),
                    &mut col,
                    Layout::row_major(d.col_rows(), hw),
                );
                let mut din = vec![T::zero(); d.cin * hw];
                col2im_add(&col, d, &mut din);
                din
            });
            (dk, din)
        })
        .collect();

    let mut dkernel = vec![T::zero(); kn];
    let mut dinput = need_input.then(|| Vec::with_capacity(input.len()));
    for (dk, din) in partial {
        dkernel.iter_mut().zip(&dk).for_each(|(a, &b)| *a += b);
        if let (Some(all), Some(din)) = (dinput.as_mut(), din) {
            all.extend_from_slice(&din);
        }
    }
    let mut dbias = vec![T::zero(); d.cout];
    for go_b in grad_out.chunks(d.cout * hw) {
        for (co, plane) in go_b.chunks(hw).enumerate() {
            dbias[co] += plane.iter().copied().sum::<T>();
        }
    }
    ConvGrads {
        input: dinput,
        kernel: dkernel,
        bias: dbias,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct UpDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    /// Input spatial size; output is `2h x 2w`.
    pub h: usize,
    pub w: usize,
}

/// Stride-2 2x2 transposed convolution, kernel laid out `[cin, cout, 2, 2]`.
pub(crate) fn tconv_forward<T: Scalar>(input: &[T], kernel: &[T], bias: &[T], d: &UpDims) -> Vec<T> {
    let hw = d.h * d.w;
    let (oh, ow) = (2 * d.h, 2 * d.w);
    let mut out = vec![T::zero(); d.batch * d.cout * oh * ow];
    out.par_chunks_mut(d.cout * oh * ow)
        .zip(input.par_chunks(d.cin * hw))
        .for_each(|(out_b, in_b)| {
            let mut y = vec![T::zero(); d.cout * 4 * hw];
            gemm(
                kernel,
                Layout::transposed(d.cin, d.cout * 4),
                in_b,
                Layout::row_major(d.cin, hw),
                T::zero(),
                &mut y,
                Layout::row_major(d.cout * 4, hw),
            );
            for co in 0..d.cout {
                let plane = &mut out_b[co * oh * ow..(co + 1) * oh * ow];
                for q in 0..4 {
                    let (dy, dx) = (q / 2, q % 2);
                    let src = &y[(co * 4 + q) * hw..][..hw];
                    for i in 0..d.h {
                        for j in 0..d.w {
                            plane[(2 * i + dy) * ow + 2 * j + dx] = src[i * d.w + j] + bias[co];
                        }
                    }
                }
            }
        });
    out
}

pub(crate) fn tconv_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    d: &UpDims,
    need_input: bool,
) -> ConvGrads<T> {
    let hw = d.h * d.w;
    let (oh, ow) = (2 * d.h, 2 * d.w);
    let kn = d.cin * d.cout * 4;
    let partial: Vec<ConvGrads<T>> = input
        .par_chunks(d.cin * hw)
        .zip(grad_out.par_chunks(d.cout * oh * ow))
        .map(|(in_b, go_b)| {
            let mut g = vec![T::zero(); d.cout * 4 * hw];
            let mut db = vec![T::zero(); d.cout];
            for co in 0..d.cout {
                let plane = &go_b[co * oh * ow..(co + 1) * oh * ow];
                db[co] = plane.iter().copied().sum();
                for q in 0..4 {
                    let (dy, dx) = (q / 2, q % 2);
                    let dst = &mut g[(co * 4 + q) * hw..][..hw];
                    for i in 0..d.h {
                        for j in 0..d.w {
                            dst[i * d.w + j] = plane[(2 * i + dy) * ow + 2 * j + dx];
                        }
                    }
                }
            }
            let mut dk = vec![T::zero(); kn];
            gemm(
                in_b,
                Layout::row_major(d.cin, hw),
                &g,
                Layout::transposed(d.cout * 4, hw),
                T::zero(),
                &mut dk,
                Layout::row_major(d.cin, d.cout * 4),
            );
            let din = need_input.then(|| {
                let mut din = vec![T::zero(); d.cin * hw];
                gemm(
                    kernel,
                    Layout::row_major(d.cin, d.cout * 4),
                    &g,
                    Layout::row_major(d.cout * 4, hw),
                    T::zero(),
                    &mut din,
                    Layout::row_major(d.cin, hw),
                );
                din
            });
            ConvGrads {
                input: din,
                kernel: dk,
                bias: db,
            }
        })
        .collect();
    let mut dkernel = vec![T::zero(); kn];
    let mut dbias = vec![T::zero(); d.cout];
    let mut dinput = need_input.then(|| Vec::with_capacity(input.len()));
    for ConvGrads {
        input: din,
        kernel: dk,
        bias: db,
    } in partial
    {
        dkernel.iter_mut().zip(&dk).for_each(|(a, &b)| *a += b);
        dbias.iter_mut().zip(&db).for_each(|(a, &b)| *a += b);
        if let (Some(all), Some(din)) = (dinput.as_mut(), din) {
            all.extend_from_slice(&din);
        }
    }
    ConvGrads {
        input: dinput,
        kernel: dkernel,
        bias: dbias,
    }
}

/// 2x2 max pool; returns values and the flat input index of each maximum
/// (first in row-major scan order on ties).
pub(crate) fn max_pool_forward<T: Scalar>(input: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let cells = [
                    base + 2 * i * w + 2 * j,
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ];
                let mut best = cells[0];
                for &c in &cells[1..] {
                    if input[c] > input[best] {
                        best = c;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
