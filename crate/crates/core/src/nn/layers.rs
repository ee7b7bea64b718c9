//! Batched layer kernels over NHWC activations.
//!
//! Convolutions lower to GEMM through im2col. Column order inside a patch is
//! `(ky, kx, channel)`, matching the `[filters, ky, kx, channels]` weight layout,
//! so a weight tensor is directly a `filters x patch` matrix.

use super::arch::{KERNEL, POOL};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub filters: usize,
}

impl ConvGeom {
    pub fn oh(&self) -> usize {
        self.h - KERNEL + 1
    }

    pub fn ow(&self) -> usize {
        self.w - KERNEL + 1
    }

    /// Output positions across the batch (GEMM rows).
    pub fn rows(&self) -> usize {
        self.batch * self.oh() * self.ow()
    }

    pub fn patch(&self) -> usize {
        KERNEL * KERNEL * self.c
    }
}

fn im2col<T: Scalar>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, span) = (g.patch(), KERNEL * g.c);
    let mut cols = vec![T::zero(); g.rows() * k];
    let mut row = 0;
    for n in 0..g.batch {
        for oy in 0..g.oh() {
            for ox in 0..g.ow() {
                let dst = &mut cols[row * k..(row + 1) * k];
                for ky in 0..KERNEL {
                    // the kx run is contiguous in NHWC
                    let src = ((n * g.h + oy + ky) * g.w + ox) * g.c;
                    dst[ky * span..(ky + 1) * span].copy_from_slice(&input[src..src + span]);
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(dcols: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, span) = (g.patch(), KERNEL * g.c);
    let mut dinput = vec![T::zero(); g.batch * g.h * g.w * g.c];
    let mut row = 0;
    for n in 0..g.batch {
        for oy in 0..g.oh() {
            for ox in 0..g.ow() {
                let src = &dcols[row * k..(row + 1) * k];
                for ky in 0..KERNEL {
                    let dst = ((n * g.h + oy + ky) * g.w + ox) * g.c;
                    for (d, &s) in dinput[dst..dst + span].iter_mut().zip(&src[ky * span..(ky + 1) * span]) {
                        *d = *d + s;
                    }
                }
                row += 1;
            }
        }
    }
    dinput
}

/// Returns `(output, im2col buffer)`; the buffer is kept for the backward pass.
pub(crate) fn conv_forward<T: Scalar>(input: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> (Vec<T>, Vec<T>) {
    let cols = im2col(input, g);
    let (m, k, f) = (g.rows(), g.patch(), g.filters);
    let mut out: Vec<T> = bias.iter().copied().cycle().take(m * f).collect();
    T::gemm(
        m,
        k,
        f,
        (&cols, k as isize, 1),
        (weight, 1, k as isize),
        T::one(),
        (&mut out, f as isize, 1),
    );
    (out, cols)
}

/// Returns `(d_weight, d_bias, d_input)`; `d_input` only when requested.
pub(crate) fn conv_backward<T: Scalar>(
    dout: &[T],
    cols: &[T],
    weight: &[T],
    g: &ConvGeom,
    need_input_grad: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let (m, k, f) = (g.rows(), g.patch(), g.filters);
    let mut dweight = vec![T::zero(); f * k];
    T::gemm(
        f,
        m,
        k,
        (dout, 1, f as isize),
        (cols, k as isize, 1),
        T::zero(),
        (&mut dweight, k as isize, 1),
    );
    let dbias = column_sums(dout, f);
    let dinput = need_input_grad.then(|| {
        let mut dcols = vec![T::zero(); m * k];
        T::gemm(
            m,
            f,
            k,
            (dout, f as isize, 1),
            (weight, k as isize, 1),
            T::zero(),
            (&mut dcols, k as isize, 1),
        );
        col2im(&dcols, g)
    });
    (dweight, dbias, dinput)
}

fn column_sums<T: Scalar>(m: &[T], cols: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); cols];
    for row in m.chunks_exact(cols) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s = *s + v;
        }
    }
    sums
}

/// 2x2 stride-2 max pooling. Returns `(output, argmax)` where `argmax[o]` is
/// the flat input index chosen for output `o`; ties go to the first maximum
/// in row-major window order.
pub(crate) fn maxpool_forward<T: Scalar>(input: &[T], batch: usize, h: usize, w: usize, c: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / POOL, w / POOL);
    let mut out = Vec::with_capacity(batch * oh * ow * c);
    let mut argmax = Vec::with_capacity(out.capacity());
    for n in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = ((n * h + oy * POOL) * w + ox * POOL) * c + ch;
                    for dy in 0..POOL {
                        for dx in 0..POOL {
                            let i = ((n * h + oy * POOL + dy) * w + ox * POOL + dx) * c + ch;
                            if input[i] > input[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(input[best]);
                    argmax.push(best as u32);
                }
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool_backward<T: Scalar>(dout: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut dinput = vec![T::zero(); input_len];
    for (&g, &i) in dout.iter().zip(argmax) {
        dinput[i as usize] = dinput[i as usize] + g;
    }
    dinput
}

pub(crate) fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

pub(crate) fn relu_backward<T: Scalar>(dout: &[T], input: &[T]) -> Vec<T> {
    dout.iter()
        .zip(input)
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

/// `out = x * W^T + b` for `x: batch x n`, `W: units x n`.
pub(crate) fn dense_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], batch: usize, n: usize, units: usize) -> Vec<T> {
    let mut out: Vec<T> = bias.iter().copied().cycle().take(batch * units).collect();
    T::gemm(
        batch,
        n,
        units,
        (x, n as isize, 1),
        (weight, 1, n as isize),
        T::one(),
        (&mut out, units as isize, 1),
    );
    out
}

pub(crate) fn dense_backward<T: Scalar>(
    dout: &[T],
    x: &[T],
    weight: &[T],
    batch: usize,
    n: usize,
    units: usize,
    need_input_grad: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let mut dweight = vec![T::zero(); units * n];
    T::gemm(
        units,
        batch,
        n,
        (dout, 1, units as isize),
        (x, n as isize, 1),
        T::zero(),
        (&mut dweight, n as isize, 1),
    );
    let dbias = column_sums(dout, units);
    let dx = need_input_grad.then(|| {
        let mut dx = vec![T::zero(); batch * n];
        T::gemm(
            batch,
            units,
            n,
            (dout, units as isize, 1),
            (weight, n as isize, 1),
            T::zero(),
            (&mut dx, n as isize, 1),
        );
        dx
    });
    (dweight, dbias, dx)
}
