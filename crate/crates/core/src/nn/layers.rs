//! Forward and reverse kernels of the individual encoder layers.
//!
//! Feature maps are `[channels, height, width]`, row-major. Reverse kernels
//! accumulate (`+=`) into their gradient outputs.

use alloc::vec::Vec;

use super::{gemm, Real};
use crate::{Error, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Unrolls 3x3 zero-padded neighbourhoods: `cols[(c*9 + ky*3 + kx), y*w + x]`.
pub fn im2col3x3<T: Real>(input: &[T], cin: usize, h: usize, w: usize, cols: &mut Vec<T>) {
    let hw = h * w;
    cols.clear();
    cols.resize(cin * 9 * hw, T::zero());
    for c in 0..cin {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3x3`], accumulating into `grad_input`.
pub fn col2im3x3<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, grad_input: &mut [T]) {
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut grad_input[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let (d, s) = match kx {
                        0 => (&mut dst[..w - 1], &src[1..]),
                        1 => (&mut dst[..], &src[..]),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a = *a + b;
                    }
                }
            }
        }
    }
}

/// Same-padded 3x3 convolution (cross-correlation), stride 1.
/// `weight` is `[cout, cin, 3, 3]`; returns `[cout, h, w]`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_forward<T: Real>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
    cols: &mut Vec<T>,
) -> Vec<T> {
    let hw = h * w;
    im2col3x3(input, cin, h, w, cols);
    let mut out = Vec::with_capacity(cout * hw);
    for &b in bias {
        out.extend(core::iter::repeat(b).take(hw));
    }
    gemm(
        cout,
        cin * 9,
        hw,
        T::one(),
        (weight, cin * 9, 1),
        (cols, hw, 1),
        T::one(),
        &mut out,
        hw,
        1,
    );
    out
}

/// Reverse pass of [`conv3x3_forward`]. `cols` must hold the unrolled input;
/// `grad_input` is skipped when `None`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<T: Real>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    grad_input: Option<&mut [T]>,
    scratch: &mut Vec<T>,
) {
    let hw = h * w;
    let k = cin * 9;
    // dW += dOut * cols^T
    gemm(
        cout,
        hw,
        k,
        T::one(),
        (grad_out, hw, 1),
        (cols, 1, hw),
        T::one(),
        grad_weight,
        k,
        1,
    );
    for (co, gb) in grad_bias.iter_mut().enumerate() {
        let s: f64 = grad_out[co * hw..(co + 1) * hw]
            .iter()
            .map(|v| v.as_f64())
            .sum();
        *gb = *gb + T::from_f64_lossy(s);
    }
    if let Some(gi) = grad_input {
        scratch.clear();
        scratch.resize(k * hw, T::zero());
        // dcols = W^T * dOut
        gemm(
            k,
            cout,
            hw,
            T::one(),
            (weight, 1, k),
            (grad_out, hw, 1),
            T::zero(),
            scratch,
            hw,
            1,
        );
        col2im3x3(scratch, cin, h, w, gi);
    }
}

pub fn relu_forward<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` by `output > 0`, where `output` is the ReLU output.
pub fn relu_backward<T: Real>(output: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 stride-2 max pool (floor on odd sizes). Returns the pooled map and,
/// per output, the flat input index of the winner; ties go to the first
/// element in row-major window order.
pub fn maxpool2x2_forward<T: Real>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best_i = base + 2 * y * w + 2 * x;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    (out, arg)
}

/// Routes each pooled gradient to its winning input position.
pub fn maxpool2x2_backward<T: Real>(argmax: &[u32], grad_out: &[T], grad_input: &mut [T]) {
    for (&i, &g) in argmax.iter().zip(grad_out) {
        grad_input[i as usize] = grad_input[i as usize] + g;
    }
}

/// Mean over the spatial positions of each channel.
pub fn gap_forward<T: Real>(input: &[T], c: usize, hw: usize) -> Vec<T> {
    (0..c)
        .map(|ch| {
            let s: f64 = input[ch * hw..(ch + 1) * hw]
                .iter()
                .map(|v| v.as_f64())
                .sum();
            T::from_f64_lossy(s / hw as f64)
        })
        .collect()
}

pub fn gap_backward<T: Real>(grad_out: &[T], hw: usize, grad_input: &mut [T]) {
    let scale = T::from_f64_lossy(1.0 / hw as f64);
    for (ch, &g) in grad_out.iter().enumerate() {
        for v in &mut grad_input[ch * hw..(ch + 1) * hw] {
            *v = *v + g * scale;
        }
    }
}

/// `y = W x + b` with `W` as `[out, in]`.
pub fn linear_forward<T: Real>(x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (n_out, n_in) = (bias.len(), x.len());
    (0..n_out)
        .map(|o| {
            let row = &weight[o * n_in..(o + 1) * n_in];
            let s: f64 = row
                .iter()
                .zip(x)
                .map(|(a, b)| a.as_f64() * b.as_f64())
                .sum();
            T::from_f64_lossy(s + bias[o].as_f64())
        })
        .collect()
}

/// Accumulates `dW += g x^T`, `db += g` and, if requested, `dx += W^T g`.
pub fn linear_backward<T: Real>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    grad_x: Option<&mut [T]>,
) {
    let n_in = x.len();
    for (o, &g) in grad_out.iter().enumerate() {
        grad_bias[o] = grad_bias[o] + g;
        for (gw, &xi) in grad_weight[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *gw = *gw + g * xi;
        }
    }
    if let Some(gx) = grad_x {
        for (i, gxi) in gx.iter_mut().enumerate() {
            let s: f64 = grad_out
                .iter()
                .enumerate()
                .map(|(o, g)| g.as_f64() * weight[o * n_in + i].as_f64())
                .sum();
            *gxi = *gxi + T::from_f64_lossy(s);
        }
    }
}

/// Smallest pre-normalization norm accepted by [`l2_normalize_forward`].
pub const MIN_NORM: f64 = 1e-12;

/// Returns `(z / |z|, |z|)`; a norm below [`MIN_NORM`] is an error.
pub fn l2_normalize_forward<T: Real>(z: &[T], row: usize) -> Result<(Vec<T>, f64)> {
    let norm = z
        .iter()
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if !(norm >= MIN_NORM) {
        return Err(Error::DegenerateNorm { row, norm });
    }
    Ok((
        z.iter()
            .map(|v| T::from_f64_lossy(v.as_f64() / norm))
            .collect(),
        norm,
    ))
}

/// `dz = (g - (g . e) e) / |z|` for unit output `e`.
pub fn l2_normalize_backward<T: Real>(e: &[T], norm: f64, grad_out: &[T]) -> Vec<T> {
    let dot: f64 = e
        .iter()
        .zip(grad_out)
        .map(|(a, b)| a.as_f64() * b.as_f64())
        .sum();
    e.iter()
        .zip(grad_out)
        .map(|(ei, gi)| T::from_f64_lossy((gi.as_f64() - dot * ei.as_f64()) / norm))
        .collect()
}
