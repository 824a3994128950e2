//! Dense kernels behind the tape primitives.

use crate::error::Result;
use crate::linalg;

use super::tensor::{broadcast_shape, broadcast_strides, gather_offsets, C64};

/// Pairing of batch indices when two batched operands broadcast.
pub(crate) struct BatchMap {
    pub out: Vec<usize>,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

pub(crate) fn batch_map(abatch: &[usize], bbatch: &[usize]) -> Result<BatchMap> {
    let out = broadcast_shape(abatch, bbatch)?;
    let a = gather_offsets(&out, &broadcast_strides(abatch, &out));
    let b = gather_offsets(&out, &broadcast_strides(bbatch, &out));
    Ok(BatchMap { out, a, b })
}

/// `C = A B + beta C` for real row-major slices with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + k.saturating_sub(1) * csa + usize::from(k > 0));
    debug_assert!(b.len() >= k.saturating_sub(1) * rsb + (n - 1) * csb + usize::from(k > 0));
    assert!(c.len() >= m * n);
    // SAFETY: the extents above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn zgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[C64],
    (rsa, csa): (usize, usize),
    b: &[C64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [C64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    // SAFETY: Complex<f64> is repr(C) {re, im}, layout-identical to [f64; 2];
    // strided extents stay within the slices as for `dgemm`.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            rsa as isize,
            csa as isize,
            b.as_ptr() as *const [f64; 2],
            rsb as isize,
            csb as isize,
            [beta, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
}

/// Hermitian part plus relative ridge, factored. `None` if not PD.
pub(crate) fn regularized_cholesky(b: &[C64], d: usize) -> Option<Vec<C64>> {
    let mut h = hermitian_part(b, d);
    linalg::add_ridge(&mut h, d, linalg::RIDGE);
    linalg::cholesky(&h, d)
}

pub(crate) fn hermitian_part(b: &[C64], d: usize) -> Vec<C64> {
    let mut h = b.to_vec();
    for i in 0..d {
        h[i * d + i].im = 0.0;
        for j in i + 1..d {
            let v = (b[i * d + j] + b[j * d + i].conj()) * 0.5;
            h[i * d + j] = v;
            h[j * d + i] = v.conj();
        }
    }
    h
}

/// Maps a cotangent of the regularized matrix back to the raw input:
/// adds the ridge path and projects onto Hermitian matrices.
pub(crate) fn ridge_adjoint(g: &mut [C64], d: usize) {
    let tr: f64 = (0..d).map(|i| g[i * d + i].re).sum();
    let load = linalg::RIDGE / d as f64 * tr;
    for i in 0..d {
        g[i * d + i].re += load;
    }
    for i in 0..d {
        g[i * d + i].im = 0.0;
        for j in i + 1..d {
            let v = (g[i * d + j] + g[j * d + i].conj()) * 0.5;
            g[i * d + j] = v;
            g[j * d + i] = v.conj();
        }
    }
}

/// Forward tanh recurrence over (batch, time, hidden) inputs.
pub(crate) fn rnn_forward(p: &[f64], w: &[f64], batch: usize, time: usize, h: usize, reverse: bool) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    let mut acc = vec![0.0; batch * h];
    let row = time * h;
    let mut prev: Option<usize> = None;
    for step in 0..time {
        let t = if reverse { time - 1 - step } else { step };
        for bi in 0..batch {
            acc[bi * h..(bi + 1) * h].copy_from_slice(&p[bi * row + t * h..bi * row + (t + 1) * h]);
        }
        if let Some(tp) = prev {
            // acc += h_prev W, h_prev rows live at stride `row` inside `out`
            dgemm(batch, h, h, &out[tp * h..], (row, 1), w, (h, 1), 1.0, &mut acc);
        }
        for bi in 0..batch {
            for j in 0..h {
                out[bi * row + t * h + j] = acc[bi * h + j].tanh();
            }
        }
        prev = Some(t);
    }
    out
}

/// Backpropagation through time for [`rnn_forward`]. Returns (dP, dW).
#[allow(clippy::too_many_arguments)]
pub(crate) fn rnn_backward(
    g: &[f64],
    out: &[f64],
    w: &[f64],
    batch: usize,
    time: usize,
    h: usize,
    reverse: bool,
) -> (Vec<f64>, Vec<f64>) {
    let row = time * h;
    let mut dp = vec![0.0; out.len()];
    let mut dw = vec![0.0; h * h];
    let mut carry = vec![0.0; batch * h];
    let mut da = vec![0.0; batch * h];
    for step in (0..time).rev() {
        let t = if reverse { time - 1 - step } else { step };
        for bi in 0..batch {
            for j in 0..h {
                let idx = bi * row + t * h + j;
                let y = out[idx];
                let v = (g[idx] + carry[bi * h + j]) * (1.0 - y * y);
                da[bi * h + j] = v;
                dp[idx] = v;
            }
        }
        if step > 0 {
            let tp = if reverse { t + 1 } else { t - 1 };
            // dW += h_prev^T da
            dgemm(h, batch, h, &out[tp * h..], (1, row), &da, (h, 1), 1.0, &mut dw);
            // carry = da W^T
            dgemm(batch, h, h, &da, (h, 1), w, (1, h), 0.0, &mut carry);
        }
    }
    (dp, dw)
}
