//! Float kernels shared by forward and backward passes.
//!
//! Convolutions lower to GEMM through an im2col buffer laid out
//! `[batch * out_h * out_w, kh * kw * c_in]`, which multiplied by the
//! `(kh, kw, c_in, c_out)` weight tensor yields NHWC output directly.

use num_traits::Float;

use super::network::{ConvGeom, PoolGeom};
use crate::tensor::Element;

/// Float element usable by the float network (f32 for training, f64 for
/// gradient checking).
pub trait Scalar: Float + Element + std::fmt::Debug + std::iter::Sum {
    fn from_f64(v: f64) -> Self;

    /// `C = alpha * A * B + beta * C` over strided row/column views.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], rsa: isize, csa: isize, b: &[Self], rsb: isize, csb: isize, beta: Self, c: &mut [Self], rsc: isize, csc: isize);
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn gemm_raw(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], rsa: isize, csa: isize, b: &[Self], rsb: isize, csb: isize, beta: Self, c: &mut [Self], rsc: isize, csc: isize) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(span(m, k, rsa, csa) <= a.len(), "gemm: A out of bounds");
                assert!(span(k, n, rsb, csb) <= b.len(), "gemm: B out of bounds");
                assert!(span(m, n, rsc, csc) <= c.len(), "gemm: C out of bounds");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: all three views were bounds-checked above and
                // `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta,
                        c.as_mut_ptr(), rsc, csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major `[m, k] x [k, n] (+)= [m, n]`; `c` rows may be wider than `n`
/// (`ldc`), which lets fire modules write into a slice of the concat.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], ldc: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, c, ldc as isize, 1);
}

/// `[k, m]^T x [k, n] (+)= [m, n]`
#[allow(clippy::too_many_arguments)]
pub fn matmul_at_b<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], lda: usize, b: &[T], ldb: usize, c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(m, k, n, T::one(), a, 1, lda as isize, b, ldb as isize, 1, beta, c, n as isize, 1);
}

/// `[m, k] x [n, k]^T (+)= [m, n]`
#[allow(clippy::too_many_arguments)]
pub fn matmul_a_bt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], lda: usize, b: &[T], c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(m, k, n, T::one(), a, lda as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

pub fn im2col<T: Scalar>(x: &[T], batch: usize, g: &ConvGeom) -> Vec<T> {
    let k = g.k();
    let rows = batch * g.out_h * g.out_w;
    let mut cols = vec![T::zero(); rows * k];
    let in_item = g.in_h * g.in_w * g.in_c;
    let mut row = 0;
    for b in 0..batch {
        let xb = &x[b * in_item..(b + 1) * in_item];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * k..(row + 1) * k];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.in_w + ix as usize) * g.in_c;
                        let off = (ky * g.kw + kx) * g.in_c;
                        dst[off..off + g.in_c].copy_from_slice(&xb[src..src + g.in_c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-adds an im2col-shaped gradient back onto the input layout.
pub fn col2im<T: Scalar>(cols: &[T], batch: usize, g: &ConvGeom) -> Vec<T> {
    let k = g.k();
    let in_item = g.in_h * g.in_w * g.in_c;
    let mut dx = vec![T::zero(); batch * in_item];
    let mut row = 0;
    for b in 0..batch {
        let dxb = &mut dx[b * in_item..(b + 1) * in_item];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src = &cols[row * k..(row + 1) * k];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.in_w + ix as usize) * g.in_c;
                        let off = (ky * g.kw + kx) * g.in_c;
                        for c in 0..g.in_c {
                            dxb[dst + c] = dxb[dst + c] + src[off + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

/// Conv forward into `out` (row width `ldc`, starting at the caller's
/// channel offset). Applies bias and relu.
pub fn conv_forward<T: Scalar>(x: &[T], batch: usize, g: &ConvGeom, w: &[T], bias: &[T], out: &mut [T], ldc: usize) {
    let rows = batch * g.out_h * g.out_w;
    let k = g.k();
    if g.is_pointwise() {
        matmul(rows, k, g.out_c, x, w, out, ldc, false);
    } else {
        let cols = im2col(x, batch, g);
        matmul(rows, k, g.out_c, &cols, w, out, ldc, false);
    }
    for r in 0..rows {
        let row = &mut out[r * ldc..r * ldc + g.out_c];
        for (v, &b) in row.iter_mut().zip(bias) {
            let s = *v + b;
            *v = if g.relu && s < T::zero() { T::zero() } else { s };
        }
    }
}

/// Given upstream gradient `dy` (already relu-masked, row width `ldy`),
/// accumulates weight/bias gradients and returns the input gradient when
/// `want_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    dy: &[T],
    ldy: usize,
    dw: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    let rows = batch * g.out_h * g.out_w;
    let k = g.k();
    for r in 0..rows {
        for (acc, &d) in db.iter_mut().zip(&dy[r * ldy..r * ldy + g.out_c]) {
            *acc = *acc + d;
        }
    }
    if g.is_pointwise() {
        matmul_at_b(k, rows, g.out_c, x, k, dy, ldy, dw, true);
        if !want_dx {
            return None;
        }
        let mut dx = vec![T::zero(); rows * k];
        matmul_a_bt(rows, g.out_c, k, dy, ldy, w, &mut dx, false);
        Some(dx)
    } else {
        let cols = im2col(x, batch, g);
        matmul_at_b(k, rows, g.out_c, &cols, k, dy, ldy, dw, true);
        if !want_dx {
            return None;
        }
        let mut dcols = vec![T::zero(); rows * k];
        matmul_a_bt(rows, g.out_c, k, dy, ldy, w, &mut dcols, false);
        Some(col2im(&dcols, batch, g))
    }
}

/// Returns pooled values and, per output, the flat input index of the max
/// (first occurrence on ties).
pub fn maxpool_forward<T: Scalar>(x: &[T], batch: usize, g: &PoolGeom) -> (Vec<T>, Vec<u32>) {
    let out_len = batch * g.out_h * g.out_w * g.c;
    let mut y = Vec::with_capacity(out_len);
    let mut arg = Vec::with_capacity(out_len);
    let in_item = g.in_h * g.in_w * g.c;
    for b in 0..batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                for c in 0..g.c {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0;
                    for ky in 0..g.pool {
                        for kx in 0..g.pool {
                            let i = b * in_item + ((oy * g.stride + ky) * g.in_w + ox * g.stride + kx) * g.c + c;
                            if x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    y.push(best);
                    arg.push(best_i as u32);
                }
            }
        }
    }
    (y, arg)
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
